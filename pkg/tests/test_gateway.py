import json

import pytest

from helpers import chain, envelope
from ledgerlab.contract import ContractInvocation, PermissionDenied, read_record
from ledgerlab.fixtures import file_bytes
from ledgerlab.gateway import (
    EmptyLedger,
    GatewayConfig,
    InsufficientEndorsements,
    ParseError,
    RecordFileInvalid,
    check_offchain,
    ingest_records,
    stats,
)
from ledgerlab.ledger import BlockStore
from ledgerlab.network import FaultAction, FaultEvent, ScenarioConfig, peer_name
from ledgerlab.raft import ConfigError
from ledgerlab.sim import Simulation


def write_records(tmp_path, items):
    path = tmp_path / "records.json"
    path.write_text(json.dumps(items))
    return path


# -- ingestion -------------------------------------------------------------


def test_ingest_valid_records(tmp_path, records):
    path = write_records(tmp_path, [r.to_json() for r in records[:5]])
    assert ingest_records(path) == records[:5]
    assert ingest_records(write_records(tmp_path, [])) == []


def test_ingest_reports_every_bad_entry(tmp_path, records):
    items = [r.to_json() for r in records[:4]]
    items[1]["raw_data"] = dict(items[1]["raw_data"] or items[1]["input_data"], content_hash="a" * 63)
    items[3] = {"id": "x"}
    with pytest.raises(RecordFileInvalid) as info:
        ingest_records(write_records(tmp_path, items))
    assert [i for i, _ in info.value.failures] == [1, 3]


def test_ingest_rejects_non_arrays_and_bad_json(tmp_path, records):
    with pytest.raises(ParseError):
        ingest_records(write_records(tmp_path, records[0].to_json()))
    bad = tmp_path / "bad.json"
    bad.write_text("[{")
    with pytest.raises(ParseError):
        ingest_records(bad)


# -- config and stats ------------------------------------------------------


def test_gateway_config_fanout_must_reach_policy():
    with pytest.raises(ConfigError):
        GatewayConfig(identity="collaborator.OrgUIS", fanout_per_org=1)
    cfg = GatewayConfig.from_json({"identity": "collaborator.OrgUIS", "fanout_per_org": 3})
    assert GatewayConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ConfigError):
        GatewayConfig.from_json({"fanout_per_org": 2})


def test_stats_empty_and_genesis_only(consortium):
    with pytest.raises(EmptyLedger):
        stats(BlockStore(consortium.channel, blocks=[]))
    summary = stats(BlockStore(consortium.channel, blocks=[consortium.genesis]))
    assert (summary.block_count, summary.transaction_count, summary.transactions_per_minute) == (1, 0, None)


def test_stats_counts(consortium, records):
    store = chain(consortium, [[envelope(consortium, ContractInvocation.create(r))] for r in records[:3]])
    summary = stats(store)
    assert summary.block_count == 4
    assert summary.transaction_count == summary.contract_invocation_count == summary.valid_transaction_count == 3


# -- off-chain files -------------------------------------------------------


def test_check_offchain(tmp_path, records):
    record = next(r for r in records if r.raw_data is not None)
    data = file_bytes(record.id, "raw", record.raw_data.size_bytes)
    good = tmp_path / "good.dat"
    good.write_bytes(data)
    assert check_offchain(record, good)
    flipped = tmp_path / "flipped.dat"
    flipped.write_bytes(bytes([data[0] ^ 1]) + data[1:])
    assert not check_offchain(record, flipped)
    other = next(r for r in records if r.raw_data is not None and r is not record)
    assert not check_offchain(other, good)


# -- submission ------------------------------------------------------------


@pytest.fixture
def sim():
    s = Simulation(ScenarioConfig(seed=5))
    s.run_for(s.config.warmup_ms)
    return s


def test_submit_commits_and_query_matches(sim, records):
    admin = sim.consortium.admin("OrgUIS")
    sim.gateway.submit(admin, ContractInvocation.lifecycle("approve"))
    receipt = sim.gateway.submit_record(records[0], sim.consortium.collaborator("OrgUIS"))
    assert receipt.valid and receipt.block_number >= 1
    sim.run_for(2000)
    for peer in sim.peers.values():
        assert read_record(peer.state, records[0].id) == records[0]


def test_peer_role_may_not_submit(sim, records):
    peer = sim.consortium.identities[peer_name("OrgUIS", 0)]
    with pytest.raises(PermissionDenied):
        sim.gateway.submit_record(records[0], peer)


def test_corrupted_peer_gets_no_proposals(sim, records):
    user = sim.consortium.collaborator("OrgUIS")
    for r in records[:3]:
        sim.gateway.submit_record(r, user)
    victim = peer_name("OrgESPOCH", 2)
    sim.apply_fault(FaultEvent(sim.now, victim, FaultAction.CORRUPT_LEDGER))
    t = sim.now
    for r in records[3:9]:
        sim.gateway.submit_record(r, user)
    assert [x for x in sim.proposals[victim] if x >= t] == []
    assert sim.peers[victim].diverged


def test_three_healthy_peers_cannot_meet_policy(sim, records):
    user = sim.consortium.collaborator("OrgUIS")
    for name in list(sim.peers)[:3]:
        sim.apply_fault(FaultEvent(sim.now, name, FaultAction.CRASH))
    with pytest.raises(InsufficientEndorsements):
        sim.gateway.submit_record(records[0], user)
    # the partial set is never forwarded to ordering
    assert sim.gateway.pending == {}

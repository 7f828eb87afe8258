import dataclasses

import pytest

from helpers import envelope
from ledgerlab.contract import (
    ContractInvocation,
    DataPointer,
    DuplicateId,
    EndorsementPolicy,
    ImmutableField,
    NotFound,
    PermissionDenied,
    SchemaViolation,
    ScientificRecord,
    WorldState,
    apply_envelope,
    create_record,
    execute,
    hash_data_file,
    read_record,
    record_exists,
    update_record,
)


def cert(consortium, name):
    return consortium.directory.get(name)


@pytest.fixture
def record(records):
    return records[0]


@pytest.fixture
def writer(consortium):
    return cert(consortium, "collaborator.OrgUIS")


def raw(record):
    return record.to_json()


def test_generated_records_are_valid(records):
    for r in records:
        r.validate()
        assert ScientificRecord.from_json(r.to_json()) == r


@pytest.mark.parametrize(
    "edit,invariant",
    [
        (lambda o: o.update(id=""), "id_nonempty"),
        (lambda o: o["record_type"].update(level="S9"), "record_type_level"),
        (lambda o: o.update(orcid="0000-0000-0000-00"), "orcid_pattern"),
        (lambda o: o.update(metadata={"k": 1}), "metadata_flat_text"),
        (lambda o: o.update(metadata={"k": {"nested": "x"}}), "metadata_flat_text"),
        (lambda o: o.update(site_name=""), "site_name_nonempty"),
        (lambda o: o.update(extra="x"), "field_names"),
    ],
)
def test_schema_violations_name_their_invariant(record, edit, invariant):
    obj = raw(record)
    edit(obj)
    with pytest.raises(SchemaViolation) as err:
        ScientificRecord.from_json(obj)
    assert err.value.invariant == invariant


def test_63_char_hash_is_rejected(records):
    measurement = next(r for r in records if r.raw_data is not None)
    obj = raw(measurement)
    obj["raw_data"]["content_hash"] = obj["raw_data"]["content_hash"][:63]
    with pytest.raises(SchemaViolation) as err:
        ScientificRecord.from_json(obj)
    assert err.value.invariant == "content_hash_hex64"


def test_category_requirements(records):
    measurement = next(r for r in records if r.raw_data is not None)
    simulation = next(r for r in records if r.raw_data is None)
    with pytest.raises(SchemaViolation) as err:
        dataclasses.replace(measurement, raw_data=None).validate()
    assert err.value.invariant == "measurement_requires_raw_data"
    with pytest.raises(SchemaViolation) as err:
        dataclasses.replace(simulation, output_data=None).validate()
    assert err.value.invariant == "simulation_requires_input_output"


def test_create_read_exists(record, writer):
    state = create_record(WorldState(), writer, record)
    assert read_record(state, record.id) == record
    assert record_exists(state, record.id) and not record_exists(state, "nope")
    with pytest.raises(DuplicateId):
        create_record(state, writer, record)
    with pytest.raises(NotFound):
        read_record(state, "nope")


def test_update_rules(record, writer, consortium):
    state = create_record(WorldState(), writer, record)
    updated = update_record(state, writer, record.id, {"access_url": "https://example.org/moved"})
    assert read_record(updated, record.id).access_url == "https://example.org/moved"
    assert read_record(state, record.id) == record  # states are immutable
    with pytest.raises(ImmutableField):
        update_record(state, writer, record.id, {"id": "other"})
    with pytest.raises(ImmutableField):
        update_record(state, writer, record.id, {"record_type": {"category": "simulation", "level": "S0"}})
    with pytest.raises(NotFound):
        update_record(state, writer, "missing", {"access_url": "x"})
    with pytest.raises(SchemaViolation):
        update_record(state, writer, record.id, {"orcid": "bad"})


def test_roles(record, consortium):
    with pytest.raises(PermissionDenied):
        create_record(WorldState(), cert(consortium, "peer0.OrgUIS"), record)
    lifecycle = ContractInvocation.lifecycle("install")
    with pytest.raises(PermissionDenied):
        execute(WorldState(), cert(consortium, "collaborator.OrgUIS"), lifecycle)
    assert len(execute(WorldState(), cert(consortium, "admin.OrgUIS"), lifecycle)) == 0


def test_state_digest_ignores_insertion_order(records, writer):
    a = b = WorldState()
    for r in records[:5]:
        a = create_record(a, writer, r)
    for r in reversed(records[:5]):
        b = create_record(b, writer, r)
    assert a.state_digest == b.state_digest and a == b
    assert a.state_digest != WorldState().state_digest


@pytest.mark.parametrize("endorsers,valid", [(3, False), (4, True), (6, True)])
def test_endorsement_threshold(consortium, record, endorsers, valid):
    env = envelope(consortium, ContractInvocation.create(record), endorsers)
    state, ok = apply_envelope(WorldState(), env, consortium.directory, EndorsementPolicy(4))
    assert ok is valid
    assert len(state) == (1 if valid else 0)


def test_repeated_endorser_counts_once(consortium, record):
    peers = consortium.peers
    env = envelope(consortium, ContractInvocation.create(record), [peers[0], peers[1], peers[2], peers[2]])
    _, ok = apply_envelope(WorldState(), env, consortium.directory, EndorsementPolicy(4))
    assert not ok


def test_non_peer_endorsement_does_not_count(consortium, record):
    env = envelope(consortium, ContractInvocation.create(record), [*consortium.peers[:3], "admin.OrgUIS"])
    _, ok = apply_envelope(WorldState(), env, consortium.directory, EndorsementPolicy(4))
    assert not ok


def test_invalid_payload_is_flagged(consortium):
    env = envelope(consortium, ContractInvocation.lifecycle("install"), 4, creator="collaborator.OrgUIS")
    _, ok = apply_envelope(WorldState(), env, consortium.directory, EndorsementPolicy(4))
    assert not ok  # lifecycle needs an admin creator


def test_hash_data_file(tmp_path):
    path = tmp_path / "f.dat"
    path.write_bytes(b"abc")
    pointer = hash_data_file(path, "https://example.org/f.dat")
    assert pointer == DataPointer("ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad", "https://example.org/f.dat", 3)

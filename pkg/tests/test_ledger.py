import dataclasses
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import chain, envelope, next_block
from ledgerlab.contract import ContractInvocation
from ledgerlab.encoding import canonical_json, sha256_digest
from ledgerlab.ledger import (
    ZERO_HASH,
    BlockStore,
    ChainLinkError,
    Endorsement,
    LedgerFormatError,
    TransactionEnvelope,
    TransactionHeader,
    build_block,
    compute_data_hash,
    genesis_config,
    header_digest,
    make_tx_id,
)


def lifecycle(op="install"):
    return ContractInvocation.lifecycle(op)


def test_tx_id_binds_creator_and_nonce():
    nonce = bytes(range(16))
    assert make_tx_id("a", nonce) == make_tx_id("a", nonce)
    assert make_tx_id("a", nonce) != make_tx_id("b", nonce)
    assert make_tx_id("a", nonce) == sha256_digest(canonical_json(["a", nonce.hex()])).hex()
    with pytest.raises(ValueError):
        TransactionHeader.create("a", "ch", 0, b"short")


def test_genesis(consortium):
    g = consortium.genesis
    assert g.number == 0 and g.header.previous_hash == ZERO_HASH
    config = genesis_config(g)
    assert config.endorsement_required == 4
    assert config.bundle_digest == consortium.directory.bundle_digest()
    assert len(config.orderers) == 3


def test_blocks_chain_by_header_digest(consortium):
    store = chain(consortium, [[envelope(consortium, lifecycle())], [envelope(consortium, lifecycle("commit"))]])
    assert store.height == 3
    assert store.blocks[2].header.previous_hash == header_digest(store.blocks[1].header)
    assert store.blocks[1].header.data_hash == compute_data_hash(store.blocks[1].envelopes)
    # a block never carries its own digest
    assert header_digest(store.blocks[2].header).hex() not in canonical_json(store.blocks[2].to_json()).decode()


def test_append_block_rejects_bad_links(consortium):
    store = chain(consortium, [[envelope(consortium, lifecycle())]])
    block = next_block(consortium, store, [envelope(consortium, lifecycle())])
    with pytest.raises(ChainLinkError):
        store.copy().append_block(dataclasses.replace(block, header=dataclasses.replace(block.header, number=5)))
    with pytest.raises(ChainLinkError):
        store.copy().append_block(
            dataclasses.replace(block, header=dataclasses.replace(block.header, previous_hash=ZERO_HASH))
        )
    store.append_block(block)


def test_only_orderers_cut_blocks(consortium):
    with pytest.raises(PermissionError):
        build_block(1, ZERO_HASH, [], consortium.identities["peer0.OrgUIS"])


def test_store_bytes_round_trip(consortium, tmp_path):
    store = chain(consortium, [[envelope(consortium, lifecycle()), envelope(consortium, lifecycle("commit"))]])
    path = tmp_path / "ledger.jsonl"
    store.write(path)
    again = BlockStore.read(path)
    assert again.to_bytes() == path.read_bytes()
    assert [b.to_json() for b in again] == [b.to_json() for b in store]


def test_golden_ledger_reencodes_byte_identically(golden_bytes, golden_store):
    assert golden_store.to_bytes() == golden_bytes
    assert golden_store.height == 432


@pytest.mark.parametrize(
    "mangle",
    [
        lambda d: d.replace(b'"format_version":1', b'"format_version":2', 1),
        lambda d: d.replace(b"\n", b"\n ", 1),
        lambda d: b"",
        lambda d: d + b"{not json}\n",
    ],
)
def test_reader_rejects_malformed_files(golden_bytes, mangle):
    with pytest.raises(LedgerFormatError):
        BlockStore.from_bytes(mangle(golden_bytes))


def test_data_hash_sensitive_to_every_flipped_bit(golden_store):
    """Any single-bit flip in the serialized envelopes changes the data hash."""
    rng = random.Random(5)
    for _ in range(250):
        block = golden_store.blocks[rng.randrange(1, golden_store.height)]
        encoded = bytearray(canonical_json([e.to_json() for e in block.envelopes]))
        pos = rng.randrange(len(encoded))
        encoded[pos] ^= 1 << rng.randrange(8)
        assert sha256_digest(bytes(encoded)) != block.header.data_hash


names = st.text(st.characters(min_codepoint=32, max_codepoint=0x2FFF), min_size=1, max_size=12)


@settings(max_examples=100, deadline=None)
@given(
    creator=names,
    channel=names,
    timestamp=st.integers(0, 2**53),
    nonce=st.binary(min_size=16, max_size=16),
    payload=st.binary(max_size=64),
    sig=st.binary(min_size=1, max_size=72),
    endorsers=st.lists(st.tuples(names, st.binary(min_size=1, max_size=72)), max_size=5),
)
def test_envelope_json_round_trip(creator, channel, timestamp, nonce, payload, sig, endorsers):
    header = TransactionHeader.create(creator, channel, timestamp, nonce)
    env = TransactionEnvelope(header, payload, sig, tuple(Endorsement(n, s) for n, s in endorsers))
    assert TransactionEnvelope.from_json(env.to_json()) == env
    assert canonical_json(TransactionEnvelope.from_json(env.to_json()).to_json()) == canonical_json(env.to_json())

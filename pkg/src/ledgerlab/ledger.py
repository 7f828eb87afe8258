"""Ledger types, hash chaining and the line-oriented ledger file.

A block never stores its own digest. Blocks are linked only through the next
block's ``previous_hash``, so anything that checks integrity has to recompute
digests from content.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .encoding import (
    EncodingError,
    canonical_json,
    expect_keys,
    from_hex,
    require,
    sha256_digest,
    to_hex,
)
from .identity import SCHEME_ID, Identity, Role

FORMAT_VERSION = 1
ZERO_HASH = bytes(32)


class LedgerError(Exception):
    pass


class ChainLinkError(LedgerError):
    def __init__(self, block_number: int, detail: str = "") -> None:
        super().__init__(f"chain link violation at block {block_number}" + (f": {detail}" if detail else ""))
        self.block_number = block_number


class LedgerFormatError(LedgerError):
    pass


def make_tx_id(creator: str, nonce: bytes) -> str:
    return sha256_digest(canonical_json([creator, to_hex(nonce)])).hex()


@dataclass(frozen=True)
class TransactionHeader:
    tx_id: str
    creator: str
    channel: str
    timestamp: int
    nonce: bytes

    @classmethod
    def create(cls, creator: str, channel: str, timestamp: int, nonce: bytes) -> "TransactionHeader":
        if len(nonce) != 16:
            raise ValueError("nonce must be 16 bytes")
        return cls(make_tx_id(creator, nonce), creator, channel, timestamp, bytes(nonce))

    def to_json(self) -> dict:
        return {
            "channel": self.channel,
            "creator": self.creator,
            "nonce": to_hex(self.nonce),
            "timestamp": self.timestamp,
            "tx_id": self.tx_id,
        }

    @classmethod
    def from_json(cls, obj) -> "TransactionHeader":
        expect_keys(obj, {"channel", "creator", "nonce", "timestamp", "tx_id"}, "transaction header")
        return cls(
            tx_id=require(obj, "tx_id", str),
            creator=require(obj, "creator", str),
            channel=require(obj, "channel", str),
            timestamp=require(obj, "timestamp", int),
            nonce=from_hex(require(obj, "nonce", str), 16),
        )


def signed_bytes(header: TransactionHeader, payload: bytes) -> bytes:
    """The message covered by creator and endorser signatures."""
    return canonical_json({"header": header.to_json(), "payload": to_hex(payload)})


@dataclass(frozen=True)
class Endorsement:
    endorser: str
    signature: bytes

    def to_json(self) -> dict:
        return {"endorser": self.endorser, "signature": to_hex(self.signature)}

    @classmethod
    def from_json(cls, obj) -> "Endorsement":
        expect_keys(obj, {"endorser", "signature"}, "endorsement")
        return cls(require(obj, "endorser", str), from_hex(require(obj, "signature", str)))


@dataclass(frozen=True)
class TransactionEnvelope:
    header: TransactionHeader
    payload: bytes
    creator_signature: bytes
    endorsements: tuple[Endorsement, ...] = ()

    @property
    def tx_id(self) -> str:
        return self.header.tx_id

    def signed_bytes(self) -> bytes:
        return signed_bytes(self.header, self.payload)

    def to_json(self) -> dict:
        return {
            "creator_signature": to_hex(self.creator_signature),
            "endorsements": [e.to_json() for e in self.endorsements],
            "header": self.header.to_json(),
            "payload": to_hex(self.payload),
        }

    @classmethod
    def from_json(cls, obj) -> "TransactionEnvelope":
        expect_keys(obj, {"creator_signature", "endorsements", "header", "payload"}, "envelope")
        return cls(
            header=TransactionHeader.from_json(require(obj, "header", dict)),
            payload=from_hex(require(obj, "payload", str)),
            creator_signature=from_hex(require(obj, "creator_signature", str)),
            endorsements=tuple(Endorsement.from_json(e) for e in require(obj, "endorsements", list)),
        )


@dataclass(frozen=True)
class BlockHeader:
    number: int
    previous_hash: bytes
    data_hash: bytes

    def to_json(self) -> dict:
        return {
            "data_hash": to_hex(self.data_hash),
            "number": self.number,
            "previous_hash": to_hex(self.previous_hash),
        }

    @classmethod
    def from_json(cls, obj) -> "BlockHeader":
        expect_keys(obj, {"data_hash", "number", "previous_hash"}, "block header")
        number = require(obj, "number", int)
        if number < 0:
            raise EncodingError("block number must be non-negative")
        return cls(
            number=number,
            previous_hash=from_hex(require(obj, "previous_hash", str), 32),
            data_hash=from_hex(require(obj, "data_hash", str), 32),
        )


@dataclass(frozen=True)
class BlockMetadata:
    orderer: str
    orderer_signature: bytes
    validity_flags: tuple[bool, ...]

    def to_json(self) -> dict:
        return {
            "orderer": self.orderer,
            "orderer_signature": to_hex(self.orderer_signature),
            "validity_flags": list(self.validity_flags),
        }

    @classmethod
    def from_json(cls, obj) -> "BlockMetadata":
        expect_keys(obj, {"orderer", "orderer_signature", "validity_flags"}, "block metadata")
        flags = require(obj, "validity_flags", list)
        if not all(isinstance(f, bool) for f in flags):
            raise EncodingError("validity flags must be booleans")
        return cls(
            orderer=require(obj, "orderer", str),
            orderer_signature=from_hex(require(obj, "orderer_signature", str)),
            validity_flags=tuple(flags),
        )


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    envelopes: tuple[TransactionEnvelope, ...]
    metadata: BlockMetadata

    def __post_init__(self) -> None:
        if len(self.metadata.validity_flags) != len(self.envelopes):
            raise ValueError("one validity flag per envelope required")

    @property
    def number(self) -> int:
        return self.header.number

    def with_flags(self, flags: Sequence[bool]) -> "Block":
        return dataclasses.replace(
            self, metadata=dataclasses.replace(self.metadata, validity_flags=tuple(flags))
        )

    def to_json(self) -> dict:
        return {
            "envelopes": [e.to_json() for e in self.envelopes],
            "header": self.header.to_json(),
            "metadata": self.metadata.to_json(),
        }

    @classmethod
    def from_json(cls, obj) -> "Block":
        expect_keys(obj, {"envelopes", "header", "metadata"}, "block")
        try:
            return cls(
                header=BlockHeader.from_json(require(obj, "header", dict)),
                envelopes=tuple(TransactionEnvelope.from_json(e) for e in require(obj, "envelopes", list)),
                metadata=BlockMetadata.from_json(require(obj, "metadata", dict)),
            )
        except ValueError as exc:
            if isinstance(exc, EncodingError):
                raise
            raise EncodingError(str(exc)) from exc


def compute_data_hash(envelopes: Iterable[TransactionEnvelope]) -> bytes:
    return sha256_digest(canonical_json([e.to_json() for e in envelopes]))


def header_digest(header: BlockHeader) -> bytes:
    return sha256_digest(canonical_json(header.to_json()))


def block_digest(block: Block) -> bytes:
    return header_digest(block.header)


def build_block(
    number: int,
    previous_hash: bytes,
    envelopes: Sequence[TransactionEnvelope],
    orderer: Identity,
) -> Block:
    if orderer.role is not Role.ORDERER:
        raise PermissionError(f"{orderer.name} is not an orderer")
    if len(previous_hash) != 32:
        raise ValueError("previous_hash must be 32 bytes")
    envelopes = tuple(envelopes)
    header = BlockHeader(number, bytes(previous_hash), compute_data_hash(envelopes))
    signature = orderer.sign(canonical_json(header.to_json()))
    metadata = BlockMetadata(orderer.name, signature, (True,) * len(envelopes))
    return Block(header, envelopes, metadata)


@dataclass(frozen=True)
class ChannelConfig:
    """Trust anchor carried by the single envelope of the genesis block."""

    channel: str
    endorsement_required: int
    bundle_digest: bytes
    orderers: tuple[str, ...]
    scheme_id: str = SCHEME_ID

    def to_json(self) -> dict:
        return {
            "bundle_digest": to_hex(self.bundle_digest),
            "channel": self.channel,
            "endorsement_required": self.endorsement_required,
            "kind": "channel_config",
            "orderers": list(self.orderers),
            "scheme_id": self.scheme_id,
        }

    @classmethod
    def from_json(cls, obj) -> "ChannelConfig":
        expect_keys(
            obj,
            {"bundle_digest", "channel", "endorsement_required", "kind", "orderers", "scheme_id"},
            "channel config",
        )
        if obj["kind"] != "channel_config":
            raise EncodingError("not a channel config")
        required = require(obj, "endorsement_required", int)
        if required < 0:
            raise EncodingError("endorsement_required must be non-negative")
        orderers = require(obj, "orderers", list)
        if not all(isinstance(o, str) for o in orderers):
            raise EncodingError("orderer names must be text")
        return cls(
            channel=require(obj, "channel", str),
            endorsement_required=required,
            bundle_digest=from_hex(require(obj, "bundle_digest", str), 32),
            orderers=tuple(orderers),
            scheme_id=require(obj, "scheme_id", str),
        )

    @classmethod
    def from_payload(cls, payload: bytes) -> "ChannelConfig":
        try:
            return cls.from_json(json.loads(payload.decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise EncodingError(str(exc)) from exc


def make_genesis(
    config: ChannelConfig,
    admin: Identity,
    orderer: Identity,
    timestamp: int,
    nonce: bytes,
) -> Block:
    header = TransactionHeader.create(admin.name, config.channel, timestamp, nonce)
    payload = canonical_json(config.to_json())
    envelope = TransactionEnvelope(header, payload, admin.sign(signed_bytes(header, payload)))
    return build_block(0, ZERO_HASH, [envelope], orderer)


def genesis_config(block: Block) -> ChannelConfig:
    if block.number != 0 or len(block.envelopes) != 1:
        raise LedgerFormatError("genesis block must hold exactly one configuration envelope")
    try:
        return ChannelConfig.from_payload(block.envelopes[0].payload)
    except EncodingError as exc:
        raise LedgerFormatError(f"genesis configuration: {exc}") from exc


def file_header(scheme_id: str, channel: str) -> dict:
    return {"channel": channel, "format_version": FORMAT_VERSION, "scheme_id": scheme_id}


class BlockStore:
    """Append-only, densely numbered block sequence (one writer, many readers)."""

    def __init__(self, channel: str, scheme_id: str = SCHEME_ID, blocks: Iterable[Block] = ()) -> None:
        self.channel = channel
        self.scheme_id = scheme_id
        self.blocks: list[Block] = []
        for block in blocks:
            self.append_block(block)

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    @property
    def height(self) -> int:
        return len(self.blocks)

    def head(self) -> Block | None:
        return self.blocks[-1] if self.blocks else None

    def head_digest(self) -> bytes:
        return header_digest(self.blocks[-1].header) if self.blocks else ZERO_HASH

    def append_block(self, block: Block) -> "BlockStore":
        expected = len(self.blocks)
        if block.header.number != expected:
            raise ChainLinkError(block.header.number, f"expected number {expected}")
        if block.header.previous_hash != self.head_digest():
            raise ChainLinkError(block.header.number, "previous_hash does not match the head digest")
        self.blocks.append(block)
        return self

    def read_block(self, index: int) -> Block:
        if not 0 <= index < len(self.blocks):
            raise IndexError(f"no block {index}")
        return self.blocks[index]

    def copy(self) -> "BlockStore":
        clone = BlockStore(self.channel, self.scheme_id)
        clone.blocks = list(self.blocks)
        return clone

    def tx_ids(self) -> list[str]:
        return [env.tx_id for block in self.blocks for env in block.envelopes]

    def to_bytes(self) -> bytes:
        lines = [canonical_json(file_header(self.scheme_id, self.channel))]
        lines.extend(canonical_json(block.to_json()) for block in self.blocks)
        return b"".join(line + b"\n" for line in lines)

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "BlockStore":
        lines = data.split(b"\n")
        if lines and lines[-1] == b"":
            lines.pop()
        if not lines:
            raise LedgerFormatError("empty ledger file")
        head = _load_line(lines[0], 1)
        try:
            expect_keys(head, {"channel", "format_version", "scheme_id"}, "file header")
            version = require(head, "format_version", int)
            store = cls(require(head, "channel", str), require(head, "scheme_id", str))
        except EncodingError as exc:
            raise LedgerFormatError(f"line 1: {exc}") from exc
        if version != FORMAT_VERSION:
            raise LedgerFormatError(f"unsupported format_version {version}")
        if canonical_json(head) != lines[0]:
            raise LedgerFormatError("line 1: not canonically encoded")
        for offset, raw in enumerate(lines[1:], start=2):
            obj = _load_line(raw, offset)
            try:
                block = Block.from_json(obj)
            except EncodingError as exc:
                raise LedgerFormatError(f"line {offset}: {exc}") from exc
            if canonical_json(block.to_json()) != raw:
                raise LedgerFormatError(f"line {offset}: not canonically encoded")
            store.append_block(block)
        return store

    @classmethod
    def read(cls, path: str | Path) -> "BlockStore":
        return cls.from_bytes(Path(path).read_bytes())


def _load_line(raw: bytes, number: int):
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise LedgerFormatError(f"line {number}: {exc}") from exc


def append_block(store: BlockStore, block: Block) -> BlockStore:
    return store.append_block(block)


def read_block(store: BlockStore, index: int) -> Block:
    return store.read_block(index)

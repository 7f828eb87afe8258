"""Integrity verification and tamper injection for ledger files.

The verifier reads ledger lines positionally instead of trusting a decoded
object: the content hash of a block is SHA-256 over the exact bytes of its
envelope list as they sit in the file, so any edit to that region (even one
that decodes to the same values, such as upper-casing a hex digit) shows up
as a mismatch against the header's ``data_hash``.
"""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .encoding import EncodingError, canonical_json, sha256_digest
from .identity import SCHEME_ID, WRITER_ROLES, MembershipDirectory, Role, verify_signature
from .ledger import (
    FORMAT_VERSION,
    ZERO_HASH,
    Block,
    BlockHeader,
    BlockMetadata,
    BlockStore,
    ChannelConfig,
    TransactionEnvelope,
    header_digest,
)


class Kind(str, enum.Enum):
    DATA_HASH_MISMATCH = "DataHashMismatch"
    CHAIN_LINK_BROKEN = "ChainLinkBroken"
    ORDERER_SIGNATURE_INVALID = "OrdererSignatureInvalid"
    CREATOR_SIGNATURE_INVALID = "CreatorSignatureInvalid"
    ENDORSEMENT_SIGNATURE_INVALID = "EndorsementSignatureInvalid"
    EMPTY_BLOCK_DATA = "EmptyBlockData"
    CONFIG_INVALID = "ConfigInvalid"


KIND_ORDER = {kind: i for i, kind in enumerate(Kind)}
SIGNATURE_KINDS = frozenset(
    {Kind.ORDERER_SIGNATURE_INVALID, Kind.CREATOR_SIGNATURE_INVALID, Kind.ENDORSEMENT_SIGNATURE_INVALID}
)
TX_SIGNATURE_KINDS = frozenset({Kind.CREATOR_SIGNATURE_INVALID, Kind.ENDORSEMENT_SIGNATURE_INVALID})


class Mode(str, enum.Enum):
    PAPER = "paper"
    STRICT = "strict"


class Verdict(str, enum.Enum):
    INTACT = "intact"
    TAMPERED = "tampered"


@dataclass(frozen=True)
class Violation:
    block_number: int
    kind: Kind
    tx_id: str | None = None
    signer: str | None = None
    detail: str = ""
    tx_index: int | None = None

    def __post_init__(self) -> None:
        if (self.kind in TX_SIGNATURE_KINDS) != (self.tx_id is not None):
            raise ValueError(f"{self.kind.value}: tx_id is required for transaction signatures only")

    def sort_key(self) -> tuple:
        return (
            self.block_number,
            -1 if self.tx_index is None else self.tx_index,
            KIND_ORDER[self.kind],
            self.signer or "",
        )

    def describe(self) -> str:
        where = f"block {self.block_number}"
        if self.tx_id is not None:
            where += f" tx {self.tx_id}"
        return f"{self.kind.value} at {where}: {self.detail}"

    def to_json(self) -> dict:
        return {
            "block_number": self.block_number,
            "detail": self.detail,
            "kind": self.kind.value,
            "signer": self.signer,
            "tx_id": self.tx_id,
            "tx_index": self.tx_index,
        }


@dataclass
class IntegrityReport:
    blocks_checked: int = 0
    transactions_checked: int = 0
    signatures_checked: int = 0
    violations: list[Violation] = field(default_factory=list)

    @property
    def signatures_failed(self) -> int:
        return sum(1 for v in self.violations if v.kind in SIGNATURE_KINDS)

    @property
    def verdict(self) -> Verdict:
        return Verdict.TAMPERED if self.violations else Verdict.INTACT

    def count(self, kind: Kind) -> int:
        return sum(1 for v in self.violations if v.kind is kind)

    def flagged_blocks(self) -> set[int]:
        return {v.block_number for v in self.violations}

    def to_json(self) -> dict:
        return {
            "blocks_checked": self.blocks_checked,
            "signatures_checked": self.signatures_checked,
            "signatures_failed": self.signatures_failed,
            "transactions_checked": self.transactions_checked,
            "verdict": self.verdict.value,
            "violations": [v.to_json() for v in self.violations],
        }


# -- positional parsing ------------------------------------------------------

_ENVELOPES_PREFIX = '{"envelopes":'
_HEADER_KEY = ',"header":'
_HEADER_MARK = _HEADER_KEY + '{"data_hash":'
_METADATA_KEY = ',"metadata":'


@dataclass(frozen=True)
class MalformedEnvelope:
    """A transaction slot that does not decode as an envelope."""

    raw: Any
    error: str

    @property
    def tx_id(self) -> str | None:
        if isinstance(self.raw, dict) and isinstance(self.raw.get("header"), dict):
            tx_id = self.raw["header"].get("tx_id")
            if isinstance(tx_id, str):
                return tx_id
        return None


@dataclass
class AuditBlock:
    """One ledger line as the verifier sees it."""

    position: int
    header: BlockHeader | None = None
    metadata: BlockMetadata | None = None
    envelopes: list | None = None  # slots: TransactionEnvelope, MalformedEnvelope or None (empty)
    content_hash: bytes | None = None
    region: tuple[int, int] | None = None  # byte span of the envelope list within the line
    error: str | None = None


def _decode_slot(item: Any):
    if item is None or item == {}:
        return None
    try:
        envelope = TransactionEnvelope.from_json(item)
        canonical_json(envelope.to_json()).decode("utf-8")
        envelope.signed_bytes()
    except (EncodingError, UnicodeError, ValueError) as exc:
        return MalformedEnvelope(item, str(exc))
    return envelope


def parse_block_line(raw: bytes, position: int) -> AuditBlock:
    out = AuditBlock(position)
    text = raw.decode("utf-8", "surrogateescape")
    if not text.startswith(_ENVELOPES_PREFIX):
        out.error = "line does not start with the envelope list"
        return out
    cut = text.rfind(_HEADER_MARK)
    if cut < 0:
        out.error = "block header not found"
        return out
    region_text = text[len(_ENVELOPES_PREFIX) : cut]
    start = len(_ENVELOPES_PREFIX)
    region = region_text.encode("utf-8", "surrogateescape")
    out.region = (start, start + len(region))
    out.content_hash = sha256_digest(region)

    tail = text[cut + len(_HEADER_KEY) :]
    try:
        header_obj, end = json.JSONDecoder().raw_decode(tail)
        out.header = BlockHeader.from_json(header_obj)
        rest = tail[end:]
        if not (rest.startswith(_METADATA_KEY) and rest.endswith("}")):
            raise EncodingError("block metadata not found")
        out.metadata = BlockMetadata.from_json(json.loads(rest[len(_METADATA_KEY) : -1]))
    except (ValueError, EncodingError) as exc:
        out.error = f"block header or metadata undecodable: {exc}"
        return out

    try:
        items = json.loads(region_text)
    except ValueError:
        items = None
    if isinstance(items, list):
        out.envelopes = [_decode_slot(item) for item in items]
    return out


def audit_block(block: Block, position: int | None = None) -> AuditBlock:
    return parse_block_line(canonical_json(block.to_json()), block.number if position is None else position)


@dataclass
class ParsedLedger:
    file_header: dict | None
    header_error: str | None
    blocks: list[AuditBlock]


def parse_ledger(data: bytes) -> ParsedLedger:
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    if not lines:
        return ParsedLedger(None, "empty ledger file", [])
    header, error = None, None
    try:
        header = json.loads(lines[0].decode("utf-8"))
        if not isinstance(header, dict) or set(header) != {"channel", "format_version", "scheme_id"}:
            error = "file header must hold channel, format_version and scheme_id"
        elif header["format_version"] != FORMAT_VERSION:
            error = f"unsupported format_version {header['format_version']!r}"
        elif header["scheme_id"] != SCHEME_ID:
            error = f"unsupported signature scheme {header['scheme_id']!r}"
        elif canonical_json(header) != lines[0]:
            error = "file header is not canonically encoded"
    except (ValueError, EncodingError) as exc:
        header, error = None, f"file header undecodable: {exc}"
    blocks = [parse_block_line(raw, i) for i, raw in enumerate(lines[1:])]
    return ParsedLedger(header, error, blocks)


# -- checks ------------------------------------------------------------------


class _Tally:
    def __init__(self) -> None:
        self.signatures = 0


def _check_creator(envelope, index: int, tx_index: int, directory, tally, out) -> None:
    tally.signatures += 1
    if isinstance(envelope, MalformedEnvelope):
        out.append(
            Violation(
                index,
                Kind.CREATOR_SIGNATURE_INVALID,
                envelope.tx_id or f"slot-{tx_index}",
                None,
                f"transaction undecodable: {envelope.error}",
                tx_index,
            )
        )
        return
    creator = envelope.header.creator
    cert = directory.get(creator)
    if cert is None or cert.role not in WRITER_ROLES:
        detail = "creator is not a registered collaborator or admin"
    elif not verify_signature(cert.public_key, envelope.signed_bytes(), envelope.creator_signature):
        detail = "creator signature does not match the transaction data"
    else:
        return
    out.append(Violation(index, Kind.CREATOR_SIGNATURE_INVALID, envelope.tx_id, creator, detail, tx_index))


def _check_endorsements(envelope, index: int, tx_index: int, directory, tally, out) -> None:
    if isinstance(envelope, MalformedEnvelope):
        return
    message = envelope.signed_bytes()
    for endorsement in envelope.endorsements:
        tally.signatures += 1
        cert = directory.get(endorsement.endorser)
        if cert is None or cert.role is not Role.PEER:
            detail = "endorser is not a registered peer"
        elif not verify_signature(cert.public_key, message, endorsement.signature):
            detail = "endorsement signature does not match the transaction data"
        else:
            continue
        out.append(
            Violation(
                index, Kind.ENDORSEMENT_SIGNATURE_INVALID, envelope.tx_id, endorsement.endorser, detail, tx_index
            )
        )


def _block_integrity(content_hash, stored_data_hash, block, index, directory, mode, tally) -> list[Violation]:
    out: list[Violation] = []
    mismatch = content_hash != stored_data_hash
    if mismatch:
        out.append(
            Violation(index, Kind.DATA_HASH_MISMATCH, detail="content hash differs from the data hash in the header")
        )
    if not mismatch and mode is Mode.PAPER:
        return out
    slots = block.envelopes
    if slots is None:
        return out
    if not slots and index > 0:
        out.append(Violation(index, Kind.EMPTY_BLOCK_DATA, detail="block carries no transactions"))
    for tx_index, envelope in enumerate(slots):
        if envelope is None:
            out.append(Violation(index, Kind.EMPTY_BLOCK_DATA, detail="no transaction data in slot", tx_index=tx_index))
            continue
        _check_creator(envelope, index, tx_index, directory, tally, out)
        if mode is Mode.STRICT:
            _check_endorsements(envelope, index, tx_index, directory, tally, out)
    return out


def verify_block_integrity(
    content_hash: bytes,
    stored_data_hash: bytes,
    block,
    index: int,
    directory: MembershipDirectory,
    mode: Mode | str = Mode.PAPER,
) -> list[Violation]:
    """Per-block check. Paper mode inspects transactions only after a hash
    mismatch; strict mode always checks creator and endorsement signatures.
    All violations are collected rather than stopping at the first."""
    mode = Mode(mode)
    violations = _block_integrity(content_hash, stored_data_hash, block, index, directory, mode, _Tally())
    return sorted(violations, key=Violation.sort_key)


def _check_config(block: AuditBlock, parsed: ParsedLedger, directory, out: list[Violation]) -> None:
    def bad(detail: str) -> None:
        out.append(Violation(0, Kind.CONFIG_INVALID, detail=detail))

    slots = block.envelopes or []
    if len(slots) != 1 or not isinstance(slots[0], TransactionEnvelope):
        bad("genesis block must hold exactly one configuration envelope")
        return
    try:
        config = ChannelConfig.from_payload(slots[0].payload)
    except EncodingError as exc:
        bad(f"configuration undecodable: {exc}")
        return
    if config.scheme_id != SCHEME_ID:
        bad(f"unsupported signature scheme {config.scheme_id!r}")
    if parsed.file_header is not None and parsed.file_header.get("channel") != config.channel:
        bad("file header channel differs from the configured channel")
    if slots[0].header.channel != config.channel:
        bad("configuration envelope addressed to another channel")
    if config.bundle_digest != directory.bundle_digest():
        bad("certificate bundle digest differs from the one anchored in the genesis block")
    creator = directory.get(slots[0].header.creator)
    if creator is None or creator.role is not Role.ADMIN:
        bad("configuration was not created by an admin")


def _verify_parsed(parsed: ParsedLedger, directory: MembershipDirectory, mode: Mode) -> IntegrityReport:
    report = IntegrityReport()
    tally = _Tally()
    out: list[Violation] = []
    if parsed.header_error:
        out.append(Violation(0, Kind.CONFIG_INVALID, detail=parsed.header_error))
    if not parsed.blocks:
        out.append(Violation(0, Kind.CONFIG_INVALID, detail="ledger holds no blocks"))

    previous: AuditBlock | None = None
    for block in parsed.blocks:
        i = block.position
        report.blocks_checked += 1
        if block.error is not None:
            out.append(Violation(i, Kind.DATA_HASH_MISMATCH, detail=block.error))
            previous = block
            continue
        header = block.header
        report.transactions_checked += len(block.envelopes or ())
        if header.number != i:
            out.append(Violation(i, Kind.CHAIN_LINK_BROKEN, detail=f"header number {header.number} at position {i}"))
        if i == 0:
            if header.previous_hash != ZERO_HASH:
                out.append(Violation(i, Kind.CHAIN_LINK_BROKEN, detail="genesis previous_hash is not all-zero"))
        elif previous is not None and previous.header is not None:
            if header.previous_hash != header_digest(previous.header):
                out.append(
                    Violation(i, Kind.CHAIN_LINK_BROKEN, detail="previous_hash does not match the previous header")
                )

        tally.signatures += 1
        orderer = directory.get(block.metadata.orderer)
        if orderer is None or orderer.role is not Role.ORDERER:
            out.append(
                Violation(
                    i, Kind.ORDERER_SIGNATURE_INVALID, signer=block.metadata.orderer, detail="signer is not an orderer"
                )
            )
        elif not verify_signature(
            orderer.public_key, canonical_json(header.to_json()), block.metadata.orderer_signature
        ):
            out.append(
                Violation(
                    i,
                    Kind.ORDERER_SIGNATURE_INVALID,
                    signer=block.metadata.orderer,
                    detail="orderer signature does not match the header",
                )
            )

        out.extend(_block_integrity(block.content_hash, header.data_hash, block, i, directory, mode, tally))
        if i == 0:
            _check_config(block, parsed, directory, out)
        previous = block

    report.signatures_checked = tally.signatures
    report.violations = sorted(out, key=Violation.sort_key)
    return report


def verify_chain(
    source: BlockStore | bytes | str | Path,
    directory: MembershipDirectory,
    mode: Mode | str = Mode.STRICT,
) -> IntegrityReport:
    """Verify a whole chain. ``source`` is a store, raw ledger bytes or a file path.
    Nothing stored is trusted: digests are recomputed from content."""
    if isinstance(source, BlockStore):
        data = source.to_bytes()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = Path(source).read_bytes()
    return _verify_parsed(parse_ledger(data), directory, Mode(mode))


def verify_parsed(parsed: ParsedLedger, directory: MembershipDirectory, mode: Mode | str = Mode.STRICT) -> IntegrityReport:
    return _verify_parsed(parsed, directory, Mode(mode))


# -- tampering ---------------------------------------------------------------


class TargetNotFound(LookupError):
    pass


@dataclass(frozen=True)
class Mutation:
    block_number: int
    tx_index: int | None
    field_path: str
    old_value: Any
    new_value: Any

    def to_json(self) -> dict:
        return {
            "block_number": self.block_number,
            "field_path": self.field_path,
            "new_value": self.new_value,
            "old_value": self.old_value,
            "tx_index": self.tx_index,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Mutation":
        return cls(obj["block_number"], obj["tx_index"], obj["field_path"], obj["old_value"], obj["new_value"])


@dataclass(frozen=True)
class Target:
    block_number: int
    tx_index: int | None
    field_path: str

    @classmethod
    def parse(cls, text: str) -> "Target":
        """``BLOCK:TX:PATH`` with TX empty or ``-`` for block-level fields."""
        try:
            block, tx, path = text.split(":", 2)
            return cls(int(block), None if tx in ("", "-") else int(tx), path)
        except ValueError:
            raise ValueError(f"bad target {text!r}; expected BLOCK:TX:PATH") from None


_HEX_DIGITS = "0123456789abcdef"


def _is_hex(value: Any) -> bool:
    return isinstance(value, str) and len(value) > 0 and len(value) % 2 == 0 and all(c in _HEX_DIGITS for c in value)


def mutate_value(value: Any, rule: str, rng: random.Random) -> Any:
    """Produce a different value of the same JSON type."""
    if rule.startswith("set:"):
        return json.loads(rule[4:])
    if rule == "zero":
        if _is_hex(value):
            return "0" * len(value) if set(value) != {"0"} else "1" + value[1:]
        if isinstance(value, bool):
            return not value
        if isinstance(value, int):
            return 0 if value != 0 else 1
        if isinstance(value, str):
            return "" if value else "0"
    if rule != "auto" and rule != "zero":
        raise ValueError(f"unknown mutation rule {rule!r}")
    if _is_hex(value):
        pos = rng.randrange(len(value))
        choices = [c for c in _HEX_DIGITS if c != value[pos]]
        return value[:pos] + rng.choice(choices) + value[pos + 1 :]
    if isinstance(value, bool):
        return not value
    if isinstance(value, int):
        return value + 1
    if isinstance(value, str):
        return value + " (edited)"
    if isinstance(value, dict):
        return {**value, "tampered": "true"}
    if isinstance(value, list):
        return value + [None]
    raise ValueError(f"cannot mutate value of type {type(value).__name__}")


def _walk(obj: Any, parts: Sequence[str]):
    """Return (container, key) addressed by ``parts``."""
    for part in parts[:-1]:
        obj = _child(obj, part)
    last = parts[-1]
    if isinstance(obj, list):
        last = int(last)
        if not 0 <= last < len(obj):
            raise KeyError(last)
    elif not isinstance(obj, dict) or last not in obj:
        raise KeyError(last)
    return obj, last


def _child(obj: Any, part: str):
    if isinstance(obj, list):
        return obj[int(part)]
    if isinstance(obj, dict):
        return obj[part]
    raise KeyError(part)


def _edit_block(block_obj: dict, target: Target, rule: str, rng: random.Random) -> Mutation:
    parts = target.field_path.split(".")
    if target.tx_index is None:
        container, key = _walk(block_obj, parts)
        old = container[key]
        new = mutate_value(old, rule, rng)
        container[key] = new
        return Mutation(target.block_number, None, target.field_path, old, new)

    envelope = block_obj["envelopes"][target.tx_index]
    if parts[0] == "payload" and len(parts) > 1:
        invocation = json.loads(bytes.fromhex(envelope["payload"]).decode("utf-8"))
        container, key = _walk(invocation, parts[1:])
        old = container[key]
        new = mutate_value(old, rule, rng)
        container[key] = new
        envelope["payload"] = canonical_json(invocation).hex()
    else:
        container, key = _walk(envelope, parts)
        old = container[key]
        new = mutate_value(old, rule, rng)
        container[key] = new
    return Mutation(target.block_number, target.tx_index, target.field_path, old, new)


def _record_candidates(lines: list[bytes]) -> list[tuple[int, int, dict]]:
    """(block, tx_index, record) for every create_record transaction in the file."""
    found = []
    for position, raw in enumerate(lines[1:]):
        if position == 0:
            continue
        block = json.loads(raw)
        for tx_index, envelope in enumerate(block["envelopes"]):
            try:
                invocation = json.loads(bytes.fromhex(envelope["payload"]).decode("utf-8"))
            except (ValueError, KeyError, TypeError):
                continue
            if isinstance(invocation, dict) and invocation.get("function") == "create_record":
                found.append((position, tx_index, invocation["args"]["record"]))
    return found


def select_targets(lines: list[bytes], k: int, seed: int) -> list[Target]:
    """Pick k record transactions uniformly at random and one field of each:
    a data hash, a metadata value or the collaborator name."""
    rng = random.Random(seed)
    candidates = _record_candidates(lines)
    if k > len(candidates):
        raise TargetNotFound(f"only {len(candidates)} record transactions available, {k} requested")
    targets = []
    for block, tx_index, record in sorted(rng.sample(candidates, k), key=lambda c: (c[0], c[1])):
        options = []
        for pointer in ("raw_data", "input_data", "output_data"):
            if record.get(pointer):
                options.append(f"payload.args.record.{pointer}.content_hash")
                break
        if record.get("metadata"):
            options.append(f"payload.args.record.metadata.{rng.choice(sorted(record['metadata']))}")
        options.append("payload.args.record.collaborator_name")
        targets.append(Target(block, tx_index, rng.choice(options)))
    return targets


def tamper(
    path: str | Path,
    targets: Iterable[Target] | None = None,
    mutation: str = "auto",
    seed: int = 0,
    k: int | None = None,
) -> list[Mutation]:
    """Edit the ledger file in place and return the manifest of mutations.

    Either pass explicit ``targets`` or a count ``k`` of record transactions to
    pick at random with ``seed``. Block headers are left untouched unless a
    target addresses them.
    """
    path = Path(path)
    lines = path.read_bytes().split(b"\n")
    trailing = lines and lines[-1] == b""
    if trailing:
        lines.pop()
    if targets is None:
        if k is None:
            raise ValueError("pass targets or k")
        targets = select_targets(lines, k, seed)
    rng = random.Random(f"tamper:{seed}")
    manifest = []
    edited: dict[int, dict] = {}
    for target in targets:
        line_no = target.block_number + 1
        if not 1 <= line_no < len(lines):
            raise TargetNotFound(f"no block {target.block_number}")
        block_obj = edited.get(line_no)
        if block_obj is None:
            block_obj = json.loads(lines[line_no])
        try:
            manifest.append(_edit_block(block_obj, target, mutation, rng))
        except (KeyError, IndexError, ValueError, TypeError) as exc:
            if isinstance(exc, ValueError) and "mutation rule" in str(exc):
                raise
            raise TargetNotFound(
                f"block {target.block_number} tx {target.tx_index} has no field {target.field_path!r}"
            ) from exc
        edited[line_no] = block_obj
    for line_no, block_obj in edited.items():
        lines[line_no] = canonical_json(block_obj)
    path.write_bytes(b"".join(line + b"\n" for line in lines))
    return manifest


def apply_manifest(path: str | Path, manifest: Iterable[Mutation]) -> list[Mutation]:
    """Replay a manifest: set every addressed field to its recorded new value."""
    targets = []
    rules = []
    for m in manifest:
        targets.append(Target(m.block_number, m.tx_index, m.field_path))
        rules.append("set:" + json.dumps(m.new_value))
    applied = []
    for target, rule in zip(targets, rules):
        applied.extend(tamper(path, [target], mutation=rule))
    return applied


def manifest_bytes(manifest: Iterable[Mutation]) -> bytes:
    return canonical_json([m.to_json() for m in manifest])


def read_manifest(path: str | Path) -> list[Mutation]:
    return [Mutation.from_json(obj) for obj in json.loads(Path(path).read_text("utf-8"))]

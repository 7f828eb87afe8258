"""The ScientificDataCollection contract and its world state.

Only hashes, sizes and locations of off-chain files are recorded; the files
themselves stay in their repositories.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .encoding import EncodingError, canonical_json, sha256_digest
from .identity import WRITER_ROLES, Certificate, MembershipDirectory, Role, verify_signature
from .ledger import TransactionEnvelope, make_tx_id

CONTRACT_NAME = "ScientificDataCollection"
LIFECYCLE_NAME = "lifecycle"

MEASUREMENT_LEVELS = ("L0", "L1", "L2", "L3")
SIMULATION_LEVELS = ("S0", "S1", "S2", "S3")

ORCID_RE = re.compile(r"\d{4}-\d{4}-\d{4}-\d{3}[0-9X]")
HASH_RE = re.compile(r"[0-9a-f]{64}")


class ContractError(Exception):
    pass


class PermissionDenied(ContractError):
    pass


class DuplicateId(ContractError):
    pass


class NotFound(ContractError):
    pass


class ImmutableField(ContractError):
    pass


class SchemaViolation(ContractError):
    def __init__(self, invariant: str, detail: str = "") -> None:
        super().__init__(f"{invariant}: {detail}" if detail else invariant)
        self.invariant = invariant


class Category(str, enum.Enum):
    MEASUREMENT = "measurement"
    SIMULATION = "simulation"


class Function(str, enum.Enum):
    CREATE_RECORD = "create_record"
    UPDATE_RECORD = "update_record"
    READ_RECORD = "read_record"
    RECORD_EXISTS = "record_exists"
    LIFECYCLE_OP = "lifecycle_op"


@dataclass(frozen=True)
class DataPointer:
    content_hash: str
    location: str
    size_bytes: int

    def validate(self, where: str = "data pointer") -> None:
        if not isinstance(self.content_hash, str) or not HASH_RE.fullmatch(self.content_hash):
            raise SchemaViolation("content_hash_hex64", f"{where} content_hash must be 64 lowercase hex chars")
        if not isinstance(self.location, str) or not self.location:
            raise SchemaViolation("location_nonempty", f"{where} location must be non-empty text")
        if isinstance(self.size_bytes, bool) or not isinstance(self.size_bytes, int) or self.size_bytes < 0:
            raise SchemaViolation("size_nonnegative", f"{where} size_bytes must be a non-negative integer")

    def to_json(self) -> dict:
        return {"content_hash": self.content_hash, "location": self.location, "size_bytes": self.size_bytes}

    @classmethod
    def from_json(cls, obj: Any, where: str = "data pointer") -> "DataPointer":
        _fields(obj, {"content_hash", "location", "size_bytes"}, where)
        return cls(obj["content_hash"], obj["location"], obj["size_bytes"])


@dataclass(frozen=True)
class RecordType:
    category: Category
    level: str

    def to_json(self) -> dict:
        return {"category": self.category.value, "level": self.level}

    @classmethod
    def from_json(cls, obj: Any) -> "RecordType":
        _fields(obj, {"category", "level"}, "record_type")
        try:
            category = Category(obj["category"])
        except ValueError:
            raise SchemaViolation("record_type_category", f"unknown category {obj['category']!r}") from None
        return cls(category, obj["level"])


def _fields(obj: Any, keys: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise SchemaViolation("field_types", f"{where} must be an object")
    missing = keys - set(obj)
    extra = set(obj) - keys
    if missing or extra:
        raise SchemaViolation("field_names", f"{where}: missing {sorted(missing)}, unexpected {sorted(extra)}")


def _flat_map(value: Any, name: str) -> dict[str, str]:
    if not isinstance(value, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in value.items()
    ):
        raise SchemaViolation("metadata_flat_text", f"{name} must map text to text")
    return dict(value)


RECORD_FIELDS = (
    "access_url",
    "collaborator_name",
    "id",
    "input_data",
    "input_metadata",
    "metadata",
    "orcid",
    "output_data",
    "output_metadata",
    "raw_data",
    "record_type",
    "site_name",
)
IMMUTABLE_FIELDS = frozenset({"id", "record_type"})


@dataclass(frozen=True)
class ScientificRecord:
    id: str
    record_type: RecordType
    metadata: Mapping[str, str]
    raw_data: DataPointer | None
    site_name: str
    collaborator_name: str
    orcid: str
    access_url: str
    input_data: DataPointer | None = None
    input_metadata: Mapping[str, str] | None = None
    output_data: DataPointer | None = None
    output_metadata: Mapping[str, str] | None = None

    def validate(self) -> None:
        """Raise SchemaViolation naming the first invariant that fails."""
        if not isinstance(self.id, str) or not self.id:
            raise SchemaViolation("id_nonempty", "id must be non-empty text")
        category, level = self.record_type.category, self.record_type.level
        allowed = MEASUREMENT_LEVELS if category is Category.MEASUREMENT else SIMULATION_LEVELS
        if level not in allowed:
            raise SchemaViolation("record_type_level", f"level {level!r} is not valid for {category.value}")
        _flat_map(self.metadata, "metadata")
        for name in ("input_metadata", "output_metadata"):
            value = getattr(self, name)
            if value is not None:
                _flat_map(value, name)
        for name in ("site_name", "collaborator_name", "access_url"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value:
                raise SchemaViolation(f"{name}_nonempty", f"{name} must be non-empty text")
        if not isinstance(self.orcid, str) or not ORCID_RE.fullmatch(self.orcid):
            raise SchemaViolation("orcid_pattern", f"orcid {self.orcid!r} does not match NNNN-NNNN-NNNN-NNNX")
        for name in ("raw_data", "input_data", "output_data"):
            pointer = getattr(self, name)
            if pointer is not None:
                pointer.validate(name)
        if category is Category.MEASUREMENT and self.raw_data is None:
            raise SchemaViolation("measurement_requires_raw_data", "measurement records must carry raw_data")
        if category is Category.SIMULATION and (self.input_data is None or self.output_data is None):
            raise SchemaViolation(
                "simulation_requires_input_output", "simulation records must carry input_data and output_data"
            )

    def to_json(self) -> dict:
        def pointer(p):
            return None if p is None else p.to_json()

        def mapping(m):
            return None if m is None else dict(m)

        return {
            "access_url": self.access_url,
            "collaborator_name": self.collaborator_name,
            "id": self.id,
            "input_data": pointer(self.input_data),
            "input_metadata": mapping(self.input_metadata),
            "metadata": dict(self.metadata),
            "orcid": self.orcid,
            "output_data": pointer(self.output_data),
            "output_metadata": mapping(self.output_metadata),
            "raw_data": pointer(self.raw_data),
            "record_type": self.record_type.to_json(),
            "site_name": self.site_name,
        }

    @classmethod
    def from_json(cls, obj: Any) -> "ScientificRecord":
        """Parse and validate; optional fields may be omitted or null."""
        if not isinstance(obj, dict):
            raise SchemaViolation("field_types", "record must be an object")
        extra = set(obj) - set(RECORD_FIELDS)
        if extra:
            raise SchemaViolation("field_names", f"unexpected fields {sorted(extra)}")
        required = {"id", "record_type", "metadata", "site_name", "collaborator_name", "orcid", "access_url"}
        missing = required - set(obj)
        if missing:
            raise SchemaViolation("field_names", f"missing fields {sorted(missing)}")

        def pointer(name):
            value = obj.get(name)
            return None if value is None else DataPointer.from_json(value, name)

        def mapping(name):
            value = obj.get(name)
            return None if value is None else _flat_map(value, name)

        record = cls(
            id=obj["id"],
            record_type=RecordType.from_json(obj["record_type"]),
            metadata=_flat_map(obj["metadata"], "metadata"),
            raw_data=pointer("raw_data"),
            site_name=obj["site_name"],
            collaborator_name=obj["collaborator_name"],
            orcid=obj["orcid"],
            access_url=obj["access_url"],
            input_data=pointer("input_data"),
            input_metadata=mapping("input_metadata"),
            output_data=pointer("output_data"),
            output_metadata=mapping("output_metadata"),
        )
        record.validate()
        return record


def make_record_id(level: str, site_name: str, date_yyyymmdd: str, discriminator: str) -> str:
    """DMP-style identifier, e.g. ``L0_bucaramanga_20240115_a1b2c3d4``."""
    return f"{level}_{site_name}_{date_yyyymmdd}_{discriminator}"


@dataclass(frozen=True)
class ContractInvocation:
    contract_name: str
    function: Function
    args: Mapping[str, Any]

    def to_json(self) -> dict:
        return {"args": dict(self.args), "contract_name": self.contract_name, "function": self.function.value}

    def encode(self) -> bytes:
        return canonical_json(self.to_json())

    @classmethod
    def from_json(cls, obj: Any) -> "ContractInvocation":
        if not isinstance(obj, dict) or set(obj) != {"args", "contract_name", "function"}:
            raise EncodingError("not a contract invocation")
        try:
            function = Function(obj["function"])
        except ValueError:
            raise EncodingError(f"unknown function {obj['function']!r}") from None
        if not isinstance(obj["args"], dict):
            raise EncodingError("args must be an object")
        name = obj["contract_name"]
        if name not in (CONTRACT_NAME, LIFECYCLE_NAME):
            raise EncodingError(f"unknown contract {name!r}")
        if (name == LIFECYCLE_NAME) != (function is Function.LIFECYCLE_OP):
            raise EncodingError(f"function {function.value} does not belong to {name}")
        return cls(name, function, obj["args"])

    @classmethod
    def decode(cls, payload: bytes) -> "ContractInvocation":
        try:
            obj = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise EncodingError(str(exc)) from exc
        return cls.from_json(obj)

    @classmethod
    def create(cls, record: ScientificRecord) -> "ContractInvocation":
        return cls(CONTRACT_NAME, Function.CREATE_RECORD, {"record": record.to_json()})

    @classmethod
    def update(cls, record_id: str, changes: Mapping[str, Any]) -> "ContractInvocation":
        return cls(CONTRACT_NAME, Function.UPDATE_RECORD, {"changes": dict(changes), "id": record_id})

    @classmethod
    def lifecycle(cls, operation: str, **args: Any) -> "ContractInvocation":
        return cls(LIFECYCLE_NAME, Function.LIFECYCLE_OP, {"operation": operation, **args})


class WorldState:
    """Committed records keyed by id. Treated as immutable; updates return a new state."""

    __slots__ = ("_entries", "_digest")

    def __init__(self, entries: Mapping[str, ScientificRecord] | None = None) -> None:
        self._entries = dict(entries or {})
        self._digest: bytes | None = None

    @property
    def entries(self) -> Mapping[str, ScientificRecord]:
        return self._entries

    @property
    def state_digest(self) -> bytes:
        if self._digest is None:
            self._digest = sha256_digest(
                canonical_json({key: rec.to_json() for key, rec in self._entries.items()})
            )
        return self._digest

    def with_record(self, record: ScientificRecord) -> "WorldState":
        entries = dict(self._entries)
        entries[record.id] = record
        return WorldState(entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, WorldState) and self._entries == other._entries


@dataclass(frozen=True)
class EndorsementPolicy:
    required: int = 4


def _require_writer(invoker: Certificate) -> None:
    if invoker.role not in WRITER_ROLES:
        raise PermissionDenied(f"role {invoker.role.value} may not modify records")


def create_record(state: WorldState, invoker: Certificate, record: ScientificRecord) -> WorldState:
    _require_writer(invoker)
    record.validate()
    if record.id in state.entries:
        raise DuplicateId(record.id)
    return state.with_record(record)


def update_record(
    state: WorldState, invoker: Certificate, record_id: str, changed_fields: Mapping[str, Any]
) -> WorldState:
    _require_writer(invoker)
    current = state.entries.get(record_id)
    if current is None:
        raise NotFound(record_id)
    blocked = IMMUTABLE_FIELDS & set(changed_fields)
    if blocked:
        raise ImmutableField(", ".join(sorted(blocked)))
    unknown = set(changed_fields) - set(RECORD_FIELDS)
    if unknown:
        raise SchemaViolation("field_names", f"unknown fields {sorted(unknown)}")
    merged = current.to_json()
    for key, value in changed_fields.items():
        merged[key] = value.to_json() if hasattr(value, "to_json") else value
    return state.with_record(ScientificRecord.from_json(merged))


def read_record(state: WorldState, record_id: str) -> ScientificRecord:
    try:
        return state.entries[record_id]
    except KeyError:
        raise NotFound(record_id) from None


def record_exists(state: WorldState, record_id: str) -> bool:
    return record_id in state.entries


def execute(state: WorldState, invoker: Certificate, invocation: ContractInvocation) -> WorldState:
    """Run an invocation against ``state``; raises ContractError on failure."""
    args = invocation.args
    fn = invocation.function
    if fn is Function.LIFECYCLE_OP:
        if invoker.role is not Role.ADMIN:
            raise PermissionDenied("lifecycle operations require an admin identity")
        if not isinstance(args.get("operation"), str):
            raise SchemaViolation("lifecycle_args", "lifecycle_op needs an operation name")
        return state
    if fn is Function.CREATE_RECORD:
        if set(args) != {"record"}:
            raise SchemaViolation("invocation_args", "create_record takes exactly {record}")
        return create_record(state, invoker, ScientificRecord.from_json(args["record"]))
    if fn is Function.UPDATE_RECORD:
        if set(args) != {"changes", "id"} or not isinstance(args["changes"], dict):
            raise SchemaViolation("invocation_args", "update_record takes exactly {id, changes}")
        return update_record(state, invoker, args["id"], args["changes"])
    if set(args) != {"id"} or not isinstance(args["id"], str):
        raise SchemaViolation("invocation_args", f"{fn.value} takes exactly {{id}}")
    if fn is Function.READ_RECORD:
        read_record(state, args["id"])
    return state


def check_signatures(
    envelope: TransactionEnvelope, directory: MembershipDirectory, policy: EndorsementPolicy
) -> str | None:
    """Return None when creator and endorsements satisfy ``policy``, else a reason."""
    header = envelope.header
    creator = directory.get(header.creator)
    if creator is None:
        return "unknown creator"
    if header.tx_id != make_tx_id(header.creator, header.nonce):
        return "tx_id does not match creator and nonce"
    message = envelope.signed_bytes()
    if not verify_signature(creator.public_key, message, envelope.creator_signature):
        return "creator signature invalid"
    endorsers = set()
    for endorsement in envelope.endorsements:
        cert = directory.get(endorsement.endorser)
        if cert is None or cert.role is not Role.PEER:
            return f"endorser {endorsement.endorser} is not a peer"
        if endorsement.endorser in endorsers:
            return f"duplicate endorsement by {endorsement.endorser}"
        if not verify_signature(cert.public_key, message, endorsement.signature):
            return f"endorsement by {endorsement.endorser} invalid"
        endorsers.add(endorsement.endorser)
    if len(endorsers) < policy.required:
        return f"{len(endorsers)} endorsements, policy requires {policy.required}"
    return None


def apply_envelope(
    state: WorldState,
    envelope: TransactionEnvelope,
    directory: MembershipDirectory,
    policy: EndorsementPolicy,
) -> tuple[WorldState, bool]:
    """Commit-time validation. Invalid envelopes are flagged, never raised."""
    if check_signatures(envelope, directory, policy) is not None:
        return state, False
    try:
        invocation = ContractInvocation.decode(envelope.payload)
        new_state = execute(state, directory.get(envelope.header.creator), invocation)
    except (ContractError, EncodingError):
        return state, False
    return new_state, True


def hash_data_file(path: str | Path, location: str | None = None) -> DataPointer:
    import hashlib

    digest = hashlib.sha256()
    size = 0
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
            size += len(chunk)
    return DataPointer(digest.hexdigest(), location if location is not None else str(path), size)

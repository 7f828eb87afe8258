"""Scenario configuration, consortium identities, workloads and fault schedules."""

from __future__ import annotations

import enum
import hashlib
import json
import os
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .contract import ContractInvocation, ScientificRecord
from .encoding import canonical_json
from .identity import Identity, MembershipDirectory, Role, create_ca, enroll
from .ledger import Block, BlockStore, ChannelConfig, make_genesis
from .raft import ConfigError, OrderingConfig

DEFAULT_ORGANIZATIONS = ("OrgUIS", "OrgESPOCH")
SITE_OF = {"OrgUIS": "bucaramanga", "OrgESPOCH": "riobamba"}
DEFAULT_EPOCH_MS = 1_704_067_200_000  # 2024-01-01T00:00:00Z


def peer_name(org: str, index: int) -> str:
    return f"peer{index}.{org}"


def orderer_name(org: str, index: int) -> str:
    return f"orderer{index}.{org}"


def admin_name(org: str) -> str:
    return f"admin.{org}"


def collaborator_name(org: str) -> str:
    return f"collaborator.{org}"


def _pair(value: Any, name: str) -> tuple[int, int]:
    try:
        low, high = value
        return int(low), int(high)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a [min, max] pair") from None


@dataclass(frozen=True)
class ScenarioConfig:
    organizations: tuple[str, ...] = DEFAULT_ORGANIZATIONS
    peers_per_org: int = 3
    orderers: int = 3
    ordering: OrderingConfig = field(default_factory=OrderingConfig)
    endorsement_required: int = 4
    fanout_per_org: int = 2
    channel: str = "lago-channel"
    network_delay_ms: tuple[int, int] = (2, 20)
    commit_timeout_ms: int = 6000
    max_submit_attempts: int = 8
    warmup_ms: int = 5000
    settle_ms: int = 5000
    epoch_ms: int = DEFAULT_EPOCH_MS
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.organizations or len(set(self.organizations)) != len(self.organizations):
            raise ConfigError("organizations must be distinct and non-empty")
        if self.peers_per_org < 1 or self.orderers < 1:
            raise ConfigError("need at least one peer per organization and one orderer")
        if self.endorsement_required < 0:
            raise ConfigError("endorsement_required must be non-negative")
        if self.fanout_per_org * len(self.organizations) < self.endorsement_required:
            raise ConfigError("endorsement fan-out per organization cannot satisfy the policy")
        low, high = self.network_delay_ms
        if not 0 <= low <= high:
            raise ConfigError("network delay range must satisfy 0 <= min <= max")
        if self.commit_timeout_ms <= 0 or self.max_submit_attempts < 1:
            raise ConfigError("commit timeout and attempts must be positive")

    def with_seed(self, seed: int) -> "ScenarioConfig":
        from dataclasses import replace

        return replace(self, seed=seed)

    def to_json(self) -> dict:
        return {
            "channel": self.channel,
            "commit_timeout_ms": self.commit_timeout_ms,
            "endorsement_required": self.endorsement_required,
            "epoch_ms": self.epoch_ms,
            "fanout_per_org": self.fanout_per_org,
            "max_submit_attempts": self.max_submit_attempts,
            "network_delay_ms": list(self.network_delay_ms),
            "ordering": self.ordering.to_json(),
            "orderers": self.orderers,
            "organizations": list(self.organizations),
            "peers_per_org": self.peers_per_org,
            "seed": self.seed,
            "settle_ms": self.settle_ms,
            "warmup_ms": self.warmup_ms,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioConfig":
        if not isinstance(obj, dict):
            raise ConfigError("scenario config must be an object")
        known = set(cls().to_json()) | {"faults"}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown scenario config keys {sorted(unknown)}")
        defaults = cls()
        try:
            return cls(
                organizations=tuple(obj.get("organizations", defaults.organizations)),
                peers_per_org=int(obj.get("peers_per_org", defaults.peers_per_org)),
                orderers=int(obj.get("orderers", defaults.orderers)),
                ordering=OrderingConfig.from_json(obj.get("ordering", {})),
                endorsement_required=int(obj.get("endorsement_required", defaults.endorsement_required)),
                fanout_per_org=int(obj.get("fanout_per_org", defaults.fanout_per_org)),
                channel=str(obj.get("channel", defaults.channel)),
                network_delay_ms=_pair(obj.get("network_delay_ms", defaults.network_delay_ms), "network_delay_ms"),
                commit_timeout_ms=int(obj.get("commit_timeout_ms", defaults.commit_timeout_ms)),
                max_submit_attempts=int(obj.get("max_submit_attempts", defaults.max_submit_attempts)),
                warmup_ms=int(obj.get("warmup_ms", defaults.warmup_ms)),
                settle_ms=int(obj.get("settle_ms", defaults.settle_ms)),
                epoch_ms=int(obj.get("epoch_ms", defaults.epoch_ms)),
                seed=int(obj.get("seed", defaults.seed)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


def seed_bytes(seed: int) -> bytes:
    return hashlib.sha256(f"ledgerlab:{seed}".encode()).digest()


class Consortium:
    """Every identity of a scenario plus the genesis block that anchors them."""

    def __init__(
        self,
        channel: str,
        organizations: Sequence[str],
        identities: dict[str, Identity],
        directory: MembershipDirectory,
        genesis: Block,
    ) -> None:
        self.channel = channel
        self.organizations = list(organizations)
        self.identities = identities
        self.directory = directory
        self.genesis = genesis

    def _names(self, role: Role) -> list[str]:
        return [name for name, ident in self.identities.items() if ident.role is role and not name.startswith("ca.")]

    @property
    def peers(self) -> list[str]:
        return self._names(Role.PEER)

    @property
    def orderers(self) -> list[str]:
        return self._names(Role.ORDERER)

    def peers_of(self, org: str) -> list[str]:
        return [p for p in self.peers if self.identities[p].organization == org]

    def admin(self, org: str) -> Identity:
        return self.identities[admin_name(org)]

    def collaborator(self, org: str) -> Identity:
        return self.identities[collaborator_name(org)]

    def config(self) -> ChannelConfig:
        from .ledger import genesis_config

        return genesis_config(self.genesis)

    def save(self, directory: str | Path) -> None:
        """Write the certificate bundle, private keys and a genesis-only ledger."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        self.directory.write_bundle(out / "bundle.jsonl")
        keys = {name: ident.to_json() for name, ident in self.identities.items()}
        (out / "keys.json").write_bytes(canonical_json({"organizations": self.organizations, "identities": keys}))
        config = self.config()
        BlockStore(self.channel, config.scheme_id, [self.genesis]).write(out / "genesis.jsonl")

    @classmethod
    def load(cls, directory: str | Path, ledger: BlockStore | None = None) -> "Consortium":
        base = Path(directory)
        bundle = MembershipDirectory.read_bundle(base / "bundle.jsonl")
        obj = json.loads((base / "keys.json").read_text("utf-8"))
        identities = {name: Identity.from_json(item) for name, item in obj["identities"].items()}
        for ident in identities.values():
            if bundle.get(ident.name) != ident.certificate:
                raise ConfigError(f"key file identity {ident.name} is not in the bundle")
        if ledger is None:
            ledger = BlockStore.read(base / "genesis.jsonl")
        genesis = ledger.read_block(0)
        return cls(ledger.channel, obj["organizations"], identities, bundle, genesis)


def build_consortium(config: ScenarioConfig, random_keys: bool = False) -> Consortium:
    """One CA per organization, peers, orderers (round-robin across organizations),
    an admin and a collaborator per organization, and the genesis block."""
    seed = None if random_keys else seed_bytes(config.seed)
    directory = MembershipDirectory()
    identities: dict[str, Identity] = {}
    cas = {}
    for org in config.organizations:
        ca, ca_keys = create_ca(org, seed)
        cas[org] = (ca, ca_keys)
        directory.merge(ca.directory)
        identities[ca.name] = Identity(ca.root_certificate, ca_keys)

    def add(org: str, name: str, role: Role) -> None:
        ca, ca_keys = cas[org]
        ident = enroll(ca, ca_keys, name, role, seed)
        directory.register(ident.certificate)
        identities[name] = ident

    for org in config.organizations:
        add(org, admin_name(org), Role.ADMIN)
        add(org, collaborator_name(org), Role.COLLABORATOR)
        for i in range(config.peers_per_org):
            add(org, peer_name(org, i), Role.PEER)
    orderers = []
    for i in range(config.orderers):
        org = config.organizations[i % len(config.organizations)]
        name = orderer_name(org, i)
        add(org, name, Role.ORDERER)
        orderers.append(name)

    channel_config = ChannelConfig(
        channel=config.channel,
        endorsement_required=config.endorsement_required,
        bundle_digest=directory.bundle_digest(),
        orderers=tuple(orderers),
    )
    nonce = os.urandom(16) if random_keys else hashlib.sha256(seed + b"genesis").digest()[:16]
    first = config.organizations[0]
    genesis = make_genesis(channel_config, identities[admin_name(first)], identities[orderers[0]], config.epoch_ms, nonce)
    return Consortium(config.channel, config.organizations, identities, directory, genesis)


# -- workloads ---------------------------------------------------------------


@dataclass(frozen=True)
class WorkloadItem:
    time_ms: int
    submitter: str
    invocation: ContractInvocation

    def to_json(self) -> dict:
        return {"invocation": self.invocation.to_json(), "submitter": self.submitter, "time_ms": self.time_ms}

    @classmethod
    def from_json(cls, obj: dict) -> "WorkloadItem":
        return cls(int(obj["time_ms"]), str(obj["submitter"]), ContractInvocation.from_json(obj["invocation"]))


@dataclass(frozen=True)
class Workload:
    items: tuple[WorkloadItem, ...]

    def __post_init__(self) -> None:
        times = [item.time_ms for item in self.items]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ConfigError("workload times must be non-decreasing")

    def __len__(self) -> int:
        return len(self.items)

    def to_json(self) -> dict:
        return {"items": [item.to_json() for item in self.items]}

    @classmethod
    def from_json(cls, obj: dict) -> "Workload":
        return cls(tuple(WorkloadItem.from_json(item) for item in obj["items"]))

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(canonical_json(self.to_json()))

    @classmethod
    def read(cls, path: str | Path) -> "Workload":
        return cls.from_json(json.loads(Path(path).read_text("utf-8")))


LIFECYCLE_STEPS = ("install", "approve", "approve", "commit")


def org_for_site(site: str, organizations: Sequence[str]) -> str:
    for org in organizations:
        if SITE_OF.get(org) == site:
            return org
    return organizations[0]


def build_workload(
    records: Iterable[ScientificRecord],
    lifecycle: int = 4,
    organizations: Sequence[str] = DEFAULT_ORGANIZATIONS,
    seed: int = 0,
    start_ms: int = 6000,
    interval_ms: int = 7500,
    jitter_ms: int = 500,
    lifecycle_spacing_ms: int = 400,
) -> Workload:
    """Lifecycle envelopes first (one per deployment step), then one record
    submission every ``interval_ms`` +/- ``jitter_ms`` on the simulation clock.

    With the defaults, 430 records and 4 lifecycle steps span about 54 minutes,
    which is roughly 8 transactions per minute.
    """
    rng = random.Random(f"workload:{seed}")
    items = []
    for i in range(lifecycle):
        step = LIFECYCLE_STEPS[i % len(LIFECYCLE_STEPS)]
        org = organizations[0] if step != "approve" else organizations[(i - 1) % len(organizations)]
        invocation = ContractInvocation.lifecycle(
            step, chaincode="ScientificDataCollection", version="1.0", sequence=1, org=org
        )
        items.append(WorkloadItem(i * lifecycle_spacing_ms, admin_name(org), invocation))
    for i, record in enumerate(records):
        offset = rng.randint(-jitter_ms, jitter_ms) if jitter_ms and i > 0 else 0
        org = org_for_site(record.site_name, organizations)
        time_ms = start_ms + i * interval_ms + offset
        items.append(WorkloadItem(time_ms, collaborator_name(org), ContractInvocation.create(record)))
    return Workload(tuple(items))


# -- fault schedules ---------------------------------------------------------


class FaultAction(str, enum.Enum):
    CRASH = "crash"
    RESTART = "restart"
    PARTITION_ON = "partition_on"
    PARTITION_OFF = "partition_off"
    CORRUPT_LEDGER = "corrupt_ledger"


LEADER = "@leader"


@dataclass(frozen=True)
class FaultEvent:
    time_ms: int
    target: str  # node name, or "@leader" for the orderer leading at that moment
    action: FaultAction

    def to_json(self) -> dict:
        return {"action": self.action.value, "target": self.target, "time_ms": self.time_ms}

    @classmethod
    def from_json(cls, obj: dict) -> "FaultEvent":
        try:
            return cls(int(obj["time_ms"]), str(obj["target"]), FaultAction(obj["action"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad fault event {obj!r}: {exc}") from exc


@dataclass(frozen=True)
class FaultSchedule:
    events: tuple[FaultEvent, ...] = ()

    def __post_init__(self) -> None:
        times = [e.time_ms for e in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ConfigError("fault times must be non-decreasing")

    def to_json(self) -> dict:
        return {"events": [e.to_json() for e in self.events]}

    @classmethod
    def from_json(cls, obj: Any) -> "FaultSchedule":
        events = obj.get("events", []) if isinstance(obj, dict) else obj
        return cls(tuple(FaultEvent.from_json(e) for e in events))

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(canonical_json(self.to_json()))

    @classmethod
    def read(cls, path: str | Path) -> "FaultSchedule":
        return cls.from_json(json.loads(Path(path).read_text("utf-8")))


def leader_crash_schedule(at_ms: int, restart_after_ms: int | None = 20_000) -> FaultSchedule:
    events = [FaultEvent(at_ms, LEADER, FaultAction.CRASH)]
    if restart_after_ms is not None:
        events.append(FaultEvent(at_ms + restart_after_ms, LEADER, FaultAction.RESTART))
    return FaultSchedule(tuple(events))


def peer_corrupt_schedule(peer: str, at_ms: int) -> FaultSchedule:
    return FaultSchedule((FaultEvent(at_ms, peer, FaultAction.CORRUPT_LEDGER),))


def partition_schedule(node: str, at_ms: int, duration_ms: int) -> FaultSchedule:
    return FaultSchedule(
        (FaultEvent(at_ms, node, FaultAction.PARTITION_ON), FaultEvent(at_ms + duration_ms, node, FaultAction.PARTITION_OFF))
    )

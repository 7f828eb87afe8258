"""Gateway: record ingestion, endorsement collection, submission and ledger statistics."""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

from .contract import (
    ContractError,
    ContractInvocation,
    PermissionDenied,
    ScientificRecord,
    hash_data_file,
)
from .identity import WRITER_ROLES, Identity
from .ledger import BlockStore, TransactionEnvelope, TransactionHeader, header_digest, signed_bytes
from .peer import PeerError, Proposal, detect_divergence
from .raft import ConfigError, NoLeaderAvailable, SubmitAck, SubmitEnvelope

if TYPE_CHECKING:
    from .network import ScenarioConfig
    from .sim import Simulation


class GatewayError(Exception):
    pass


class InsufficientEndorsements(GatewayError):
    pass


class CommitTimeout(GatewayError):
    pass


class ParseError(ValueError):
    pass


class RecordFileInvalid(ValueError):
    """Raised by :func:`ingest_records`; ``failures`` lists (index, reason) pairs."""

    def __init__(self, failures: list[tuple[int, str]]) -> None:
        self.failures = failures
        lines = "; ".join(f"[{i}] {reason}" for i, reason in failures)
        super().__init__(f"{len(failures)} invalid record(s): {lines}")


class EmptyLedger(ValueError):
    pass


@dataclass(frozen=True)
class GatewayConfig:
    identity: str
    channel: str = "lago-channel"
    peers: tuple[str, ...] = ()
    orderers: tuple[str, ...] = ()
    organizations: tuple[str, ...] = ("OrgUIS", "OrgESPOCH")
    fanout_per_org: int = 2
    endorsement_required: int = 4
    poll_interval_ms: int = 0

    def __post_init__(self) -> None:
        if self.fanout_per_org * len(self.organizations) < self.endorsement_required:
            raise ConfigError(
                f"fan-out {self.fanout_per_org} x {len(self.organizations)} organizations "
                f"cannot reach {self.endorsement_required} endorsements"
            )
        if self.poll_interval_ms < 0:
            raise ConfigError("poll_interval_ms must be non-negative")

    def to_json(self) -> dict:
        return {
            "channel": self.channel,
            "endorsement_required": self.endorsement_required,
            "fanout_per_org": self.fanout_per_org,
            "identity": self.identity,
            "orderers": list(self.orderers),
            "organizations": list(self.organizations),
            "peers": list(self.peers),
            "poll_interval_ms": self.poll_interval_ms,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GatewayConfig":
        try:
            return cls(
                identity=str(obj["identity"]),
                channel=str(obj.get("channel", "lago-channel")),
                peers=tuple(obj.get("peers", ())),
                orderers=tuple(obj.get("orderers", ())),
                organizations=tuple(obj.get("organizations", ("OrgUIS", "OrgESPOCH"))),
                fanout_per_org=int(obj.get("fanout_per_org", 2)),
                endorsement_required=int(obj.get("endorsement_required", 4)),
                poll_interval_ms=int(obj.get("poll_interval_ms", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad gateway config: {exc}") from exc

    @classmethod
    def read(cls, path: str | Path) -> "GatewayConfig":
        return cls.from_json(json.loads(Path(path).read_text("utf-8")))


@dataclass(frozen=True)
class Receipt:
    tx_id: str
    block_number: int
    valid: bool

    def to_json(self) -> dict:
        return {"block_number": self.block_number, "tx_id": self.tx_id, "valid": self.valid}


@dataclass
class _Submission:
    envelope: TransactionEnvelope
    attempts: int = 0
    target: int = 0
    receipt: Receipt | None = None
    error: Exception | None = None

    @property
    def tx_id(self) -> str:
        return self.envelope.tx_id


class Gateway:
    """The client side of the pipeline, driven by the simulator's clock."""

    name = "gateway"

    def __init__(self, sim: "Simulation", config: "ScenarioConfig") -> None:
        self.sim = sim
        self.fanout_per_org = config.fanout_per_org
        self.commit_timeout_ms = config.commit_timeout_ms
        self.max_attempts = config.max_submit_attempts
        self.required = config.endorsement_required
        self._nonce_rng = random.Random(f"nonce:{config.seed}")
        self._select_rng = random.Random(f"endorse:{config.seed}")
        self._target = 0
        self.pending: dict[str, _Submission] = {}
        self.submitted_tx_ids: list[str] = []
        self.receipts: list[Receipt] = []
        self.failures: list[dict] = []

    # -- peer health -----------------------------------------------------

    def _majority(self) -> tuple[bytes, str] | None:
        peers = self.sim.peers
        live = [n for n, p in peers.items() if self.sim.reachable(n) and not p.diverged]
        if not live:
            return None
        votes = Counter(peers[n].head_digest() for n in live)
        holder = {}
        for n in live:
            holder.setdefault(peers[n].head_digest(), n)
        digest = max(votes, key=lambda d: (votes[d], peers[holder[d]].height, d))
        return digest, holder[digest]

    def authoritative_peer(self) -> str | None:
        majority = self._majority()
        return None if majority is None else majority[1]

    def poll(self) -> list[str]:
        """Peers fit to endorse: reachable, at the majority head, and passing their audit.

        A peer whose chain is corrupt or forked from the majority is marked
        diverged and stays excluded until resync. A peer that is merely behind
        is skipped for this round only.
        """
        majority = self._majority()
        if majority is None:
            return []
        digest, holder = majority
        reference = self.sim.peers[holder].store.blocks
        eligible = []
        for name, peer in self.sim.peers.items():
            if not self.sim.reachable(name) or peer.diverged:
                continue
            if not detect_divergence(peer, digest):
                eligible.append(name)
                continue
            if not peer.audit():
                peer.diverged = True
            elif peer.height > len(reference) or header_digest(reference[peer.height - 1].header) != peer.head_digest():
                peer.diverged = True
            if peer.diverged:
                self.sim.faults.append(
                    {"action": "divergence_detected", "requested": name, "target": name, "time_ms": self.sim.now}
                )
        return eligible

    def _select(self, eligible: list[str]) -> list[str]:
        by_org: dict[str, list[str]] = {}
        for name in eligible:
            by_org.setdefault(self.sim.peers[name].organization, []).append(name)
        chosen = []
        for org in self.sim.consortium.organizations:
            candidates = by_org.get(org, [])
            chosen.extend(self._select_rng.sample(candidates, min(self.fanout_per_org, len(candidates))))
        if len(chosen) < self.required:
            rest = [n for n in eligible if n not in chosen]
            need = min(self.required - len(chosen), len(rest))
            chosen.extend(self._select_rng.sample(rest, need))
        if len(chosen) < self.required:
            raise InsufficientEndorsements(f"{len(chosen)} healthy peers, policy requires {self.required}")
        return sorted(chosen)

    # -- submission ------------------------------------------------------

    def build_proposal(self, identity: Identity, invocation: ContractInvocation) -> Proposal:
        if identity.role not in WRITER_ROLES:
            raise PermissionDenied(f"{identity.name} ({identity.role.value}) may not submit transactions")
        nonce = self._nonce_rng.getrandbits(128).to_bytes(16, "big")
        header = TransactionHeader.create(identity.name, self.sim.consortium.channel, self.sim.timestamp(), nonce)
        payload = invocation.encode()
        return Proposal(header, payload, identity.sign(signed_bytes(header, payload)))

    def endorse(self, proposal: Proposal, endorsers: list[str] | None = None) -> TransactionEnvelope:
        if endorsers is None:
            endorsers = self._select(self.poll())
        endorsements = []
        for name in endorsers:
            self.sim.record_proposal(name)
            endorsements.append(self.sim.peers[name].endorse_proposal(proposal))
        return TransactionEnvelope(proposal.header, proposal.payload, proposal.creator_signature, tuple(endorsements))

    def start(self, identity: Identity, invocation: ContractInvocation) -> _Submission:
        envelope = self.endorse(self.build_proposal(identity, invocation))
        return self.submit_envelope(envelope)

    def submit_envelope(self, envelope: TransactionEnvelope) -> _Submission:
        """Hand an endorsed envelope to ordering and track it until commit or failure."""
        submission = _Submission(envelope, target=self._target)
        self.pending[envelope.tx_id] = submission
        self.submitted_tx_ids.append(envelope.tx_id)
        self._send(submission)
        return submission

    def _send(self, submission: _Submission) -> None:
        submission.attempts += 1
        orderers = self.sim.consortium.orderers
        target = orderers[submission.target % len(orderers)]
        self.sim.send(SubmitEnvelope(0, self.name, target, submission.envelope, self.name))
        self.sim.scheduler.at(
            self.sim.now + self.commit_timeout_ms, self._on_timeout, submission.tx_id, submission.attempts
        )

    def _on_timeout(self, tx_id: str, attempt: int) -> None:
        submission = self.pending.get(tx_id)
        if submission is None or submission.attempts != attempt:
            return
        if submission.attempts >= self.max_attempts:
            reachable = sum(1 for n in self.sim.orderers if self.sim.reachable(n))
            quorum = next(iter(self.sim.orderers.values())).quorum()
            if reachable < quorum or self.sim.current_leader() is None:
                error: Exception = NoLeaderAvailable(f"no ordering quorum for {tx_id}")
            else:
                error = CommitTimeout(f"{tx_id} not committed after {attempt} attempts")
            self._resolve(submission, error=error)
            return
        # each retry moves on to the next orderer in the ring
        submission.target += 1
        self._send(submission)

    def on_ack(self, ack: SubmitAck) -> None:
        orderers = self.sim.consortium.orderers
        if ack.sender in orderers:
            self._target = orderers.index(ack.sender)

    def on_commit(self, peer: str, block) -> None:
        for envelope, flag in zip(block.envelopes, block.metadata.validity_flags):
            submission = self.pending.get(envelope.tx_id)
            if submission is not None:
                self._resolve(submission, receipt=Receipt(envelope.tx_id, block.number, flag))

    def _resolve(self, submission: _Submission, receipt: Receipt | None = None, error: Exception | None = None) -> None:
        del self.pending[submission.tx_id]
        submission.receipt = receipt
        submission.error = error
        if receipt is not None:
            self.receipts.append(receipt)
        else:
            self._record_failure(submission.tx_id, error)

    def _record_failure(self, tx_id: str | None, error: Exception) -> None:
        self.failures.append(
            {"error": type(error).__name__, "detail": str(error), "time_ms": self.sim.now, "tx_id": tx_id}
        )

    def propose(self, identity: Identity, invocation: ContractInvocation) -> None:
        """Scheduled workload step: failures are recorded rather than raised."""
        try:
            self.start(identity, invocation)
        except (GatewayError, PeerError, ContractError) as exc:
            self._record_failure(None, exc)

    def submit(self, identity: Identity, invocation: ContractInvocation) -> Receipt:
        """Propose, order and wait for commit on the simulation clock."""
        submission = self.start(identity, invocation)
        self.sim.run_until_resolved(submission.tx_id)
        if submission.tx_id in self.pending:
            self._resolve(submission, error=CommitTimeout(f"{submission.tx_id} unresolved"))
        if submission.error is not None:
            raise submission.error
        self._await_peers(submission.receipt.block_number + 1)
        return submission.receipt

    def _await_peers(self, height: int) -> None:
        # let delivery reach every healthy peer so the next poll does not see them lagging
        sim = self.sim

        def settled() -> bool:
            return all(
                p.height >= height for n, p in sim.peers.items() if sim.reachable(n) and not p.diverged
            )

        sim.scheduler.run_until(done=settled, stop=sim.now + self.commit_timeout_ms)

    def submit_record(self, record: ScientificRecord, identity: Identity) -> Receipt:
        return self.submit(identity, ContractInvocation.create(record))


# -- ingestion and off-chain checks -------------------------------------------


def ingest_records(path: str | Path) -> list[ScientificRecord]:
    """Load a JSON array of records, validating every entry before returning any."""
    try:
        items = json.loads(Path(path).read_text("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(items, list):
        raise ParseError(f"{path}: expected a JSON array of records")
    records: list[ScientificRecord] = []
    failures: list[tuple[int, str]] = []
    for index, item in enumerate(items):
        try:
            records.append(ScientificRecord.from_json(item))
        except (ContractError, ValueError, TypeError, KeyError) as exc:
            failures.append((index, str(exc) or type(exc).__name__))
    if failures:
        raise RecordFileInvalid(failures)
    return records


def check_offchain(record: ScientificRecord, path: str | Path) -> bool:
    """True iff the local file's SHA-256 equals the record's raw-data hash.

    Simulation records carry no raw data; their input and output files are
    checked instead.
    """
    pointers = [p for p in (record.raw_data, record.input_data, record.output_data) if p is not None]
    digest = hash_data_file(path).content_hash
    return any(p.content_hash == digest for p in pointers)


# -- statistics ----------------------------------------------------------------


@dataclass(frozen=True)
class StatsSummary:
    block_count: int
    transaction_count: int
    contract_invocation_count: int
    valid_transaction_count: int
    first_timestamp: int | None
    last_timestamp: int | None
    transactions_per_minute: float | None = field(default=None)

    def to_json(self) -> dict[str, Any]:
        tpm = None if self.transactions_per_minute is None else f"{self.transactions_per_minute:.4f}"
        return {
            "block_count": self.block_count,
            "contract_invocation_count": self.contract_invocation_count,
            "first_timestamp": self.first_timestamp,
            "last_timestamp": self.last_timestamp,
            "transaction_count": self.transaction_count,
            "transactions_per_minute": tpm,
            "valid_transaction_count": self.valid_transaction_count,
        }


def stats(store: BlockStore) -> StatsSummary:
    """Full scan. The genesis configuration envelope is not counted as a transaction;
    the rate uses the span between the first and last transaction timestamps."""
    from .sim import is_contract_invocation

    if store.height == 0:
        raise EmptyLedger("ledger has no blocks")
    transactions = invocations = valid = 0
    timestamps = []
    for block in store.blocks[1:]:
        for envelope, flag in zip(block.envelopes, block.metadata.validity_flags):
            transactions += 1
            valid += bool(flag)
            invocations += is_contract_invocation(envelope.payload)
            timestamps.append(envelope.header.timestamp)
    first = min(timestamps) if timestamps else None
    last = max(timestamps) if timestamps else None
    rate = None
    if timestamps and last > first:
        rate = transactions / ((last - first) / 60_000)
    return StatsSummary(store.height, transactions, invocations, valid, first, last, rate)

"""RAFT ordering service.

Each orderer is a :class:`RaftNode` driven from outside through ``tick`` and
``step``. Neither method reads a clock or performs I/O: time comes in as an
argument and outbound messages are returned, so the same node runs unchanged
under the deterministic simulator or a real event loop.

Log entries carry whole blocks. A leader appends an empty entry when it takes
office so that entries left over from earlier terms get committed.
"""

from __future__ import annotations

import enum
import logging
import random
from collections import deque
from dataclasses import dataclass
from typing import Union

from .identity import Identity, MembershipDirectory, verify_signature
from .ledger import Block, TransactionEnvelope, build_block, header_digest

log = logging.getLogger(__name__)

MAX_ENTRIES_PER_APPEND = 64


class ConfigError(ValueError):
    pass


class NoLeaderAvailable(Exception):
    pass


class Role(str, enum.Enum):
    FOLLOWER = "follower"
    CANDIDATE = "candidate"
    LEADER = "leader"


@dataclass(frozen=True)
class OrderingConfig:
    batch_timeout_ms: int = 2000
    max_envelopes_per_block: int = 10
    election_timeout_ms: tuple[int, int] = (1500, 3000)
    heartbeat_ms: int = 500

    def __post_init__(self) -> None:
        low, high = self.election_timeout_ms
        if not low < high:
            raise ConfigError("election timeout range must satisfy min < max")
        if not 0 < self.heartbeat_ms < low:
            raise ConfigError("heartbeat interval must be positive and below the election timeout")
        if self.max_envelopes_per_block < 1:
            raise ConfigError("max_envelopes_per_block must be positive")
        if self.batch_timeout_ms < 1:
            raise ConfigError("batch_timeout_ms must be positive")

    def to_json(self) -> dict:
        return {
            "batch_timeout_ms": self.batch_timeout_ms,
            "election_timeout_ms": list(self.election_timeout_ms),
            "heartbeat_ms": self.heartbeat_ms,
            "max_envelopes_per_block": self.max_envelopes_per_block,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "OrderingConfig":
        try:
            low, high = obj.get("election_timeout_ms", (1500, 3000))
            return cls(
                batch_timeout_ms=int(obj.get("batch_timeout_ms", 2000)),
                max_envelopes_per_block=int(obj.get("max_envelopes_per_block", 10)),
                election_timeout_ms=(int(low), int(high)),
                heartbeat_ms=int(obj.get("heartbeat_ms", 500)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad ordering config: {exc}") from exc


@dataclass(frozen=True)
class LogEntry:
    term: int
    block: Block | None  # None marks the leader's start-of-term entry


@dataclass(frozen=True)
class RequestVote:
    term: int
    sender: str
    receiver: str
    last_log_index: int
    last_log_term: int


@dataclass(frozen=True)
class VoteReply:
    term: int
    sender: str
    receiver: str
    granted: bool


@dataclass(frozen=True)
class AppendEntries:
    term: int
    sender: str
    receiver: str
    prev_log_index: int
    prev_log_term: int
    entries: tuple[LogEntry, ...]
    leader_commit: int


@dataclass(frozen=True)
class AppendReply:
    term: int
    sender: str
    receiver: str
    success: bool
    match_index: int


@dataclass(frozen=True)
class SubmitEnvelope:
    term: int
    sender: str
    receiver: str
    envelope: TransactionEnvelope
    client: str


@dataclass(frozen=True)
class SubmitAck:
    """Leader to client: the envelope is queued (or already ordered)."""

    term: int
    sender: str
    receiver: str
    tx_id: str
    duplicate: bool


RaftMessage = Union[RequestVote, VoteReply, AppendEntries, AppendReply, SubmitEnvelope, SubmitAck]


class RaftNode:
    """One orderer. Log indices are 1-based; index 0 is the empty prefix."""

    def __init__(
        self,
        node_id: str,
        peers: list[str],
        config: OrderingConfig,
        identity: Identity,
        base_number: int,
        base_digest: bytes,
        rng: random.Random,
        directory: MembershipDirectory | None = None,
        now: int = 0,
        base_tx_ids: frozenset[str] = frozenset(),
    ) -> None:
        self.node_id = node_id
        self.peers = [p for p in peers if p != node_id]
        self.config = config
        self.identity = identity
        self.directory = directory
        self.rng = rng
        # tip of the chain the RAFT log extends (the genesis block, or an imported ledger head)
        self.base_number = base_number
        self.base_digest = base_digest
        self.base_tx_ids = base_tx_ids

        # persistent state
        self.current_term = 0
        self.voted_for: str | None = None
        self.log: list[LogEntry] = []
        self.commit_index = 0
        self._log_tx_ids: dict[str, int] = {}

        self._reset_volatile(now)

    def _reset_volatile(self, now: int) -> None:
        self.role = Role.FOLLOWER
        self.leader_id: str | None = None
        self.votes: set[str] = set()
        self.next_index: dict[str, int] = {}
        self.match_index: dict[str, int] = {}
        self.pending: deque[TransactionEnvelope] = deque()
        self.pending_ids: set[str] = set()
        self.batch_deadline: int | None = None
        self.last_heartbeat = now
        self.election_deadline = now + self._election_timeout()

    def _election_timeout(self) -> int:
        low, high = self.config.election_timeout_ms
        return self.rng.randint(low, high)

    # -- queries ---------------------------------------------------------

    @property
    def last_log_index(self) -> int:
        return len(self.log)

    @property
    def last_log_term(self) -> int:
        return self.log[-1].term if self.log else 0

    def term_at(self, index: int) -> int:
        return self.log[index - 1].term if index > 0 else 0

    def quorum(self) -> int:
        return (len(self.peers) + 1) // 2 + 1

    def committed_blocks(self) -> list[Block]:
        return [e.block for e in self.log[: self.commit_index] if e.block is not None]

    def knows_tx(self, tx_id: str) -> bool:
        return tx_id in self._log_tx_ids or tx_id in self.pending_ids or tx_id in self.base_tx_ids

    def next_wakeup(self) -> int:
        if self.role is Role.LEADER:
            wake = self.last_heartbeat + self.config.heartbeat_ms
            if self.batch_deadline is not None:
                wake = min(wake, self.batch_deadline)
            return wake
        return self.election_deadline

    # -- lifecycle -------------------------------------------------------

    def restart(self, now: int) -> None:
        """Recover after a crash: persistent state survives, volatile state resets."""
        self._reset_volatile(now)

    # -- transitions -----------------------------------------------------

    def tick(self, now: int) -> list[RaftMessage]:
        out: list[RaftMessage] = []
        if self.role is Role.LEADER:
            if self.batch_deadline is not None and now >= self.batch_deadline and self.pending:
                self.cut_block(now)
                out.extend(self._broadcast_append(now))
            elif now >= self.last_heartbeat + self.config.heartbeat_ms:
                out.extend(self._broadcast_append(now))
        elif now >= self.election_deadline:
            out.extend(self._start_election(now))
        return out

    def step(self, msg: RaftMessage, now: int) -> list[RaftMessage]:
        if isinstance(msg, SubmitEnvelope):
            return self._on_submit(msg, now)
        if isinstance(msg, SubmitAck):
            return []
        if msg.term > self.current_term:
            self._become_follower(msg.term, now, leader=msg.sender if isinstance(msg, AppendEntries) else None)
        if isinstance(msg, RequestVote):
            return self._on_request_vote(msg, now)
        if isinstance(msg, VoteReply):
            return self._on_vote_reply(msg, now)
        if isinstance(msg, AppendEntries):
            return self._on_append_entries(msg, now)
        if isinstance(msg, AppendReply):
            return self._on_append_reply(msg, now)
        log.debug("%s dropping unknown message %r", self.node_id, msg)
        return []

    def submit(self, envelope: TransactionEnvelope, now: int, client: str = "client") -> list[RaftMessage]:
        return self._on_submit(SubmitEnvelope(0, client, self.node_id, envelope, client), now)

    def _become_follower(self, term: int, now: int, leader: str | None = None) -> None:
        if term > self.current_term:
            self.current_term = term
            self.voted_for = None
        if self.role is not Role.FOLLOWER:
            # queued envelopes are lost on step-down; clients resubmit on timeout
            self.pending.clear()
            self.pending_ids.clear()
            self.batch_deadline = None
        self.role = Role.FOLLOWER
        self.votes = set()
        self.leader_id = leader
        self.election_deadline = now + self._election_timeout()

    def _start_election(self, now: int) -> list[RaftMessage]:
        self.role = Role.CANDIDATE
        self.current_term += 1
        self.voted_for = self.node_id
        self.votes = {self.node_id}
        self.leader_id = None
        self.election_deadline = now + self._election_timeout()
        if len(self.votes) >= self.quorum():
            return self._become_leader(now)
        return [
            RequestVote(self.current_term, self.node_id, peer, self.last_log_index, self.last_log_term)
            for peer in self.peers
        ]

    def _become_leader(self, now: int) -> list[RaftMessage]:
        self.role = Role.LEADER
        self.leader_id = self.node_id
        self.next_index = {p: self.last_log_index + 1 for p in self.peers}
        self.match_index = {p: 0 for p in self.peers}
        self._append(LogEntry(self.current_term, None))
        self._advance_commit()
        return self._broadcast_append(now)

    def _on_request_vote(self, msg: RequestVote, now: int) -> list[RaftMessage]:
        granted = False
        if msg.term == self.current_term and self.voted_for in (None, msg.sender):
            up_to_date = (msg.last_log_term, msg.last_log_index) >= (self.last_log_term, self.last_log_index)
            if up_to_date:
                granted = True
                self.voted_for = msg.sender
                self.election_deadline = now + self._election_timeout()
        return [VoteReply(self.current_term, self.node_id, msg.sender, granted)]

    def _on_vote_reply(self, msg: VoteReply, now: int) -> list[RaftMessage]:
        if self.role is not Role.CANDIDATE or msg.term != self.current_term or not msg.granted:
            return []
        self.votes.add(msg.sender)
        if len(self.votes) >= self.quorum():
            return self._become_leader(now)
        return []

    def _on_append_entries(self, msg: AppendEntries, now: int) -> list[RaftMessage]:
        if msg.term < self.current_term:
            return [AppendReply(self.current_term, self.node_id, msg.sender, False, 0)]
        if self.role is not Role.FOLLOWER:
            self._become_follower(msg.term, now, leader=msg.sender)
        self.leader_id = msg.sender
        self.election_deadline = now + self._election_timeout()

        if msg.prev_log_index > self.last_log_index:
            return [AppendReply(self.current_term, self.node_id, msg.sender, False, self.last_log_index)]
        if self.term_at(msg.prev_log_index) != msg.prev_log_term:
            # step back one entry below the conflict
            return [AppendReply(self.current_term, self.node_id, msg.sender, False, msg.prev_log_index - 1)]

        index = msg.prev_log_index
        for entry in msg.entries:
            index += 1
            if index <= self.last_log_index:
                if self.log[index - 1].term == entry.term:
                    continue
                if index <= self.commit_index:
                    raise AssertionError("log matching violated below commit index")
                self._truncate(index - 1)
            self._append(entry)
        last_new = msg.prev_log_index + len(msg.entries)
        if msg.leader_commit > self.commit_index:
            self.commit_index = max(self.commit_index, min(msg.leader_commit, last_new))
        return [AppendReply(self.current_term, self.node_id, msg.sender, True, last_new)]

    def _on_append_reply(self, msg: AppendReply, now: int) -> list[RaftMessage]:
        if self.role is not Role.LEADER or msg.term != self.current_term:
            return []
        peer = msg.sender
        if msg.success:
            if msg.match_index > self.match_index.get(peer, 0):
                self.match_index[peer] = msg.match_index
            self.next_index[peer] = self.match_index[peer] + 1
            self._advance_commit()
            if self.next_index[peer] <= self.last_log_index:
                return [self._append_for(peer)]
            return []
        self.next_index[peer] = max(1, min(self.next_index.get(peer, 1) - 1, msg.match_index + 1))
        return [self._append_for(peer)]

    def _on_submit(self, msg: SubmitEnvelope, now: int) -> list[RaftMessage]:
        if self.role is not Role.LEADER:
            if self.leader_id is not None and self.leader_id != self.node_id:
                return [SubmitEnvelope(msg.term, self.node_id, self.leader_id, msg.envelope, msg.client)]
            log.debug("%s has no leader; dropping %s", self.node_id, msg.envelope.tx_id)
            return []
        envelope = msg.envelope
        if self.knows_tx(envelope.tx_id):
            return [SubmitAck(self.current_term, self.node_id, msg.client, envelope.tx_id, True)]
        if self.directory is not None and not self._creator_ok(envelope):
            log.warning("%s rejecting %s: creator signature invalid", self.node_id, envelope.tx_id)
            return []
        if not self.pending:
            self.batch_deadline = now + self.config.batch_timeout_ms
        self.pending.append(envelope)
        self.pending_ids.add(envelope.tx_id)
        out: list[RaftMessage] = [SubmitAck(self.current_term, self.node_id, msg.client, envelope.tx_id, False)]
        if len(self.pending) >= self.config.max_envelopes_per_block:
            self.cut_block(now)
            out.extend(self._broadcast_append(now))
        return out

    def _creator_ok(self, envelope: TransactionEnvelope) -> bool:
        cert = self.directory.get(envelope.header.creator)
        return cert is not None and verify_signature(
            cert.public_key, envelope.signed_bytes(), envelope.creator_signature
        )

    # -- block cutting ---------------------------------------------------

    def chain_tip(self) -> tuple[int, bytes]:
        for entry in reversed(self.log):
            if entry.block is not None:
                return entry.block.number, header_digest(entry.block.header)
        return self.base_number, self.base_digest

    def cut_block(self, now: int) -> Block:
        """Drain up to the size cap, in arrival order, into a new log entry."""
        if self.role is not Role.LEADER or not self.pending:
            raise RuntimeError("cut_block needs a leader with queued envelopes")
        batch = []
        while self.pending and len(batch) < self.config.max_envelopes_per_block:
            envelope = self.pending.popleft()
            self.pending_ids.discard(envelope.tx_id)
            batch.append(envelope)
        number, digest = self.chain_tip()
        block = build_block(number + 1, digest, batch, self.identity)
        self._append(LogEntry(self.current_term, block))
        self.batch_deadline = now + self.config.batch_timeout_ms if self.pending else None
        self._advance_commit()
        return block

    # -- replication -----------------------------------------------------

    def _append(self, entry: LogEntry) -> None:
        self.log.append(entry)
        if entry.block is not None:
            for envelope in entry.block.envelopes:
                self._log_tx_ids[envelope.tx_id] = len(self.log)

    def _truncate(self, length: int) -> None:
        del self.log[length:]
        self._log_tx_ids = {k: v for k, v in self._log_tx_ids.items() if v <= length}

    def _append_for(self, peer: str) -> AppendEntries:
        next_index = self.next_index.get(peer, self.last_log_index + 1)
        prev = next_index - 1
        entries = tuple(self.log[prev : prev + MAX_ENTRIES_PER_APPEND])
        return AppendEntries(
            self.current_term, self.node_id, peer, prev, self.term_at(prev), entries, self.commit_index
        )

    def _broadcast_append(self, now: int) -> list[RaftMessage]:
        self.last_heartbeat = now
        return [self._append_for(peer) for peer in self.peers]

    def _advance_commit(self) -> None:
        for index in range(self.last_log_index, self.commit_index, -1):
            if self.log[index - 1].term != self.current_term:
                break
            replicated = 1 + sum(1 for p in self.peers if self.match_index.get(p, 0) >= index)
            if replicated >= self.quorum():
                self.commit_index = index
                break

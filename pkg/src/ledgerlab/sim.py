"""Deterministic discrete-event simulation of the whole network.

Time is an integer number of milliseconds. Every source of randomness is a
``random.Random`` seeded from the scenario seed, and events with equal times
run in scheduling order, so a run is a pure function of its inputs.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable

from .contract import CONTRACT_NAME, ContractInvocation
from .encoding import EncodingError, canonical_json, to_hex
from .ledger import Block, BlockStore, ChainLinkError, header_digest
from .network import (
    LEADER,
    Consortium,
    FaultAction,
    FaultEvent,
    FaultSchedule,
    ScenarioConfig,
    Workload,
    build_consortium,
)
from .peer import BlockRejected, Peer, PeerError, PeerStatus, PeerUnavailable, resync
from .raft import ConfigError, RaftMessage, RaftNode, Role, SubmitAck

log = logging.getLogger(__name__)

GATEWAY = "gateway"


@dataclass(frozen=True)
class Deliver:
    """Orderer to peer: one committed block."""

    sender: str
    receiver: str
    block: Block


class Scheduler:
    def __init__(self) -> None:
        self.now = 0
        self._queue: list[tuple[int, int, Callable[..., None], tuple]] = []
        self._seq = itertools.count()

    def at(self, time: int, fn: Callable[..., None], *args: Any) -> None:
        heapq.heappush(self._queue, (max(time, self.now), next(self._seq), fn, args))

    def run_until(self, stop: int | None = None, done: Callable[[], bool] | None = None) -> None:
        while self._queue:
            if done is not None and done():
                return
            time = self._queue[0][0]
            if stop is not None and time > stop:
                break
            _, _, fn, args = heapq.heappop(self._queue)
            self.now = time
            fn(*args)
        if stop is not None and self.now < stop and (done is None or not done()):
            self.now = stop


@dataclass
class ScenarioReport:
    seed: int
    blocks_committed: int
    transactions_total: int
    contract_invocations: int
    valid_transactions: int
    rejected_envelopes: int
    submitted_tx_ids: list[str]
    committed_tx_ids: list[str]
    lost_tx_ids: list[str]
    duplicate_tx_ids: list[str]
    failed_submissions: list[dict]
    peers: dict[str, dict]
    faults: list[dict]
    proposals: dict[str, list[int]]
    leaders: list[dict]
    election_safety_violations: list[int]
    ledger_head_digest: str
    final_time_ms: int
    receipts: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "blocks_committed": self.blocks_committed,
            "contract_invocations": self.contract_invocations,
            "duplicate_tx_ids": self.duplicate_tx_ids,
            "election_safety_violations": self.election_safety_violations,
            "failed_submissions": self.failed_submissions,
            "faults": self.faults,
            "final_time_ms": self.final_time_ms,
            "leaders": self.leaders,
            "ledger_head_digest": self.ledger_head_digest,
            "lost_tx_ids": self.lost_tx_ids,
            "peers": self.peers,
            "proposals": self.proposals,
            "receipts": self.receipts,
            "rejected_envelopes": self.rejected_envelopes,
            "seed": self.seed,
            "submitted_tx_ids": self.submitted_tx_ids,
            "transactions_total": self.transactions_total,
            "valid_transactions": self.valid_transactions,
        }

    def to_bytes(self) -> bytes:
        return canonical_json(self.to_json())

    def proposals_after(self, peer_id: str, time_ms: int) -> int:
        return sum(1 for t in self.proposals.get(peer_id, []) if t > time_ms)

    def fault_time(self, action: str, target: str | None = None) -> int | None:
        for event in self.faults:
            if event["action"] == action and (target is None or event["target"] == target):
                return event["time_ms"]
        return None


def is_contract_invocation(payload: bytes) -> bool:
    try:
        return ContractInvocation.decode(payload).contract_name == CONTRACT_NAME
    except EncodingError:
        return False


class Simulation:
    """Orderers, peers and one gateway wired through a lossy, delayed network."""

    def __init__(
        self,
        config: ScenarioConfig,
        consortium: Consortium | None = None,
        base_chain: BlockStore | None = None,
    ) -> None:
        from .gateway import Gateway

        self.config = config
        self.consortium = consortium or build_consortium(config)
        self.directory = self.consortium.directory
        self.scheduler = Scheduler()
        self.net_rng = random.Random(f"net:{config.seed}")
        self.fault_rng = random.Random(f"fault:{config.seed}")

        chain = base_chain or BlockStore(
            self.consortium.channel, self.consortium.config().scheme_id, [self.consortium.genesis]
        )
        self.peers: dict[str, Peer] = {}
        for name in self.consortium.peers:
            peer = Peer(self.consortium.identities[name], chain.read_block(0), self.directory)
            if chain.height > 1:
                resync(peer, chain, self.directory)
            self.peers[name] = peer
        base = chain.head()
        base_ids = frozenset(chain.tx_ids())
        names = self.consortium.orderers
        self.orderers: dict[str, RaftNode] = {
            name: RaftNode(
                name,
                names,
                config.ordering,
                self.consortium.identities[name],
                base.number,
                header_digest(base.header),
                random.Random(f"raft:{config.seed}:{name}"),
                self.directory,
                0,
                base_ids,
            )
            for name in names
        }
        self.online: dict[str, bool] = {name: True for name in [*names, *self.peers]}
        self.partitioned: dict[str, bool] = {}
        self._delivered: dict[str, int] = {name: 0 for name in names}
        self._wake_gen: dict[str, int] = {name: 0 for name in names}
        self._buffers: dict[str, dict[int, Block]] = {name: {} for name in self.peers}
        self.leaders: dict[int, list[str]] = {}
        self._leader_times: list[dict] = []
        self.faults: list[dict] = []
        self.proposals: dict[str, list[int]] = {name: [] for name in self.peers}
        self.gateway = Gateway(self, config)
        for name in names:
            self._schedule_wake(name)

    # -- clock -----------------------------------------------------------

    @property
    def now(self) -> int:
        return self.scheduler.now

    def timestamp(self) -> int:
        return self.config.epoch_ms + self.now

    # -- reachability ----------------------------------------------------

    def reachable(self, name: str) -> bool:
        if name == GATEWAY:
            return True
        return self.online.get(name, False) and not self.partitioned.get(name, False)

    def current_leader(self) -> str | None:
        best = None
        for name, node in self.orderers.items():
            if node.role is Role.LEADER and self.online[name]:
                if best is None or node.current_term > self.orderers[best].current_term:
                    best = name
        return best

    # -- network ---------------------------------------------------------

    def send(self, msg: Any) -> None:
        if not (self.reachable(msg.sender) and self.reachable(msg.receiver)):
            return
        low, high = self.config.network_delay_ms
        self.scheduler.at(self.now + self.net_rng.randint(low, high), self._receive, msg)

    def _receive(self, msg: Any) -> None:
        if not (self.reachable(msg.sender) and self.reachable(msg.receiver)):
            return
        if isinstance(msg, Deliver):
            self._on_deliver(msg.receiver, msg.block)
        elif msg.receiver == GATEWAY:
            if isinstance(msg, SubmitAck):
                self.gateway.on_ack(msg)
        elif msg.receiver in self.orderers:
            node = self.orderers[msg.receiver]
            self._after_orderer(msg.receiver, node.step(msg, self.now))

    # -- orderers --------------------------------------------------------

    def _schedule_wake(self, name: str) -> None:
        self._wake_gen[name] += 1
        self.scheduler.at(self.orderers[name].next_wakeup(), self._wake, name, self._wake_gen[name])

    def _wake(self, name: str, generation: int) -> None:
        if generation != self._wake_gen[name] or not self.online[name]:
            return
        self._after_orderer(name, self.orderers[name].tick(self.now))

    def _after_orderer(self, name: str, outbound: list[RaftMessage]) -> None:
        node = self.orderers[name]
        if node.role is Role.LEADER:
            holders = self.leaders.setdefault(node.current_term, [])
            if name not in holders:
                holders.append(name)
                self._leader_times.append({"node": name, "term": node.current_term, "time_ms": self.now})
        for msg in outbound:
            self.send(msg)
        self._deliver_commits(name)
        self._schedule_wake(name)

    def _deliver_commits(self, name: str) -> None:
        node = self.orderers[name]
        if node.commit_index <= self._delivered[name]:
            return
        fresh = [e.block for e in node.log[self._delivered[name] : node.commit_index] if e.block is not None]
        self._delivered[name] = node.commit_index
        for block in fresh:
            for peer in self.peers:
                self.send(Deliver(name, peer, block))

    # -- peers -----------------------------------------------------------

    def _on_deliver(self, name: str, block: Block) -> None:
        peer = self.peers[name]
        if peer.status is not PeerStatus.HEALTHY or block.number < peer.height:
            return
        buffer = self._buffers[name]
        buffer[block.number] = block
        while peer.height in buffer:
            pending = buffer.pop(peer.height)
            try:
                peer.validate_and_commit(pending)
            except (ChainLinkError, PeerUnavailable, BlockRejected) as exc:
                log.info("%s refused block %d: %s", name, pending.number, exc)
                buffer.clear()
                return
            self.gateway.on_commit(name, peer.store.head())

    def catch_up(self, name: str) -> None:
        """Ask a reachable orderer for every committed block the peer lacks."""
        peer = self.peers[name]
        for orderer, node in self.orderers.items():
            if not self.reachable(orderer):
                continue
            for block in node.committed_blocks():
                if block.number >= peer.height:
                    self.send(Deliver(orderer, name, block))
            return

    def record_proposal(self, name: str) -> None:
        self.proposals[name].append(self.now)

    # -- faults ----------------------------------------------------------

    def _resolve(self, target: str, action: FaultAction) -> str | None:
        if target == LEADER:
            if action in (FaultAction.RESTART, FaultAction.PARTITION_OFF):
                # undo the most recent fault that hit whichever node was leading
                opposite = "crash" if action is FaultAction.RESTART else "partition_on"
                for entry in reversed(self.faults):
                    if entry["requested"] == LEADER and entry["action"] == opposite:
                        return entry["target"]
                return None
            return self.current_leader()
        if target not in self.online:
            raise ConfigError(f"fault target {target!r} is not a node of this scenario")
        return target

    def apply_fault(self, event: FaultEvent) -> None:
        target = self._resolve(event.target, event.action)
        entry = {"action": event.action.value, "requested": event.target, "target": target, "time_ms": self.now}
        self.faults.append(entry)
        if target is None:
            return
        action = event.action
        if action is FaultAction.CRASH:
            self.online[target] = False
            if target in self.peers:
                self.peers[target].online = False
            else:
                self._wake_gen[target] += 1
        elif action is FaultAction.RESTART:
            if self.online[target]:
                return
            self.online[target] = True
            if target in self.peers:
                self.peers[target].online = True
                self.catch_up(target)
            else:
                self.orderers[target].restart(self.now)
                self._schedule_wake(target)
        elif action is FaultAction.PARTITION_ON:
            self.partitioned[target] = True
        elif action is FaultAction.PARTITION_OFF:
            self.partitioned[target] = False
            if target in self.peers:
                self.catch_up(target)
        elif action is FaultAction.CORRUPT_LEDGER:
            if target not in self.peers:
                raise ConfigError("corrupt_ledger targets peers only")
            peer = self.peers[target]
            numbers = [b.number for b in peer.store.blocks if b.number > 0 and b.envelopes]
            if not numbers:
                numbers = [0]
            number = self.fault_rng.choice(numbers)
            peer.corrupt(number, self.fault_rng.randrange(max(1, len(peer.store.blocks[number].envelopes))))
            entry["block_number"] = number

    def resync_peer(self, name: str, source: str | None = None) -> Peer:
        """Re-initialize a peer from a healthy peer's chain (the gateway's majority head)."""
        if source is None:
            source = self.gateway.authoritative_peer()
        if source is None:
            raise PeerError("no healthy peer to resync from")
        peer = resync(self.peers[name], self.peers[source].store, self.directory)
        self._buffers[name].clear()
        self.faults.append({"action": "resync", "requested": name, "target": name, "time_ms": self.now, "source": source})
        if self.reachable(name):
            self.catch_up(name)
        return peer

    # -- driving ---------------------------------------------------------

    def schedule(self, workload: Workload, faults: FaultSchedule) -> None:
        warmup = self.config.warmup_ms
        for item in workload.items:
            identity = self.consortium.identities.get(item.submitter)
            if identity is None:
                raise ConfigError(f"workload submitter {item.submitter!r} is unknown")
            self.scheduler.at(warmup + item.time_ms, self.gateway.propose, identity, item.invocation)
        for event in faults.events:
            self.scheduler.at(warmup + event.time_ms, self.apply_fault, event)

    def run(self, workload: Workload, faults: FaultSchedule = FaultSchedule()) -> "ScenarioReport":
        self.schedule(workload, faults)
        last_item = max([i.time_ms for i in workload.items] + [e.time_ms for e in faults.events] + [0])
        self.scheduler.run_until(self.config.warmup_ms + last_item)
        self.scheduler.run_until(done=lambda: not self.gateway.pending, stop=self._deadline())
        self.scheduler.run_until(self.now + self.config.settle_ms)
        return self.report()

    def _deadline(self) -> int:
        per_tx = self.config.commit_timeout_ms * (self.config.max_submit_attempts + 1)
        return self.now + per_tx

    def run_for(self, duration_ms: int) -> None:
        self.scheduler.run_until(self.now + duration_ms)

    def run_until_resolved(self, tx_id: str) -> None:
        self.scheduler.run_until(done=lambda: tx_id not in self.gateway.pending, stop=self._deadline())

    # -- reporting -------------------------------------------------------

    def reference_store(self) -> BlockStore:
        name = self.gateway.authoritative_peer()
        if name is None:
            name = max(self.peers, key=lambda n: self.peers[n].height)
        return self.peers[name].store

    def report(self) -> ScenarioReport:
        store = self.reference_store()
        committed: list[str] = []
        invocations = valid = rejected = 0
        for block in store.blocks[1:]:
            for envelope, flag in zip(block.envelopes, block.metadata.validity_flags):
                committed.append(envelope.tx_id)
                if is_contract_invocation(envelope.payload):
                    invocations += 1
                if flag:
                    valid += 1
                else:
                    rejected += 1
        counts = Counter(committed)
        committed_set = set(committed)
        submitted = self.gateway.submitted_tx_ids
        peers = {
            name: {
                "head_digest": to_hex(peer.head_digest()),
                "height": peer.height,
                "state_digest": to_hex(peer.state.state_digest),
                "status": peer.status.value,
            }
            for name, peer in self.peers.items()
        }
        return ScenarioReport(
            seed=self.config.seed,
            blocks_committed=store.height - 1,
            transactions_total=len(committed),
            contract_invocations=invocations,
            valid_transactions=valid,
            rejected_envelopes=rejected,
            submitted_tx_ids=list(submitted),
            committed_tx_ids=committed,
            lost_tx_ids=[tx for tx in submitted if tx not in committed_set],
            duplicate_tx_ids=sorted(tx for tx, n in counts.items() if n > 1),
            failed_submissions=list(self.gateway.failures),
            peers=peers,
            faults=list(self.faults),
            proposals={name: list(times) for name, times in self.proposals.items()},
            leaders=list(self._leader_times),
            election_safety_violations=sorted(t for t, holders in self.leaders.items() if len(holders) > 1),
            ledger_head_digest=to_hex(store.head_digest()),
            final_time_ms=self.now,
            receipts=[r.to_json() for r in self.gateway.receipts],
        )


def run_scenario(
    config: ScenarioConfig,
    fault_schedule: FaultSchedule,
    workload: Workload,
    seed: int | None = None,
    consortium: Consortium | None = None,
) -> tuple[ScenarioReport, Simulation]:
    """Run one scenario end to end; returns the report and the finished simulation."""
    if seed is not None and seed != config.seed:
        config = config.with_seed(seed)
    sim = Simulation(config, consortium)
    report = sim.run(workload, fault_schedule)
    return report, sim


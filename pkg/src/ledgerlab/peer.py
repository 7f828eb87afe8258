"""Peer nodes: endorsement, commit-time validation, divergence and resync."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

from .contract import (
    ContractError,
    ContractInvocation,
    EndorsementPolicy,
    WorldState,
    apply_envelope,
    execute,
)
from .encoding import EncodingError
from .identity import Identity, MembershipDirectory, Role, verify_signature
from .ledger import (
    Block,
    BlockStore,
    ChainLinkError,
    Endorsement,
    LedgerFormatError,
    TransactionHeader,
    compute_data_hash,
    genesis_config,
    header_digest,
    signed_bytes,
)

log = logging.getLogger(__name__)


class PeerError(Exception):
    pass


class PeerUnavailable(PeerError):
    pass


class EndorsementRefused(PeerError):
    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


class SourceInvalid(PeerError):
    pass


class BlockRejected(PeerError):
    pass


class PeerStatus(str, enum.Enum):
    HEALTHY = "healthy"
    DIVERGED = "diverged"
    OFFLINE = "offline"


@dataclass(frozen=True)
class Proposal:
    header: TransactionHeader
    payload: bytes
    creator_signature: bytes

    def signed_bytes(self) -> bytes:
        return signed_bytes(self.header, self.payload)


def replay(blocks, directory: MembershipDirectory, policy: EndorsementPolicy) -> tuple[WorldState, list[list[bool]]]:
    """Rebuild world state from a chain; block 0 carries configuration only."""
    state = WorldState()
    flags = []
    seen: set[str] = set()
    for block in blocks:
        if block.number == 0:
            flags.append([True] * len(block.envelopes))
            continue
        block_flags = []
        for envelope in block.envelopes:
            if envelope.tx_id in seen:
                block_flags.append(False)
                continue
            seen.add(envelope.tx_id)
            state, ok = apply_envelope(state, envelope, directory, policy)
            block_flags.append(ok)
        flags.append(block_flags)
    return state, flags


class Peer:
    def __init__(self, identity: Identity, genesis: Block, directory: MembershipDirectory) -> None:
        if identity.role is not Role.PEER:
            raise ValueError(f"{identity.name} is not a peer identity")
        config = genesis_config(genesis)
        self.identity = identity
        self.directory = directory
        self.channel = config.channel
        self.policy = EndorsementPolicy(config.endorsement_required)
        self.store = BlockStore(config.channel, config.scheme_id, [genesis])
        self.state = WorldState()
        self.online = True
        self.diverged = False
        self._tx_ids: set[str] = set()
        # number -> the exact block object last audited; a swapped object is rechecked
        self._audited: dict[int, Block] = {}

    @property
    def peer_id(self) -> str:
        return self.identity.name

    @property
    def organization(self) -> str:
        return self.identity.organization

    @property
    def status(self) -> PeerStatus:
        if not self.online:
            return PeerStatus.OFFLINE
        return PeerStatus.DIVERGED if self.diverged else PeerStatus.HEALTHY

    @property
    def height(self) -> int:
        return self.store.height

    def head_digest(self) -> bytes:
        return self.store.head_digest()

    # -- endorsement -----------------------------------------------------

    def endorse_proposal(self, proposal: Proposal, directory: MembershipDirectory | None = None) -> Endorsement:
        directory = directory or self.directory
        if self.status is not PeerStatus.HEALTHY:
            raise PeerUnavailable(f"{self.peer_id} is {self.status.value}")
        creator = directory.get(proposal.header.creator)
        if creator is None or not verify_signature(
            creator.public_key, proposal.signed_bytes(), proposal.creator_signature
        ):
            raise EndorsementRefused("CreatorSignatureInvalid")
        if proposal.header.tx_id in self._tx_ids:
            raise EndorsementRefused("DuplicateTransaction")
        try:
            invocation = ContractInvocation.decode(proposal.payload)
            execute(self.state, creator, invocation)
        except ContractError as exc:
            raise EndorsementRefused(type(exc).__name__) from exc
        except EncodingError as exc:
            raise EndorsementRefused("MalformedPayload") from exc
        return Endorsement(self.peer_id, self.identity.sign(proposal.signed_bytes()))

    # -- commit ----------------------------------------------------------

    def validate_and_commit(
        self,
        block: Block,
        directory: MembershipDirectory | None = None,
        policy: EndorsementPolicy | None = None,
    ) -> "Peer":
        directory = directory or self.directory
        policy = policy or self.policy
        if self.status is not PeerStatus.HEALTHY:
            raise PeerUnavailable(f"{self.peer_id} is {self.status.value}")
        if not self.audit():
            self.diverged = True
            raise PeerUnavailable(f"{self.peer_id} failed its local integrity audit")
        if block.number != self.height or block.header.previous_hash != self.head_digest():
            self.diverged = True
            raise ChainLinkError(block.number, f"{self.peer_id} cannot link block at height {self.height}")
        orderer = directory.get(block.metadata.orderer)
        if (
            orderer is None
            or orderer.role is not Role.ORDERER
            or not verify_signature(orderer.public_key, header_bytes(block), block.metadata.orderer_signature)
        ):
            raise BlockRejected(f"block {block.number}: orderer signature invalid")
        if compute_data_hash(block.envelopes) != block.header.data_hash:
            raise BlockRejected(f"block {block.number}: data hash mismatch")

        state = self.state
        flags = []
        for envelope in block.envelopes:
            if envelope.tx_id in self._tx_ids:
                flags.append(False)
                continue
            self._tx_ids.add(envelope.tx_id)
            state, ok = apply_envelope(state, envelope, directory, policy)
            flags.append(ok)
        committed = block.with_flags(flags)
        self.store.append_block(committed)
        self._audited[committed.number] = committed
        self.state = state
        return self

    def audit(self) -> bool:
        """Cheap local integrity audit: data hashes and linkage of the stored chain."""
        blocks = self.store.blocks
        for i, block in enumerate(blocks):
            if self._audited.get(block.number) is block:
                continue
            # only blocks not seen before (or swapped out since) need rechecking
            if block.number != i or compute_data_hash(block.envelopes) != block.header.data_hash:
                return False
            if i > 0 and block.header.previous_hash != header_digest(blocks[i - 1].header):
                return False
            if i + 1 < len(blocks) and blocks[i + 1].header.previous_hash != header_digest(block.header):
                return False
            self._audited[block.number] = block
        return True

    def corrupt(self, block_number: int, envelope_index: int = 0) -> None:
        """Fault injection: flip one payload byte of a stored envelope."""
        import dataclasses

        block = self.store.blocks[block_number]
        if not block.envelopes:
            return
        index = envelope_index % len(block.envelopes)
        envelope = block.envelopes[index]
        payload = bytearray(envelope.payload)
        payload[len(payload) // 2] ^= 0x01
        envelopes = list(block.envelopes)
        envelopes[index] = dataclasses.replace(envelope, payload=bytes(payload))
        self.store.blocks[block_number] = dataclasses.replace(block, envelopes=tuple(envelopes))


def header_bytes(block: Block) -> bytes:
    from .encoding import canonical_json

    return canonical_json(block.header.to_json())


def detect_divergence(peer: Peer, authoritative_digest: bytes) -> bool:
    return peer.head_digest() != authoritative_digest or not peer.audit()


def resync(peer: Peer, source: BlockStore, directory: MembershipDirectory | None = None) -> Peer:
    """Replace the peer's chain with a verified copy of ``source`` and replay state."""
    from .verifier import Mode, verify_chain

    directory = directory or peer.directory
    report = verify_chain(source, directory, Mode.STRICT)
    if report.violations:
        raise SourceInvalid(f"source chain failed verification: {report.violations[0].describe()}")
    try:
        config = genesis_config(source.read_block(0))
    except (IndexError, LedgerFormatError) as exc:
        raise SourceInvalid(str(exc)) from exc
    policy = EndorsementPolicy(config.endorsement_required)
    state, _ = replay(source.blocks, directory, policy)
    peer.store = source.copy()
    peer.state = state
    peer.policy = policy
    peer._tx_ids = {tx for block in source.blocks[1:] for tx in (e.tx_id for e in block.envelopes)}
    peer._audited = {b.number: b for b in peer.store.blocks}
    peer.diverged = False
    return peer

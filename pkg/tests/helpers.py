"""Builders shared by the unit tests."""

from __future__ import annotations

import itertools

from ledgerlab.contract import ContractInvocation
from ledgerlab.ledger import Block, BlockStore, TransactionEnvelope, TransactionHeader, build_block, header_digest, signed_bytes
from ledgerlab.network import Consortium, collaborator_name
from ledgerlab.peer import Proposal

_nonces = itertools.count(1)


def proposal(consortium: Consortium, invocation: ContractInvocation, creator: str | None = None) -> Proposal:
    identity = consortium.identities[creator or collaborator_name(consortium.organizations[0])]
    nonce = next(_nonces).to_bytes(16, "big")
    header = TransactionHeader.create(identity.name, consortium.channel, 1_700_000_000_000, nonce)
    payload = invocation.encode()
    return Proposal(header, payload, identity.sign(signed_bytes(header, payload)))


def envelope(
    consortium: Consortium,
    invocation: ContractInvocation,
    endorsers: int | list[str] = 4,
    creator: str | None = None,
) -> TransactionEnvelope:
    """Envelope endorsed by real peer signatures (no world-state execution)."""
    prop = proposal(consortium, invocation, creator)
    names = consortium.peers[:endorsers] if isinstance(endorsers, int) else endorsers
    message = prop.signed_bytes()
    from ledgerlab.ledger import Endorsement

    endorsements = tuple(Endorsement(n, consortium.identities[n].sign(message)) for n in names)
    return TransactionEnvelope(prop.header, prop.payload, prop.creator_signature, endorsements)


def next_block(consortium: Consortium, store: BlockStore, envelopes) -> Block:
    orderer = consortium.identities[consortium.orderers[0]]
    head = store.head()
    return build_block(head.number + 1, header_digest(head.header), list(envelopes), orderer)


def chain(consortium: Consortium, batches) -> BlockStore:
    store = BlockStore(consortium.channel, blocks=[consortium.genesis])
    for batch in batches:
        store.append_block(next_block(consortium, store, batch))
    return store

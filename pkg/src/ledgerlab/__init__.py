"""Permissioned ledger for scientific data records: identities, RAFT ordering,
endorsement-policy validation, integrity verification and a deterministic
network simulator."""

__version__ = "0.1.0"

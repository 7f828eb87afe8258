"""Membership service: seeded key pairs, per-organization CAs, certificates.

Signatures are ECDSA over NIST P-256 with SHA-256 and RFC 6979 deterministic
nonces, so a fixed key and message always give the same signature bytes and
ledger files are reproducible byte for byte.
"""

from __future__ import annotations

import enum
import functools
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec

from .encoding import (
    EncodingError,
    canonical_json,
    expect_keys,
    from_hex,
    require,
    sha256_digest,
    to_hex,
)

SCHEME_ID = "ecdsa-p256-sha256-rfc6979"

_CURVE = ec.SECP256R1()
# group order of P-256
_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551


class Role(str, enum.Enum):
    COLLABORATOR = "collaborator"
    PEER = "peer"
    ORDERER = "orderer"
    ADMIN = "admin"


WRITER_ROLES = frozenset({Role.COLLABORATOR, Role.ADMIN})


class IdentityError(Exception):
    pass


class CertificateInvalid(IdentityError):
    pass


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes = field(repr=False)


def generate_keypair(seed: bytes | None = None) -> KeyPair:
    """Derive a key pair from ``seed``, or from OS entropy when seed is None."""
    material = os.urandom(32) if seed is None else hashlib.sha256(b"keygen:" + seed).digest()
    scalar = int.from_bytes(material, "big") % (_ORDER - 1) + 1
    key = ec.derive_private_key(scalar, _CURVE)
    return KeyPair(_encode_public(key.public_key()), scalar.to_bytes(32, "big"))


def _encode_public(public_key: ec.EllipticCurvePublicKey) -> bytes:
    from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

    return public_key.public_bytes(Encoding.X962, PublicFormat.UncompressedPoint)


@functools.lru_cache(maxsize=4096)
def _private(private_key: bytes) -> ec.EllipticCurvePrivateKey:
    return ec.derive_private_key(int.from_bytes(private_key, "big"), _CURVE)


@functools.lru_cache(maxsize=4096)
def _public(public_key: bytes) -> ec.EllipticCurvePublicKey:
    return ec.EllipticCurvePublicKey.from_encoded_point(_CURVE, public_key)


def sign(private_key: bytes, message: bytes) -> bytes:
    """DER-encoded signature over SHA-256(message)."""
    return _private(private_key).sign(
        message, ec.ECDSA(hashes.SHA256(), deterministic_signing=True)
    )


def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """Total: malformed keys or signatures yield False instead of raising."""
    if not signature or not public_key:
        return False
    return _verify(bytes(public_key), bytes(message), bytes(signature))


# verification is a pure function of its inputs; the cache spares repeated
# checks of the same envelope at every peer and across verifier passes
@functools.lru_cache(maxsize=1 << 16)
def _verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        _public(public_key).verify(signature, message, ec.ECDSA(hashes.SHA256()))
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True


@dataclass(frozen=True)
class Certificate:
    subject_name: str
    organization: str
    role: Role
    public_key: bytes
    issuer: str
    issuer_signature: bytes = b""

    def tbs_bytes(self) -> bytes:
        """The signed portion: every field except the issuer signature."""
        return canonical_json(
            {
                "issuer": self.issuer,
                "organization": self.organization,
                "public_key": to_hex(self.public_key),
                "role": self.role.value,
                "subject_name": self.subject_name,
            }
        )

    def to_json(self) -> dict:
        return {
            "issuer": self.issuer,
            "issuer_signature": to_hex(self.issuer_signature),
            "organization": self.organization,
            "public_key": to_hex(self.public_key),
            "role": self.role.value,
            "subject_name": self.subject_name,
        }

    @classmethod
    def from_json(cls, obj) -> "Certificate":
        expect_keys(
            obj,
            {"issuer", "issuer_signature", "organization", "public_key", "role", "subject_name"},
            "certificate",
        )
        try:
            role = Role(require(obj, "role", str))
        except ValueError as exc:
            raise EncodingError(str(exc)) from exc
        return cls(
            subject_name=require(obj, "subject_name", str),
            organization=require(obj, "organization", str),
            role=role,
            public_key=from_hex(require(obj, "public_key", str)),
            issuer=require(obj, "issuer", str),
            issuer_signature=from_hex(require(obj, "issuer_signature", str)),
        )


def ca_name(organization: str) -> str:
    return f"ca.{organization}"


@dataclass(frozen=True)
class CertificateAuthority:
    name: str
    organization: str
    public_key: bytes
    root_certificate: Certificate
    directory: "MembershipDirectory" = field(repr=False, compare=False)


def create_ca(org_name: str, seed: bytes | None) -> tuple[CertificateAuthority, KeyPair]:
    if not org_name:
        raise ValueError("organization name must be non-empty")
    keys = generate_keypair(None if seed is None else b"ca:" + org_name.encode() + b":" + seed)
    name = ca_name(org_name)
    root = issue_certificate(keys.private_key, name, org_name, Role.ADMIN, keys.public_key)
    directory = MembershipDirectory()
    directory.add_root(org_name, keys.public_key)
    directory.register(root)
    return CertificateAuthority(name, org_name, keys.public_key, root, directory), keys


def issue_certificate(
    ca_private_key: bytes,
    subject_name: str,
    organization: str,
    role: Role | str,
    public_key: bytes,
) -> Certificate:
    if not subject_name:
        raise ValueError("subject_name must be non-empty")
    role = Role(role)
    unsigned = Certificate(subject_name, organization, role, bytes(public_key), ca_name(organization))
    signature = sign(ca_private_key, unsigned.tbs_bytes())
    return Certificate(
        subject_name, organization, role, bytes(public_key), unsigned.issuer, signature
    )


def verify_certificate(cert: Certificate, roots: Mapping[str, bytes]) -> bool:
    root = roots.get(cert.organization)
    if root is None or cert.issuer != ca_name(cert.organization):
        return False
    return verify_signature(root, cert.tbs_bytes(), cert.issuer_signature)


class MembershipDirectory:
    """CA roots plus every certificate issued under them. Append-only."""

    def __init__(self) -> None:
        self.ca_roots: dict[str, bytes] = {}
        self.certificates: dict[str, Certificate] = {}

    def add_root(self, organization: str, public_key: bytes) -> None:
        known = self.ca_roots.get(organization)
        if known is not None and known != public_key:
            raise CertificateInvalid(f"conflicting CA root for {organization}")
        self.ca_roots[organization] = bytes(public_key)

    def register(self, cert: Certificate) -> None:
        if not verify_certificate(cert, self.ca_roots):
            raise CertificateInvalid(f"certificate for {cert.subject_name} does not verify")
        known = self.certificates.get(cert.subject_name)
        if known is not None and known != cert:
            raise CertificateInvalid(f"subject {cert.subject_name} already registered")
        self.certificates[cert.subject_name] = cert

    def merge(self, other: "MembershipDirectory") -> None:
        for org, key in other.ca_roots.items():
            self.add_root(org, key)
        for cert in other.certificates.values():
            self.register(cert)

    def get(self, subject_name: str) -> Certificate | None:
        return self.certificates.get(subject_name)

    def __contains__(self, subject_name: str) -> bool:
        return subject_name in self.certificates

    def bundle_bytes(self) -> bytes:
        lines = [canonical_json(self.certificates[name].to_json()) for name in sorted(self.certificates)]
        return b"".join(line + b"\n" for line in lines)

    def bundle_digest(self) -> bytes:
        return sha256_digest(self.bundle_bytes())

    def write_bundle(self, path: str | Path) -> None:
        Path(path).write_bytes(self.bundle_bytes())

    @classmethod
    def from_certificates(cls, certs: Iterable[Certificate]) -> "MembershipDirectory":
        """Self-signed CA certificates become roots; the rest must chain to them."""
        certs = list(certs)
        directory = cls()
        for cert in certs:
            if cert.subject_name == cert.issuer == ca_name(cert.organization):
                if verify_signature(cert.public_key, cert.tbs_bytes(), cert.issuer_signature):
                    directory.add_root(cert.organization, cert.public_key)
        for cert in certs:
            directory.register(cert)
        return directory

    @classmethod
    def read_bundle(cls, path: str | Path) -> "MembershipDirectory":
        return cls.from_bundle_bytes(Path(path).read_bytes())

    @classmethod
    def from_bundle_bytes(cls, data: bytes) -> "MembershipDirectory":
        import json

        certs = []
        for number, line in enumerate(data.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                certs.append(Certificate.from_json(json.loads(line)))
            except (ValueError, EncodingError) as exc:
                raise CertificateInvalid(f"bundle line {number}: {exc}") from exc
        return cls.from_certificates(certs)


@dataclass(frozen=True)
class Identity:
    """A certificate together with the key pair it certifies."""

    certificate: Certificate
    keypair: KeyPair = field(repr=False)

    @property
    def name(self) -> str:
        return self.certificate.subject_name

    @property
    def organization(self) -> str:
        return self.certificate.organization

    @property
    def role(self) -> Role:
        return self.certificate.role

    def sign(self, message: bytes) -> bytes:
        return sign(self.keypair.private_key, message)

    def to_json(self) -> dict:
        return {
            "certificate": self.certificate.to_json(),
            "private_key": to_hex(self.keypair.private_key),
        }

    @classmethod
    def from_json(cls, obj) -> "Identity":
        cert = Certificate.from_json(require(obj, "certificate", dict))
        private = from_hex(require(obj, "private_key", str), 32)
        return cls(cert, KeyPair(cert.public_key, private))


def enroll(
    ca: CertificateAuthority,
    ca_keys: KeyPair,
    subject_name: str,
    role: Role | str,
    seed: bytes | None = None,
) -> Identity:
    keys = generate_keypair(None if seed is None else b"id:" + subject_name.encode() + b":" + seed)
    cert = issue_certificate(ca_keys.private_key, subject_name, ca.organization, role, keys.public_key)
    return Identity(cert, keys)

"""Canonical JSON encoding and SHA-256 helpers.

Every byte that gets hashed or signed goes through :func:`canonical_json`:
sorted keys, no insignificant whitespace, UTF-8, byte fields as lowercase hex.
Floats are refused so that encodings are stable across platforms.
"""

from __future__ import annotations

import hashlib
import json
import re
from typing import Any

_HEX_RE = re.compile(r"(?:[0-9a-f]{2})*")


class EncodingError(ValueError):
    """Raised when a value cannot be canonically encoded or decoded."""


def _check(value: Any) -> None:
    if isinstance(value, float):
        raise EncodingError("floats are not allowed in canonical encodings")
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise EncodingError(f"non-string key {key!r}")
            _check(item)
    elif isinstance(value, (list, tuple)):
        for item in value:
            _check(item)
    elif isinstance(value, (bytes, bytearray)):
        raise EncodingError("convert bytes with to_hex() before encoding")


def canonical_json(value: Any) -> bytes:
    """Encode plain JSON data (dict/list/str/int/bool/None) canonically."""
    _check(value)
    return json.dumps(
        value, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def canonical_encode(value: Any) -> bytes:
    """Encode a ledger type, a sequence of them, or plain JSON data."""
    return canonical_json(to_plain(value))


def to_plain(value: Any) -> Any:
    if hasattr(value, "to_json"):
        return value.to_json()
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, (bytes, bytearray)):
        return to_hex(value)
    return value


def decode(cls, data: bytes):
    """Inverse of :func:`canonical_encode` for a type exposing ``from_json``."""
    try:
        obj = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise EncodingError(str(exc)) from exc
    return cls.from_json(obj)


def sha256_digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def to_hex(data: bytes) -> str:
    return bytes(data).hex()


def from_hex(text: Any, length: int | None = None) -> bytes:
    """Strict lowercase-hex decoder; uppercase or odd-length input is rejected."""
    if not isinstance(text, str) or not _HEX_RE.fullmatch(text):
        raise EncodingError(f"not lowercase hex: {text!r:.80}")
    raw = bytes.fromhex(text)
    if length is not None and len(raw) != length:
        raise EncodingError(f"expected {length} bytes, got {len(raw)}")
    return raw


def require(obj: Any, key: str, kind: type | tuple[type, ...]) -> Any:
    """Fetch ``obj[key]`` and type-check it; used by the strict decoders."""
    if not isinstance(obj, dict) or key not in obj:
        raise EncodingError(f"missing field {key!r}")
    value = obj[key]
    # bool is a subclass of int; keep them apart
    if kind is int and isinstance(value, bool):
        raise EncodingError(f"field {key!r} must be an integer")
    if not isinstance(value, kind):
        raise EncodingError(f"field {key!r} has wrong type {type(value).__name__}")
    return value


def expect_keys(obj: Any, keys: set[str], what: str) -> None:
    if not isinstance(obj, dict):
        raise EncodingError(f"{what} must be an object")
    extra = set(obj) - keys
    missing = keys - set(obj)
    if extra or missing:
        raise EncodingError(
            f"{what}: unexpected fields {sorted(extra)}, missing {sorted(missing)}"
        )

import hashlib
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ledgerlab.encoding import EncodingError, canonical_json, from_hex, require, sha256_digest, to_hex

# FIPS 180-2 known answers
SHA256_EMPTY = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
SHA256_ABC = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


def test_sha256_known_answers():
    assert sha256_digest(b"").hex() == SHA256_EMPTY
    assert sha256_digest(b"abc").hex() == SHA256_ABC


def test_canonical_form():
    assert canonical_json({"b": 1, "a": [True, None, "é"]}) == '{"a":[true,null,"é"],"b":1}'.encode()


@pytest.mark.parametrize("bad", [1.5, {"x": 0.1}, b"raw", {1: "int key"}])
def test_canonical_refuses(bad):
    with pytest.raises(EncodingError):
        canonical_json(bad)


def test_hex_is_strict():
    assert from_hex("00ff") == b"\x00\xff"
    for bad in ("00FF", "abc", "zz", 12):
        with pytest.raises(EncodingError):
            from_hex(bad)
    with pytest.raises(EncodingError):
        from_hex("00", length=2)
    assert to_hex(b"\xab") == "ab"


def test_require_keeps_bool_out_of_int():
    assert require({"n": 3}, "n", int) == 3
    with pytest.raises(EncodingError):
        require({"n": True}, "n", int)
    with pytest.raises(EncodingError):
        require({}, "n", int)


json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-(2**63), 2**63) | st.text(),
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(), inner, max_size=4),
    max_leaves=20,
)


@settings(max_examples=200, deadline=None)
@given(json_values)
def test_canonical_round_trip(value):
    encoded = canonical_json(value)
    assert canonical_json(json.loads(encoded)) == encoded
    assert sha256_digest(encoded) == hashlib.sha256(encoded).digest()

"""Stable byte encodings and sha256 digests used for chain identities.

The encoding scheme is fixed so hashes are reproducible across runs and
platforms: integers are big-endian, byte strings are length-prefixed with an
unsigned 32-bit length, and every encoded object starts with a short ASCII
tag. Changing any of this changes every transaction and block hash.
"""
from __future__ import annotations

import hashlib

DIGEST_SIZE = 32
ZERO_DIGEST = b"\x00" * DIGEST_SIZE

_I64_MIN = -(2**63)
_I64_MAX = 2**63 - 1


def u32(value: int) -> bytes:
    if not 0 <= value < 2**32:
        raise ValueError(f"u32 out of range: {value}")
    return value.to_bytes(4, "big")


def u64(value: int) -> bytes:
    if not 0 <= value < 2**64:
        raise ValueError(f"u64 out of range: {value}")
    return value.to_bytes(8, "big")


def i64(value: int) -> bytes:
    if not _I64_MIN <= value <= _I64_MAX:
        raise ValueError(f"i64 out of range: {value}")
    return value.to_bytes(8, "big", signed=True)


def length_prefixed(data: bytes) -> bytes:
    return u32(len(data)) + data


def text(value: str) -> bytes:
    return length_prefixed(value.encode("utf-8"))


def digest(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        h.update(part)
    return h.digest()


def to_hex(data: bytes) -> str:
    return "0x" + data.hex()


def from_hex(value: str, *, expected_length: int | None = None) -> bytes:
    """Parse a 0x-prefixed hex string; the prefix is mandatory on the wire."""
    if not isinstance(value, str) or not value.startswith("0x"):
        raise ValueError(f"expected 0x-prefixed hex string, got {value!r}")
    try:
        raw = bytes.fromhex(value[2:])
    except ValueError as exc:
        raise ValueError(f"invalid hex string {value!r}") from exc
    if expected_length is not None and len(raw) != expected_length:
        raise ValueError(
            f"expected {expected_length} bytes, got {len(raw)} from {value!r}"
        )
    return raw

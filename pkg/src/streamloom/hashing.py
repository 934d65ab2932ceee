"""MurmurHash3 (x86, 32-bit) and key routing helpers.

All key-based routing in the built-in strategies goes through this module so
that worker selection is reproducible and bit-exact across runs and platforms.
"""

from __future__ import annotations

_C1 = 0xCC9E2D51
_C2 = 0x1B873593
_MASK = 0xFFFFFFFF

# Routing hash seeds. h0 drives plain key grouping, h1/h2 the two-choice
# strategies; further seeds are derived on demand for d-choice routing.
# The exact constants are arbitrary but fixed: changing them changes routing.
H0 = 0x00000000
H1 = 0xB0F57EE3
H2 = 0x9747B28C
_EXTRA_SEED_STEP = 0x9E3779B9


def murmur3_32(data: bytes, seed: int = 0) -> int:
    """Hash ``data`` with MurmurHash3 x86_32 and return an unsigned 32-bit int."""
    length = len(data)
    h1 = seed & _MASK
    rounded = length & ~3
    for i in range(0, rounded, 4):
        k1 = data[i] | (data[i + 1] << 8) | (data[i + 2] << 16) | (data[i + 3] << 24)
        k1 = (k1 * _C1) & _MASK
        k1 = ((k1 << 15) | (k1 >> 17)) & _MASK
        k1 = (k1 * _C2) & _MASK
        h1 ^= k1
        h1 = ((h1 << 13) | (h1 >> 19)) & _MASK
        h1 = (h1 * 5 + 0xE6546B64) & _MASK

    k1 = 0
    tail = length & 3
    if tail == 3:
        k1 ^= data[rounded + 2] << 16
    if tail >= 2:
        k1 ^= data[rounded + 1] << 8
    if tail >= 1:
        k1 ^= data[rounded]
        k1 = (k1 * _C1) & _MASK
        k1 = ((k1 << 15) | (k1 >> 17)) & _MASK
        k1 = (k1 * _C2) & _MASK
        h1 ^= k1

    h1 ^= length
    h1 ^= h1 >> 16
    h1 = (h1 * 0x85EBCA6B) & _MASK
    h1 ^= h1 >> 13
    h1 = (h1 * 0xC2B2AE35) & _MASK
    h1 ^= h1 >> 16
    return h1


def key_bytes(key) -> bytes:
    """Canonical byte encoding of a routing key.

    Strings and bytes map to themselves (UTF-8 for strings); everything else
    uses its repr. Equal keys always encode equally.
    """
    if isinstance(key, str):
        return key.encode("utf-8")
    if isinstance(key, (bytes, bytearray)):
        return bytes(key)
    return repr(key).encode("utf-8")


def route_seed(i: int) -> int:
    """Seed of routing hash function h_i (h0..h2 fixed, h3.. derived)."""
    if i == 0:
        return H0
    if i == 1:
        return H1
    if i == 2:
        return H2
    return (H2 + (i - 2) * _EXTRA_SEED_STEP) & _MASK


def hash_key(key, seed_index: int = 0) -> int:
    """Hash an arbitrary routing key with routing hash function h_i."""
    return murmur3_32(key_bytes(key), route_seed(seed_index))

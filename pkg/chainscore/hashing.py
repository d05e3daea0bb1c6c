"""Stable 64-bit hashing shared by the projector, the count-min sketches and
the samplers.

H64(seed, data) is 64-bit FNV-1a over ``le64(seed) || data`` followed by the
MurmurHash3 ``fmix64`` finalizer. The scalar and vectorized forms below must
agree bit for bit; the tests pin both against each other and against the
published FNV-1a vectors.
"""

from __future__ import annotations

import struct
from collections.abc import Sequence

import numpy as np


FNV_OFFSET64 = 0xCBF29CE484222325
FNV_PRIME64 = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF

_FMIX_C1 = 0xFF51AFD7ED558CCD
_FMIX_C2 = 0xC4CEB9FE1A85EC53

_U64_PRIME = np.uint64(FNV_PRIME64)
_U64_C1 = np.uint64(_FMIX_C1)
_U64_C2 = np.uint64(_FMIX_C2)
_U64_33 = np.uint64(33)
_U64_11 = np.uint64(11)


def fnv1a64(data: bytes, state: int = FNV_OFFSET64) -> int:
    """Plain 64-bit FNV-1a, optionally continuing from ``state``."""
    h = state
    for b in data:
        h ^= b
        h = (h * FNV_PRIME64) & MASK64
    return h


def fmix64(h: int) -> int:
    h ^= h >> 33
    h = (h * _FMIX_C1) & MASK64
    h ^= h >> 33
    h = (h * _FMIX_C2) & MASK64
    h ^= h >> 33
    return h


def seed_bytes(seed: int) -> bytes:
    return (seed & MASK64).to_bytes(8, "little", signed=False)


def seeded_state(seed: int, prefix: bytes = b"") -> int:
    """FNV state after absorbing the seed (and an optional constant prefix)."""
    return fnv1a64(seed_bytes(seed) + prefix)


def h64(seed: int, data: bytes | str) -> int:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return fmix64(fnv1a64(data, seeded_state(seed)))


def _encode_part(part: int | str | bytes) -> bytes:
    # Tagged and length-prefixed so that distinct part tuples never collide.
    if isinstance(part, bool):
        raise TypeError("bool is not a valid seed part")
    if isinstance(part, int):
        return b"i" + struct.pack("<Q", part & MASK64)
    if isinstance(part, str):
        part = part.encode("utf-8")
        return b"s" + struct.pack("<I", len(part)) + part
    return b"b" + struct.pack("<I", len(part)) + part


def derive_seed(base: int, *parts: int | str | bytes) -> int:
    """Deterministically derive a 64-bit seed from ``base`` and ``parts``."""
    return h64(base, b"".join(_encode_part(p) for p in parts))


# ---------------------------------------------------------------------------
# Vectorized forms
# ---------------------------------------------------------------------------


def fmix64_array(h: np.ndarray) -> np.ndarray:
    h = h ^ (h >> _U64_33)
    h = h * _U64_C1
    h = h ^ (h >> _U64_33)
    h = h * _U64_C2
    return h ^ (h >> _U64_33)


def _prime_power(m: int) -> np.uint64:
    return np.uint64(pow(FNV_PRIME64, m, 1 << 64))


def h64_many(seed: int, items: Sequence[str | bytes]) -> np.ndarray:
    """H64 of every item under one seed, as a uint64 array."""
    encoded = [s.encode("utf-8") if isinstance(s, str) else s for s in items]
    n = len(encoded)
    if n == 0:
        return np.zeros(0, dtype=np.uint64)
    lengths = np.fromiter((len(b) for b in encoded), dtype=np.int64, count=n)
    width = int(lengths.max()) if n else 0
    buf = np.zeros((n, max(width, 1)), dtype=np.uint8)
    flat = np.frombuffer(b"".join(encoded), dtype=np.uint8)
    rows = np.repeat(np.arange(n), lengths)
    starts = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    cols = np.arange(flat.size) - np.repeat(starts, lengths)
    buf[rows, cols] = flat

    h = np.full(n, seeded_state(seed), dtype=np.uint64)
    for j in range(width):
        live = lengths > j
        stepped = (h ^ buf[:, j].astype(np.uint64)) * _U64_PRIME
        h = np.where(live, stepped, h)
    return fmix64_array(h)


def h64_key_columns(
    states: np.ndarray,
    values: np.ndarray,
    active: Sequence[int],
    k: int,
) -> np.ndarray:
    """Hash fixed-width bin keys under several seeds at once.

    ``states`` holds FNV states of shape ``(..., r)``, already advanced past
    the seed and the key's length prefix. ``values`` is an ``(..., n, k)``
    int64 tensor of bin coordinates whose components outside ``active`` are
    known to be zero. Returns ``(..., r, n)`` uint64 digests equal to hashing
    the full little-endian encoding of each key.
    """
    states = np.asarray(states, dtype=np.uint64)
    n = values.shape[-2]
    h = np.broadcast_to(states[..., None], states.shape + (n,)).copy()
    cursor = 0
    for comp in sorted(set(active)):
        skipped = comp - cursor
        if skipped:
            h *= _prime_power(8 * skipped)
        column = np.ascontiguousarray(values[..., comp], dtype="<i8")
        column_bytes = column.view(np.uint8).reshape(column.shape + (8,))
        for j in range(8):
            h ^= column_bytes[..., j].astype(np.uint64)[..., None, :]
            h *= _U64_PRIME
        cursor = comp + 1
    if k - cursor:
        h *= _prime_power(8 * (k - cursor))
    return fmix64_array(h)


def unit_interval(seed: int, ids: Sequence[str]) -> np.ndarray:
    """Map each id to a reproducible float in [0, 1)."""
    return (h64_many(seed, ids) >> _U64_11).astype(np.float64) / float(1 << 53)

"""Count-min sketches over bin keys.

A bin key is the canonical byte form of an integer K-vector: a uint32
little-endian length followed by K little-endian int64 values. Row ``i`` of a
sketch sends a key to column ``H64(row_seeds[i], key) mod w``; a query takes
the minimum over rows, so it can only overestimate.
"""

from __future__ import annotations

import struct
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from chainscore.hashing import derive_seed, h64, h64_key_columns, seeded_state


BinKey = bytes
Cell = tuple[int, int]

_HEADER = struct.Struct("<II")


def encode_bin_key(z: Sequence[int] | np.ndarray) -> BinKey:
    values = np.asarray(z, dtype="<i8")
    if values.ndim != 1:
        raise ValueError("a bin key is a one-dimensional integer vector")
    return struct.pack("<I", values.size) + values.tobytes()


def decode_bin_key(key: BinKey) -> np.ndarray:
    (k,) = struct.unpack_from("<I", key)
    if len(key) != 4 + 8 * k:
        raise ValueError("bin key length does not match its prefix")
    return np.frombuffer(key, dtype="<i8", offset=4).astype(np.int64)


def cms_row_seeds(chain_seed: int, level: int, rows: int) -> tuple[int, ...]:
    return tuple(derive_seed(chain_seed, "cms", level, row) for row in range(rows))


@dataclass(frozen=True, eq=False)
class CountMinSketch:
    r: int
    w: int
    row_seeds: tuple[int, ...]
    counts: np.ndarray
    _states: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.r < 1 or self.w < 1:
            raise ValueError("count-min sketch needs r >= 1 and w >= 1")
        if len(self.row_seeds) != self.r:
            raise ValueError(f"expected {self.r} row seeds, got {len(self.row_seeds)}")
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (self.r, self.w):
            raise ValueError(f"counts must have shape ({self.r}, {self.w})")
        if (counts < 0).any():
            raise ValueError("counts must be non-negative")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @classmethod
    def empty(cls, r: int, w: int, row_seeds: Sequence[int]) -> CountMinSketch:
        return cls(r, w, tuple(row_seeds), np.zeros((r, w), dtype=np.int64))

    def load(self, totals: Mapping[Cell, int]) -> CountMinSketch:
        """A finalized copy whose counters are ``totals`` added to this one."""
        counts = self.counts.copy()
        for (row, col), total in totals.items():
            counts[row, col] += total
        return CountMinSketch(self.r, self.w, self.row_seeds, counts)

    def with_counts(self, counts: np.ndarray) -> CountMinSketch:
        return CountMinSketch(self.r, self.w, self.row_seeds, counts)

    def add(self, key: BinKey, count: int = 1) -> CountMinSketch:
        return self.load(dict.fromkeys(self.all_cells(key), count))

    @property
    def total(self) -> int:
        """Number of insertions (identical on every row)."""
        return int(self.counts[0].sum())

    # -- hashing ------------------------------------------------------------

    def columns(self, key: BinKey) -> list[int]:
        return [h64(seed, key) % self.w for seed in self.row_seeds]

    def all_cells(self, key: BinKey) -> list[Cell]:
        return list(enumerate(self.columns(key)))

    def all_cols(self, key: BinKey) -> list[tuple[Cell, int]]:
        """The ``r`` pairs ``((row, col), 1)`` a key contributes.

        Per-key reference path; fitting uses the vectorized ``columns_many``.
        """
        return [(cell, 1) for cell in self.all_cells(key)]

    def row_states(self, k: int) -> np.ndarray:
        """FNV states after each row seed and the length prefix of a K-key."""
        states = self._states.get(k)
        if states is None:
            prefix = struct.pack("<I", k)
            states = np.array(
                [seeded_state(seed, prefix) for seed in self.row_seeds], dtype=np.uint64
            )
            self._states[k] = states
        return states

    def columns_many(self, keys: np.ndarray, active: Sequence[int]) -> np.ndarray:
        """``(r, n)`` columns for an ``(n, K)`` matrix of bin coordinates."""
        k = keys.shape[1]
        digests = h64_key_columns(self.row_states(k), keys, active, k)
        return (digests % np.uint64(self.w)).astype(np.int64)

    # -- queries ------------------------------------------------------------

    def query(self, key: BinKey) -> int:
        return int(min(self.counts[row, col] for row, col in self.all_cells(key)))

    def query_columns(self, cols: np.ndarray) -> np.ndarray:
        return self.counts[np.arange(self.r)[:, None], cols].min(axis=0)

    # -- codec --------------------------------------------------------------

    def to_bytes(self) -> bytes:
        seeds = np.asarray(self.row_seeds, dtype="<u8").tobytes()
        counts = self.counts.astype("<i8").tobytes()
        return _HEADER.pack(self.r, self.w) + seeds + counts

    @classmethod
    def from_bytes(
        cls, data: bytes | memoryview, offset: int = 0
    ) -> tuple[CountMinSketch, int]:
        """Decode one sketch starting at ``offset``; returns it and the end offset."""
        r, w = _HEADER.unpack_from(data, offset)
        offset += _HEADER.size
        seeds = np.frombuffer(data, dtype="<u8", count=r, offset=offset)
        offset += 8 * r
        counts = np.frombuffer(data, dtype="<i8", count=r * w, offset=offset)
        offset += 8 * r * w
        sketch = cls(
            r,
            w,
            tuple(int(s) for s in seeds),
            counts.astype(np.int64).reshape(r, w),
        )
        return sketch, offset


def merge_counts(pairs: Iterable[tuple[Cell, int]]) -> dict[Cell, int]:
    """Reference reduce for ``all_cols`` pairs; fitting sums with bincount."""
    totals: dict[Cell, int] = {}
    for cell, count in pairs:
        totals[cell] = totals.get(cell, 0) + count
    return totals


def collision_free(cms: CountMinSketch, keys: Iterable[BinKey]) -> bool:
    """True when no two distinct keys share a column in any row."""
    seen: list[dict[int, BinKey]] = [{} for _ in range(cms.r)]
    for key in keys:
        for row, col in cms.all_cells(key):
            other = seen[row].setdefault(col, key)
            if other != key:
                return False
    return True

"""Sparse hashed random projection of mixed-type points into K-dim sketches.

Component k of a sketch is the sum over real features of h_k(F) * x[F] plus
the sum over categorical features of h_k(F:value), where h_k returns +1, -1
or 0 with probabilities 1/6, 1/6 and 2/3. Nothing about the feature space is
stored ahead of time, so features never seen before project the same way as
any other.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Self, overload

import numpy as np

from chainscore.core import FEATURE_SEPARATOR, SparsePoint, UpdateKind, UpdateTriple
from chainscore.errors import DataError
from chainscore.hashing import h64, h64_many


if TYPE_CHECKING:
    from chainscore.engine import Engine, PartitionedDataset


NAME_CACHE_SIZE = 65_536


def hash_component(seed: int, s: str) -> int:
    """+1 if H64(seed, s) mod 6 == 0, -1 if it is 1, else 0."""
    u = h64(seed, s) % 6
    if u == 0:
        return 1
    if u == 1:
        return -1
    return 0


def hash_components(seed: int, strings: Sequence[str]) -> np.ndarray:
    """Vectorized ``hash_component`` returning an int8 array."""
    u = h64_many(seed, strings) % np.uint64(6)
    out = np.zeros(u.shape, dtype=np.int8)
    out[u == 0] = 1
    out[u == 1] = -1
    return out


def categorical_token(feature: str, value: str) -> str:
    return f"{feature}{FEATURE_SEPARATOR}{value}"


@dataclass(frozen=True, eq=False)
class Sketch:
    id: str
    values: np.ndarray
    label: int | None = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("sketch values must be one-dimensional")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"sketch {self.id!r} has non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def k(self) -> int:
        return int(self.values.size)

    @classmethod
    def zeros(cls, id: str, k: int) -> Sketch:
        return cls(id, np.zeros(k, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class SketchBatch(Sequence[Sketch]):
    """Columnar partition of sketches: ids, an (n, K) matrix and labels."""

    point_ids: tuple[str, ...]
    matrix: np.ndarray
    labels: tuple[int | None, ...]

    def __post_init__(self) -> None:
        n = len(self.point_ids)
        aligned = self.matrix.ndim == 2 and self.matrix.shape[0] == n
        if not aligned or len(self.labels) != n:
            raise ValueError("ids, matrix rows and labels must align")

    @property
    def ids(self) -> Sequence[str]:
        return self.point_ids

    @property
    def k(self) -> int:
        return int(self.matrix.shape[1])

    def __len__(self) -> int:
        return len(self.point_ids)

    @overload
    def __getitem__(self, index: int) -> Sketch: ...

    @overload
    def __getitem__(self, index: slice) -> SketchBatch: ...

    def __getitem__(self, index: int | slice) -> Sketch | SketchBatch:
        if isinstance(index, slice):
            return SketchBatch(
                self.point_ids[index], self.matrix[index], self.labels[index]
            )
        return Sketch(self.point_ids[index], self.matrix[index], self.labels[index])

    def __iter__(self) -> Iterator[Sketch]:
        for i in range(len(self)):
            yield self[i]

    def select(self, mask: np.ndarray) -> Self:
        keep = np.flatnonzero(mask)
        return type(self)(
            tuple(self.point_ids[i] for i in keep),
            self.matrix[keep],
            tuple(self.labels[i] for i in keep),
        )

    @classmethod
    def from_sketches(cls, sketches: Sequence[Sketch], k: int) -> SketchBatch:
        matrix = np.zeros((len(sketches), k), dtype=np.float64)
        for i, s in enumerate(sketches):
            matrix[i] = s.values
        return cls(
            tuple(s.id for s in sketches), matrix, tuple(s.label for s in sketches)
        )


def as_matrix(part: Sequence[Sketch], k: int) -> SketchBatch:
    """View any partition of sketches as a SketchBatch."""
    if isinstance(part, SketchBatch):
        return part
    return SketchBatch.from_sketches(part, k)


@dataclass(frozen=True, eq=False)
class HashProjector:
    """K hash functions h_k, one per seed. Safe to share across workers."""

    seeds: tuple[int, ...]
    name_cache_size: int = NAME_CACHE_SIZE
    # LRU of rows for numeric feature names; categorical name:value strings
    # are hashed per occurrence and never cached.
    _name_rows: OrderedDict[str, np.ndarray] = field(
        default_factory=OrderedDict, repr=False, compare=False
    )
    _lock: threading.Lock = field(
        default_factory=threading.Lock, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ValueError("projector needs at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("projector seeds must be distinct")
        if self.name_cache_size < 1:
            raise ValueError("name cache size must be >= 1")

    @classmethod
    def from_dimension(cls, k: int) -> HashProjector:
        return cls(tuple(range(k)))

    @property
    def k(self) -> int:
        return len(self.seeds)

    @property
    def density(self) -> float:
        return 1.0 / 3.0

    @property
    def cached_names(self) -> int:
        return len(self._name_rows)

    def rows(self, strings: Sequence[str]) -> np.ndarray:
        """(len(strings), K) int8 matrix of h_k(string)."""
        out = np.empty((len(strings), self.k), dtype=np.int8)
        if not strings:
            return out
        for k, seed in enumerate(self.seeds):
            out[:, k] = hash_components(seed, strings)
        return out

    def row(self, s: str) -> np.ndarray:
        return np.fromiter(
            (hash_component(seed, s) for seed in self.seeds),
            dtype=np.int8,
            count=self.k,
        )

    def name_rows(self, names: Sequence[str]) -> np.ndarray:
        """Rows for numeric feature names.

        At most ``name_cache_size`` names stay memoized, least recently used
        evicted first, so an unbounded stream of feature names holds the
        projector at a fixed size. A request larger than the cache is still
        answered in full.
        """
        if not names:
            return np.empty((0, self.k), dtype=np.int8)
        found: dict[str, np.ndarray] = {}
        with self._lock:
            for name in dict.fromkeys(names):
                r = self._name_rows.get(name)
                if r is not None:
                    self._name_rows.move_to_end(name)
                    found[name] = r
        missing = [n for n in dict.fromkeys(names) if n not in found]
        if missing:
            fresh = self.rows(missing)
            fresh.flags.writeable = False
            with self._lock:
                for name, r in zip(missing, fresh, strict=True):
                    found[name] = r
                    self._name_rows[name] = r
                    self._name_rows.move_to_end(name)
                while len(self._name_rows) > self.name_cache_size:
                    self._name_rows.popitem(last=False)
        return np.stack([found[n] for n in names])


def project(point: SparsePoint, p: HashProjector) -> Sketch:
    values = np.zeros(p.k, dtype=np.float64)
    if point.real_features:
        names = list(point.real_features)
        weights = np.fromiter(
            point.real_features.values(), dtype=np.float64, count=len(names)
        )
        values += weights @ p.name_rows(names).astype(np.float64)
    if point.cat_features:
        tokens = [categorical_token(f, v) for f, v in point.cat_features.items()]
        values += p.rows(tokens).sum(axis=0, dtype=np.float64)
    return Sketch(point.id, values, point.label)


def project_partition(points: Sequence[SparsePoint], p: HashProjector) -> SketchBatch:
    """Project a whole partition, hashing each distinct string once."""
    n = len(points)
    matrix = np.zeros((n, p.k), dtype=np.float64)
    names = sorted({name for pt in points for name in pt.real_features})
    tokens = sorted(
        {categorical_token(f, v) for pt in points for f, v in pt.cat_features.items()}
    )
    name_index = {name: i for i, name in enumerate(names)}
    token_index = {t: i for i, t in enumerate(tokens)}
    name_rows = p.name_rows(names).astype(np.float64)
    token_rows = p.rows(tokens).astype(np.float64)
    for i, pt in enumerate(points):
        if pt.real_features:
            idx = [name_index[name] for name in pt.real_features]
            weights = np.fromiter(
                pt.real_features.values(), dtype=np.float64, count=len(idx)
            )
            matrix[i] += weights @ name_rows[idx]
        if pt.cat_features:
            idx = [
                token_index[categorical_token(f, v)]
                for f, v in pt.cat_features.items()
            ]
            matrix[i] += token_rows[idx].sum(axis=0)
    return SketchBatch(
        tuple(pt.id for pt in points), matrix, tuple(pt.label for pt in points)
    )


def project_dataset(
    engine: Engine, points: PartitionedDataset[SparsePoint], p: HashProjector
) -> PartitionedDataset[Sketch]:
    """Step 1: a single map stage, fully local to each partition."""
    return engine.map_partitions(
        points, lambda part: project_partition(part, p), stage="project"
    )


def update_sketch(s: Sketch, t: UpdateTriple, p: HashProjector) -> Sketch:
    """Apply one update triple in O(K)."""
    if s.k != p.k:
        raise ValueError(f"sketch has {s.k} components, projector has {p.k}")
    values = s.values.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        if t.kind is UpdateKind.NUMERIC_DELTA:
            if t.delta != 0.0:
                values += p.name_rows([t.feature])[0] * t.delta
        else:
            assert t.new_val is not None
            values += p.row(categorical_token(t.feature, t.new_val))
            if t.old_val is not None:
                values -= p.row(categorical_token(t.feature, t.old_val))
    if not np.isfinite(values).all():
        raise DataError(f"update to {t.id!r} makes its sketch non-finite")
    return Sketch(s.id, values, s.label)

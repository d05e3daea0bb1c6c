"""Half-space chains: per-level binning of sketches and chain fitting.

Level ``l`` of a chain halves one sketch component. A running vector ``z``
starts at zero; at a feature's first occurrence ``z[f] = (s[f] + shift) / Δ[f]``
and every later occurrence doubles it. The level's bin is ``floor(z)`` over
all K components, so components not yet split sit in bin 0.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from chainscore.cms import BinKey, CountMinSketch, cms_row_seeds, encode_bin_key
from chainscore.engine import Engine, PairBlock, PartitionedDataset
from chainscore.errors import FitError
from chainscore.hashing import derive_seed
from chainscore.projector import Sketch, SketchBatch, as_matrix


logger = logging.getLogger(__name__)

DEGENERATE_WIDTH = 1.0
# Scaled coordinates are held inside this range so floor(z) fits in int64.
BIN_LIMIT = 2.0**62


@dataclass(frozen=True, eq=False)
class HalfSpaceChain:
    seed: int
    delta: np.ndarray
    features: np.ndarray
    shifts: np.ndarray
    sketches: tuple[CountMinSketch, ...]

    def __post_init__(self) -> None:
        delta = np.asarray(self.delta, dtype=np.float64)
        features = np.asarray(self.features, dtype=np.int64)
        shifts = np.asarray(self.shifts, dtype=np.float64)
        if delta.ndim != 1 or not (delta > 0).all():
            raise ValueError("bin widths must be a positive vector")
        if features.shape != shifts.shape or len(self.sketches) != features.size:
            raise ValueError(
                "features, shifts and sketches must have one entry per level"
            )
        if ((features < 0) | (features >= delta.size)).any():
            raise ValueError("split features must index the sketch components")
        # Zero shifts give the unshifted recurrence; init_chain never draws them.
        if ((shifts < 0) | (shifts >= delta[features])).any():
            raise ValueError("shifts must lie in [0, delta[feature])")
        for arr in (delta, features, shifts):
            arr.flags.writeable = False
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "shifts", shifts)

    @property
    def k(self) -> int:
        return int(self.delta.size)

    @property
    def levels(self) -> int:
        return int(self.features.size)

    @property
    def rows(self) -> int:
        return self.sketches[0].r

    @property
    def width(self) -> int:
        return self.sketches[0].w

    @cached_property
    def first_occurrence(self) -> np.ndarray:
        first = np.zeros(self.levels, dtype=bool)
        seen: set[int] = set()
        for level, f in enumerate(self.features.tolist()):
            first[level] = f not in seen
            seen.add(f)
        return first

    def with_sketches(self, sketches: Sequence[CountMinSketch]) -> HalfSpaceChain:
        return HalfSpaceChain(
            self.seed, self.delta, self.features, self.shifts, tuple(sketches)
        )

    def sample_seed(self) -> int:
        return derive_seed(self.seed, "sample")


# ---------------------------------------------------------------------------
# Bin widths and initialization
# ---------------------------------------------------------------------------


def _partition_extremes(
    part: Sequence[Sketch], k: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    if not len(part):
        return []
    matrix = as_matrix(part, k).matrix
    return [(matrix.min(axis=0), matrix.max(axis=0))]


def compute_bin_widths(
    engine: Engine, data: PartitionedDataset[Sketch], k: int
) -> np.ndarray:
    """Half the global range per component, combined from per-partition extremes."""
    extremes = engine.map_partitions(
        data, lambda part: _partition_extremes(part, k), stage="fit/extremes"
    ).collect()
    if not extremes:
        raise FitError("cannot compute bin widths of an empty dataset")
    lo = np.minimum.reduce([e[0] for e in extremes])
    hi = np.maximum.reduce([e[1] for e in extremes])
    delta = (hi - lo) / 2.0
    degenerate = delta <= 0
    if degenerate.any():
        logger.info(
            "%d constant sketch components get width %s",
            degenerate.sum(),
            DEGENERATE_WIDTH,
        )
    return np.where(degenerate, DEGENERATE_WIDTH, delta)


def init_chain(
    rng_seed: int, delta: np.ndarray, levels: int, rows: int, width: int
) -> HalfSpaceChain:
    if levels < 1:
        raise ValueError("a chain needs at least one level")
    delta = np.asarray(delta, dtype=np.float64)
    rng = np.random.default_rng(rng_seed)
    features = rng.integers(0, delta.size, size=levels)
    u = rng.random(levels)
    u[u == 0.0] = 0.5
    widths = delta[features]
    shifts = np.minimum(u * widths, np.nextafter(widths, 0.0))
    sketches = tuple(
        CountMinSketch.empty(rows, width, cms_row_seeds(rng_seed, level, rows))
        for level in range(levels)
    )
    return HalfSpaceChain(rng_seed, delta, features, shifts, sketches)


# ---------------------------------------------------------------------------
# Binning
# ---------------------------------------------------------------------------


def clamp_scaled(z: np.ndarray) -> np.ndarray:
    return np.clip(z, -BIN_LIMIT, BIN_LIMIT)


def bin_ids(s: Sketch, c: HalfSpaceChain) -> list[BinKey]:
    if s.k != c.k:
        raise ValueError(f"sketch has {s.k} components, chain expects {c.k}")
    z = np.zeros(c.k, dtype=np.float64)
    keys: list[BinKey] = []
    for level in range(c.levels):
        f = int(c.features[level])
        if c.first_occurrence[level]:
            z[f] = (s.values[f] + c.shifts[level]) / c.delta[f]
        else:
            z[f] = 2.0 * z[f]
        z[f] = clamp_scaled(z[f])
        keys.append(encode_bin_key(np.floor(z).astype(np.int64)))
    return keys


@dataclass(frozen=True)
class LevelBins:
    """Distinct bins of one level for a batch of sketches.

    ``inverse[i]`` is the row of ``keys`` holding sketch ``i``'s bin.
    """

    level: int
    inverse: np.ndarray
    keys: np.ndarray
    active: tuple[int, ...]

    def columns(self, sketch: CountMinSketch) -> np.ndarray:
        return sketch.columns_many(self.keys, self.active)


def _combine_codes(
    prev: np.ndarray, prev_count: int, v: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    lo = int(v.min())
    span = int(v.max()) - lo + 1
    if prev_count * span < 2**62:
        codes = prev * span + (v - lo)
        _, first, inverse = np.unique(codes, return_index=True, return_inverse=True)
    else:
        pairs = np.stack([prev, v], axis=1)
        _, first, inverse = np.unique(
            pairs, axis=0, return_index=True, return_inverse=True
        )
    return first, inverse.ravel()


def level_bins(matrix: np.ndarray, c: HalfSpaceChain) -> Iterator[LevelBins]:
    """Vectorized ``bin_ids``: yields the distinct bins of every level.

    A level's bin is the previous level's bin with one component replaced,
    so bins are tracked as codes and only distinct keys are materialized.
    """
    n = matrix.shape[0]
    if matrix.shape[1] != c.k:
        raise ValueError(
            f"sketches have {matrix.shape[1]} components, chain expects {c.k}"
        )
    if n == 0:
        return
    z: dict[int, np.ndarray] = {}
    floors: dict[int, np.ndarray] = {}
    inverse = np.zeros(n, dtype=np.int64)
    distinct = 1
    for level in range(c.levels):
        f = int(c.features[level])
        if c.first_occurrence[level]:
            z[f] = clamp_scaled((matrix[:, f] + c.shifts[level]) / c.delta[f])
        else:
            z[f] = clamp_scaled(2.0 * z[f])
        floors[f] = np.floor(z[f]).astype(np.int64)
        first, inverse = _combine_codes(inverse, distinct, floors[f])
        distinct = first.size
        keys = np.zeros((distinct, c.k), dtype=np.int64)
        for comp, values in floors.items():
            keys[:, comp] = values[first]
        yield LevelBins(level, inverse, keys, tuple(sorted(floors)))


def chain_pairs(batch: SketchBatch, c: HalfSpaceChain) -> PairBlock:
    """CMS contributions of a partition for every level of one chain.

    Keys are ``(level * r + row) * w + col``; values are counts. Repeats are
    folded locally, and the block reports the ``n * r * L`` unit pairs it
    stands for.
    """
    n = len(batch)
    r, w = c.rows, c.width
    if n == 0:
        return PairBlock.empty()
    keys: list[np.ndarray] = []
    values: list[np.ndarray] = []
    rows = np.arange(r, dtype=np.int64)[:, None]
    for bins in level_bins(batch.matrix, c):
        cols = bins.columns(c.sketches[bins.level])
        weights = np.bincount(bins.inverse, minlength=bins.keys.shape[0])
        weights = weights.astype(np.int64)
        keys.append(((bins.level * r + rows) * w + cols).ravel())
        values.append(np.broadcast_to(weights, cols.shape).ravel())
    return PairBlock(
        np.concatenate(keys), np.concatenate(values), source_records=n * r * c.levels
    )


def chain_score_matrix(matrix: np.ndarray, c: HalfSpaceChain) -> np.ndarray:
    """Per-point ``min over l of 2**l * count_l`` with levels numbered from 1."""
    best = np.full(matrix.shape[0], np.inf)
    for bins in level_bins(matrix, c):
        sketch = c.sketches[bins.level]
        counts = sketch.query_columns(bins.columns(sketch))
        extrapolated = counts.astype(np.float64) * 2.0 ** (bins.level + 1)
        np.minimum(best, extrapolated[bins.inverse], out=best)
    return best


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def fit_chain(
    engine: Engine,
    data: PartitionedDataset[Sketch],
    c: HalfSpaceChain,
    sample_rate: float,
    sample_seed: int,
    stage: str = "fit/chain",
) -> HalfSpaceChain:
    sampled = engine.sample(data, sample_rate, sample_seed, stage=f"{stage}/sample")
    if sampled.count() == 0:
        raise FitError(f"sample at rate {sample_rate} selected no points")
    blocks = engine.map_partitions(
        sampled,
        lambda part: chain_pairs(as_matrix(part, c.k), c),
        stage=f"{stage}/bins",
    )
    reduced = engine.reduce_by_key(blocks, np.add, stage=f"{stage}/reduce")
    totals = engine.collect_as_map(reduced)
    r, w = c.rows, c.width
    counts = np.zeros(c.levels * r * w, dtype=np.int64)
    if totals:
        flat = np.fromiter(totals.keys(), dtype=np.int64, count=len(totals))
        counts[flat] = np.fromiter(totals.values(), dtype=np.int64, count=len(totals))
    counts = counts.reshape(c.levels, r, w)
    return c.with_sketches(
        [s.with_counts(counts[level]) for level, s in enumerate(c.sketches)]
    )


# ---------------------------------------------------------------------------
# Exact reference
# ---------------------------------------------------------------------------


@dataclass
class ExactHistogramChain:
    """Dictionary histogram with the same binning as a chain; no hashing."""

    chain: HalfSpaceChain
    counts: list[dict[BinKey, int]]

    @classmethod
    def fit(
        cls, chain: HalfSpaceChain, sketches: Sequence[Sketch]
    ) -> ExactHistogramChain:
        counts: list[dict[BinKey, int]] = [{} for _ in range(chain.levels)]
        for s in sketches:
            for level, key in enumerate(bin_ids(s, chain)):
                counts[level][key] = counts[level].get(key, 0) + 1
        return cls(chain, counts)

    def score(self, s: Sketch) -> float:
        return min(
            2.0 ** (level + 1) * self.counts[level].get(key, 0)
            for level, key in enumerate(bin_ids(s, self.chain))
        )

    def level_keys(self, level: int) -> list[BinKey]:
        return list(self.counts[level])

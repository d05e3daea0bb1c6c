"""Tests for the half-space chain recurrence, binning and chain fitting."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chainscore.chain import (
    BIN_LIMIT,
    ExactHistogramChain,
    HalfSpaceChain,
    bin_ids,
    chain_pairs,
    compute_bin_widths,
    fit_chain,
    init_chain,
    level_bins,
)
from chainscore.cms import CountMinSketch, cms_row_seeds, decode_bin_key, encode_bin_key
from chainscore.engine import Engine
from chainscore.errors import FitError
from chainscore.projector import Sketch, SketchBatch


def _unshifted(
    delta: list[float], features: list[int], rows: int = 2, width: int = 1 << 20
) -> HalfSpaceChain:
    """Chain with zero shifts, for direct evaluation of the recurrence."""
    sketches = tuple(
        CountMinSketch.empty(rows, width, cms_row_seeds(0, level, rows))
        for level in range(len(features))
    )
    return HalfSpaceChain(
        0, np.array(delta), np.array(features), np.zeros(len(features)), sketches
    )


def _keys(s: Sketch, c: HalfSpaceChain) -> list[list[int]]:
    return [decode_bin_key(k).tolist() for k in bin_ids(s, c)]


def _batch(matrix: np.ndarray) -> SketchBatch:
    n = matrix.shape[0]
    return SketchBatch(tuple(str(i) for i in range(n)), matrix, (None,) * n)


# ---------------------------------------------------------------------------
# Recurrence
# ---------------------------------------------------------------------------


def test_unshifted_recurrence_example() -> None:
    c = _unshifted([2.0, 4.0], [0, 0, 1])
    assert _keys(Sketch("a", np.array([3.0, 5.0])), c) == [[1, 0], [3, 0], [3, 1]]


def test_zero_sketch_stays_in_zero_bin() -> None:
    c = _unshifted([1.0, 3.0, 2.0], [2, 0, 2, 1, 0])
    assert _keys(Sketch.zeros("a", 3), c) == [[0, 0, 0]] * 5


@given(st.floats(0.0, 100.0), st.integers(1, 6))
def test_repeat_occurrence_doubles(value: float, repeats: int) -> None:
    c = _unshifted([3.0], [0] * repeats)
    keys = _keys(Sketch("a", np.array([value])), c)
    for occurrence, key in enumerate(keys, start=1):
        assert key == [int(np.floor(value * 2 ** (occurrence - 1) / 3.0))]


def test_unsampled_components_do_not_matter() -> None:
    rng = np.random.default_rng(3)
    c = init_chain(11, np.array([1.0, 2.0, 0.5, 4.0]), levels=6, rows=2, width=64)
    sampled = sorted(set(c.features.tolist()))
    for _ in range(50):
        a = rng.uniform(0, c.delta)
        b = rng.uniform(0, c.delta)
        b[sampled] = a[sampled]
        assert bin_ids(Sketch("a", a), c) == bin_ids(Sketch("b", b), c)


@pytest.mark.parametrize("value", [1e300, -1e300])
def test_far_points_saturate_instead_of_wrapping(value: float) -> None:
    c = _unshifted([1.0, 1.0], [0, 0, 1])
    keys = _keys(Sketch("far", np.array([value, 0.0])), c)
    limit = int(BIN_LIMIT)
    expected = limit if value > 0 else -limit
    assert keys == [[expected, 0], [expected, 0], [expected, 0]]
    (bins,) = [b for b in level_bins(np.array([[value, 0.0]]), c) if b.level == 2]
    assert bins.keys[0].tolist() == [expected, 0]


def test_bin_ids_rejects_wrong_dimension() -> None:
    with pytest.raises(ValueError):
        bin_ids(Sketch.zeros("a", 3), _unshifted([1.0, 1.0], [0]))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_level_bins_matches_bin_ids(seed: int) -> None:
    rng = np.random.default_rng(seed)
    matrix = np.round(rng.normal(size=(200, 5)), 1)
    c = init_chain(seed, np.full(5, 0.3), levels=12, rows=2, width=64)
    per_point = [bin_ids(Sketch(str(i), row), c) for i, row in enumerate(matrix)]
    for bins in level_bins(matrix, c):
        keys = [encode_bin_key(bins.keys[j]) for j in bins.inverse]
        assert keys == [p[bins.level] for p in per_point]
        assert len({encode_bin_key(k) for k in bins.keys}) == bins.keys.shape[0]


# ---------------------------------------------------------------------------
# Bin widths and initialization
# ---------------------------------------------------------------------------


def test_bin_width_is_half_the_range() -> None:
    sketches = [Sketch("a", np.array([-2.0])), Sketch("b", np.array([6.0]))]
    with Engine(workers=2, partitions=2) as engine:
        delta = compute_bin_widths(engine, engine.parallelize(sketches), 1)
    assert delta.tolist() == [4.0]


def test_single_point_widths_are_repaired() -> None:
    with Engine(workers=1) as engine:
        ds = engine.parallelize([Sketch("a", np.array([1.0, -3.0]))], 4)
        assert compute_bin_widths(engine, ds, 2).tolist() == [1.0, 1.0]


def test_bin_widths_of_empty_dataset() -> None:
    with Engine(workers=1) as engine:
        with pytest.raises(FitError):
            compute_bin_widths(engine, engine.parallelize([], 2), 3)


def test_init_chain_is_deterministic() -> None:
    delta = np.array([1.0, 2.0, 3.0])
    a = init_chain(5, delta, levels=8, rows=3, width=10)
    b = init_chain(5, delta, levels=8, rows=3, width=10)
    assert a.features.tolist() == b.features.tolist()
    assert a.shifts.tolist() == b.shifts.tolist()
    assert [s.row_seeds for s in a.sketches] == [s.row_seeds for s in b.sketches]


def test_init_chain_shifts_lie_inside_the_width() -> None:
    delta = np.array([0.5, 2.0, 8.0])
    c = init_chain(9, delta, levels=50, rows=1, width=1)
    widths = delta[c.features]
    assert ((c.shifts > 0) & (c.shifts < widths)).all()


def test_single_component_always_splits_feature_zero() -> None:
    c = init_chain(1, np.array([2.0]), levels=7, rows=1, width=4)
    assert c.features.tolist() == [0] * 7


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def test_single_point_fills_one_cell_per_row() -> None:
    c = init_chain(2, np.array([1.0, 1.0]), levels=2, rows=3, width=1 << 16)
    with Engine(workers=1) as engine:
        ds = engine.parallelize([Sketch("a", np.array([0.2, 0.7]))])
        fitted = fit_chain(engine, ds, c, 1.0, c.sample_seed())
    for sketch in fitted.sketches:
        assert sketch.total == 1
        assert int((sketch.counts > 0).sum()) == 3


def test_identical_points_share_one_bin() -> None:
    c = init_chain(4, np.array([1.0]), levels=1, rows=2, width=1 << 16)
    points = [Sketch(str(i), np.array([0.4])) for i in range(8)]
    with Engine(workers=2, partitions=3) as engine:
        fitted = fit_chain(engine, engine.parallelize(points), c, 1.0, 0)
    assert fitted.sketches[0].query(bin_ids(points[0], c)[0]) == 8


def test_counts_are_partition_invariant() -> None:
    rng = np.random.default_rng(0)
    matrix = rng.normal(size=(300, 4))
    c = init_chain(8, np.full(4, 0.5), levels=6, rows=3, width=32)
    results = []
    for parts in (1, 4, 16):
        with Engine(workers=4, partitions=parts) as engine:
            sketches = [Sketch(str(i), row) for i, row in enumerate(matrix)]
            ds = engine.parallelize(sketches, parts)
            fitted = fit_chain(engine, ds, c, 0.5, 77)
            results.append([s.counts.tolist() for s in fitted.sketches])
    assert results[0] == results[1] == results[2]


def test_fit_never_undercounts_exact_histogram() -> None:
    rng = np.random.default_rng(5)
    values = rng.integers(0, 3, size=(40, 2)).astype(float)
    sketches = [Sketch(str(i), v) for i, v in enumerate(values)]
    c = init_chain(6, np.array([1.0, 1.0]), levels=4, rows=2, width=1 << 20)
    exact = ExactHistogramChain.fit(c, sketches)
    with Engine(workers=2) as engine:
        fitted = fit_chain(engine, engine.parallelize(sketches), c, 1.0, 0)
    for level, sketch in enumerate(fitted.sketches):
        for key, count in exact.counts[level].items():
            assert sketch.query(key) >= count
        assert sketch.total == len(sketches)


def test_empty_sample_is_an_error() -> None:
    c = init_chain(0, np.array([1.0]), levels=1, rows=1, width=4)
    with Engine(workers=1) as engine:
        ds = engine.parallelize([Sketch("a", np.array([0.0]))])
        with pytest.raises(FitError):
            fit_chain(engine, ds, c, 1e-12, 3)


def test_chain_pairs_report_logical_records() -> None:
    c = init_chain(0, np.array([1.0, 1.0]), levels=3, rows=2, width=16)
    block = chain_pairs(_batch(np.zeros((5, 2))), c)
    assert block.records == 5 * 2 * 3
    assert int(block.values.sum()) == 5 * 2 * 3


def test_fit_shuffle_accounting() -> None:
    c = init_chain(1, np.array([1.0, 1.0]), levels=4, rows=2, width=8)
    points = [Sketch(str(i), np.array([i / 10, 0.0])) for i in range(10)]
    with Engine(workers=2, partitions=2) as engine:
        fit_chain(engine, engine.parallelize(points), c, 1.0, 0)
        reduce = engine.metrics.stages["fit/chain/reduce"]
    assert reduce.pre_combine_records == 10 * 2 * 4
    assert reduce.shuffled_records <= 2 * 4 * 2 * 8
    assert reduce.shuffled_bytes > 0

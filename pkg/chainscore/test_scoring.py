from __future__ import annotations

import io
from pathlib import Path

import numpy as np
import pytest

from chainscore.chain import (
    ExactHistogramChain,
    HalfSpaceChain,
    bin_ids,
    fit_chain,
    init_chain,
)
from chainscore.engine import Engine
from chainscore.errors import DimensionMismatchError, ParseError
from chainscore.model import EnsembleModel
from chainscore.projector import Sketch
from chainscore.scoring import (
    ScoreRecord,
    outlier_count,
    rank_and_label,
    read_scores_tsv,
    score_ensemble,
    score_point_chain,
    write_scores_tsv,
)


WIDE = 1 << 20


def _with_level_counts(
    c: HalfSpaceChain, s: Sketch, counts: list[int]
) -> HalfSpaceChain:
    """Chain whose bin of ``s`` holds ``counts[l]`` points at level l."""
    keys = bin_ids(s, c)
    return c.with_sketches(
        [sk.add(key, n) for sk, key, n in zip(c.sketches, keys, counts, strict=True)]
    )


def _ensemble(*chains: HalfSpaceChain) -> EnsembleModel:
    k = chains[0].k
    return EnsembleModel(tuple(range(k)), chains[0].delta, chains)


# ---------------------------------------------------------------------------
# score_point_chain
# ---------------------------------------------------------------------------


def test_singleton_bins_score_two() -> None:
    s = Sketch("a", np.array([0.3, 0.9]))
    c = _with_level_counts(init_chain(1, np.ones(2), 5, 2, WIDE), s, [1] * 5)
    assert score_point_chain(s, c) == 2.0


def test_minimum_over_extrapolated_levels() -> None:
    s = Sketch("a", np.array([0.3, 0.9]))
    c = _with_level_counts(init_chain(1, np.ones(2), 3, 2, WIDE), s, [4, 1, 1])
    assert score_point_chain(s, c) == 4.0


def test_identical_points_single_level() -> None:
    c = init_chain(3, np.ones(1), 1, 2, WIDE)
    points = [Sketch(str(i), np.array([0.25])) for i in range(8)]
    with Engine(workers=2) as engine:
        fitted = fit_chain(engine, engine.parallelize(points), c, 1.0, 0)
    assert [score_point_chain(p, fitted) for p in points] == [16.0] * 8


def test_unseen_point_scores_zero() -> None:
    c = init_chain(3, np.ones(1), 2, 2, WIDE)
    with Engine(workers=1) as engine:
        ds = engine.parallelize([Sketch("a", np.array([0.1]))])
        fitted = fit_chain(engine, ds, c, 1.0, 0)
    assert score_point_chain(Sketch("far", np.array([50.0])), fitted) == 0.0


def test_sketch_never_scores_below_exact_counts() -> None:
    rng = np.random.default_rng(0)
    sketches = [Sketch(str(i), v) for i, v in enumerate(rng.normal(size=(200, 3)))]
    c = init_chain(4, np.full(3, 0.4), 8, 2, 4)
    exact = ExactHistogramChain.fit(c, sketches)
    with Engine(workers=2) as engine:
        fitted = fit_chain(engine, engine.parallelize(sketches), c, 1.0, 0)
    for s in sketches:
        assert score_point_chain(s, fitted) >= exact.score(s)


def test_more_neighbours_never_lower_score() -> None:
    c = init_chain(2, np.ones(2), 4, 2, WIDE)
    dense = [Sketch(f"d{i}", np.array([0.5, 0.5])) for i in range(6)]
    sparse = [Sketch(f"s{i}", np.array([-3.7, 2.9])) for i in range(2)]
    with Engine(workers=2) as engine:
        fitted = fit_chain(engine, engine.parallelize(dense + sparse), c, 1.0, 0)
    assert score_point_chain(dense[0], fitted) >= score_point_chain(sparse[0], fitted)


# ---------------------------------------------------------------------------
# score_ensemble
# ---------------------------------------------------------------------------


def test_two_chain_scores_average() -> None:
    s = Sketch("a", np.array([0.3, 0.9]))
    a = _with_level_counts(init_chain(1, np.ones(2), 3, 2, WIDE), s, [1, 1, 1])
    b = _with_level_counts(init_chain(2, np.ones(2), 3, 2, WIDE), s, [3, 3, 3])
    model = _ensemble(a, b)
    with Engine(workers=1) as engine:
        (record,) = score_ensemble(engine, engine.parallelize([s]), model).collect()
    assert record.score == (2.0 + 6.0) / 2


def test_single_chain_ensemble_equals_chain_score() -> None:
    rng = np.random.default_rng(1)
    sketches = [Sketch(str(i), v) for i, v in enumerate(rng.normal(size=(40, 2)))]
    c = init_chain(7, np.full(2, 0.5), 5, 3, 64)
    with Engine(workers=2) as engine:
        fitted = fit_chain(engine, engine.parallelize(sketches), c, 1.0, 0)
        ds = engine.parallelize(sketches)
        records = score_ensemble(engine, ds, _ensemble(fitted)).collect()
    expected = [score_point_chain(s, fitted) for s in sketches]
    assert [r.score for r in records] == expected


def test_scores_independent_of_partitions_and_threads() -> None:
    rng = np.random.default_rng(2)
    sketches = [
        Sketch(str(i), v, label=i % 2)
        for i, v in enumerate(rng.normal(size=(100, 3)))
    ]
    chains = []
    with Engine(workers=2) as engine:
        ds = engine.parallelize(sketches)
        for m in range(3):
            c = init_chain(m, np.full(3, 0.6), 6, 2, 16)
            chains.append(fit_chain(engine, ds, c, 1.0, m))
    model = _ensemble(*chains)
    seen = set()
    for parts in (1, 4, 16):
        for threads in (1, 8):
            with Engine(workers=4, partitions=parts) as engine:
                records = score_ensemble(
                    engine, engine.parallelize(sketches), model, threads=threads
                ).collect()
            seen.add(tuple((r.id, r.score, r.label) for r in records))
    assert len(seen) == 1


def test_score_ensemble_rejects_wrong_dimension() -> None:
    c = init_chain(1, np.ones(2), 2, 1, 8)
    with Engine(workers=1) as engine:
        with pytest.raises(DimensionMismatchError):
            ds = engine.parallelize([Sketch.zeros("a", 3)])
            score_ensemble(engine, ds, _ensemble(c))


# ---------------------------------------------------------------------------
# rank_and_label
# ---------------------------------------------------------------------------


def _records(scores: list[float]) -> list[ScoreRecord]:
    return [ScoreRecord(str(i), s) for i, s in enumerate(scores)]


def test_rank_and_label_lowest_scores() -> None:
    assert rank_and_label(_records([2.0, 4.0, 6.0, 8.0]), 0.5) == [1, 1, 0, 0]


def test_rank_and_label_permutation() -> None:
    records = _records([5.0, 1.0, 9.0, 3.0, 7.0, 2.0])
    labels = rank_and_label(records, 0.3)
    flagged = {r.id for r, y in zip(records, labels, strict=True) if y}
    reversed_records = records[::-1]
    reversed_labels = rank_and_label(reversed_records, 0.3)
    pairs = zip(reversed_records, reversed_labels, strict=True)
    assert flagged == {r.id for r, y in pairs if y}
    assert flagged == {"1", "5"}


def test_rank_and_label_ties_break_by_id() -> None:
    records = [ScoreRecord("b", 1.0), ScoreRecord("a", 1.0), ScoreRecord("c", 5.0)]
    assert rank_and_label(records, 0.2) == [0, 1, 0]


@pytest.mark.parametrize(
    ("n", "contamination", "expected"),
    [(4, 0.5, 2), (30, 0.1, 3), (10, 0.01, 1), (7, 0.5, 4), (0, 0.5, 0)],
)
def test_outlier_count(n: int, contamination: float, expected: int) -> None:
    assert outlier_count(n, contamination) == expected


@pytest.mark.parametrize("contamination", [0.0, 1.0, -0.5])
def test_outlier_count_rejects_out_of_range(contamination: float) -> None:
    with pytest.raises(ValueError):
        outlier_count(10, contamination)


# ---------------------------------------------------------------------------
# TSV
# ---------------------------------------------------------------------------


def test_scores_tsv_round_trip(tmp_path: Path) -> None:
    records = [ScoreRecord("a", 2.0), ScoreRecord("b", 0.0), ScoreRecord("c", 1.5)]
    buf = io.StringIO()
    write_scores_tsv(buf, records, labels=[0, 1, 0])
    lines = buf.getvalue().splitlines()
    assert lines[0] == "id\tscore\toutlierness\tlabel"
    assert lines[2] == "b\t0.0\t0.0\t1"
    path = tmp_path / "scores.tsv"
    path.write_text(buf.getvalue(), encoding="utf-8")
    parsed = [(r.id, r.score) for r in read_scores_tsv(path)]
    assert parsed == [("a", 2.0), ("b", 0.0), ("c", 1.5)]


def test_read_scores_tsv_requires_header(tmp_path: Path) -> None:
    path = tmp_path / "scores.tsv"
    path.write_text("a\t1.0\n", encoding="utf-8")
    with pytest.raises(ParseError, match="header"):
        read_scores_tsv(path)


def test_read_scores_tsv_bad_score(tmp_path: Path) -> None:
    path = tmp_path / "scores.tsv"
    path.write_text("id\tscore\toutlierness\na\tx\t1\n", encoding="utf-8")
    with pytest.raises(ParseError) as exc_info:
        read_scores_tsv(path)
    assert exc_info.value.line_no == 2

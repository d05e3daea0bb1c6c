from __future__ import annotations

import pytest
from pydantic import ValidationError

from chainscore.bench import inject_grid_outliers, sample_clustered_2d
from chainscore.config import RunConfig
from chainscore.sweep import SweepGrid, run_one, run_sweep


BASE = RunConfig(k=8, chains=2, levels=5, rows=2, width=64, workers=2, threads=2)


def test_grid_product_order() -> None:
    grid = SweepGrid(
        chains=(1, 2), levels=(3,), sample_rates=(1.0, 0.5), partitions=(2,)
    )
    combos = [(c.chains, c.sample_rate) for c in grid.configs(BASE)]
    assert combos == [(1, 1.0), (1, 0.5), (2, 1.0), (2, 0.5)]
    for c in grid.configs(BASE):
        assert (c.k, c.levels, c.partitions) == (8, 3, 2)
        assert (c.workers, c.threads) == (BASE.workers, BASE.threads)


def test_grid_varies_workers_and_threads() -> None:
    grid = SweepGrid(chains=(2,), workers=(1, 4), threads=(1, 2), partitions=(8,))
    combos = [(c.workers, c.threads, c.partitions) for c in grid.configs(BASE)]
    assert combos == [(1, 1, 8), (1, 2, 8), (4, 1, 8), (4, 2, 8)]


def test_grid_rejects_empty_axis() -> None:
    with pytest.raises(ValidationError):
        SweepGrid(chains=())


def test_grid_values_are_validated_as_run_configs() -> None:
    with pytest.raises(ValidationError):
        list(SweepGrid(sample_rates=(0.0,)).configs(BASE))


def test_run_one_and_partition_invariance() -> None:
    data = inject_grid_outliers(sample_clustered_2d(800, rng_seed=6), 8, rng_seed=6)
    points = data.to_points()
    labels = data.labels.tolist()
    grid = SweepGrid(chains=(2,), levels=(5,), partitions=(1, 3))
    rows = run_sweep(points, labels, BASE, grid)
    assert [r.partitions for r in rows] == [1, 3]
    assert rows[0].auroc == rows[1].auroc
    assert rows[-1].shuffled_bytes > 0
    assert rows[0].peak_bytes > 0
    assert 0.0 <= rows[0].auroc <= 1.0
    # contamination defaults to the true outlier fraction
    assert rows[0].f1 is not None


def test_run_one_uses_given_contamination() -> None:
    data = inject_grid_outliers(sample_clustered_2d(300, rng_seed=7), 3, rng_seed=7)
    config = BASE.model_copy(update={"partitions": 2, "contamination": 0.5})
    row = run_one(data.to_points(), data.labels.tolist(), config)
    assert row.partitions == 2
    assert row.f1 is not None


def test_worker_and_thread_counts_do_not_change_quality() -> None:
    data = inject_grid_outliers(sample_clustered_2d(600, rng_seed=8), 6, rng_seed=8)
    grid = SweepGrid(chains=(2,), levels=(5,), workers=(1, 3), threads=(1, 2))
    rows = run_sweep(data.to_points(), data.labels.tolist(), BASE, grid)
    assert [(r.workers, r.threads) for r in rows] == [(1, 1), (1, 2), (3, 1), (3, 2)]
    assert len({r.auroc for r in rows}) == 1

"""Hyperparameter and scaling sweeps over one labeled dataset.

Every combination of ensemble size, depth, sample rate, worker count, thread
count and partition count is fitted and scored from scratch on a fresh
engine, recording wall time, peak traced memory and detection quality.
"""

from __future__ import annotations

import itertools
import logging
import time
import tracemalloc
from collections.abc import Iterator, Sequence

from pydantic import BaseModel, Field

from chainscore.config import RunConfig
from chainscore.core import SparsePoint
from chainscore.engine import Engine
from chainscore.runner import evaluate, fit_pipeline, score_pipeline


logger = logging.getLogger(__name__)


class SweepGrid(BaseModel):
    """Axes of a sweep; empty ``workers``/``threads`` keep the base config's value."""

    chains: tuple[int, ...] = Field((10,), min_length=1)
    levels: tuple[int, ...] = Field((10,), min_length=1)
    sample_rates: tuple[float, ...] = Field((1.0,), min_length=1)
    workers: tuple[int, ...] = ()
    threads: tuple[int, ...] = ()
    partitions: tuple[int, ...] = Field((4,), min_length=1)

    def configs(self, base: RunConfig) -> Iterator[RunConfig]:
        for m, depth, rate, workers, threads, parts in itertools.product(
            self.chains,
            self.levels,
            self.sample_rates,
            self.workers or (base.workers,),
            self.threads or (base.threads,),
            self.partitions,
        ):
            yield RunConfig.model_validate(
                base.model_dump()
                | {
                    "chains": m,
                    "levels": depth,
                    "sample_rate": rate,
                    "workers": workers,
                    "threads": threads,
                    "partitions": parts,
                }
            )


class SweepRow(BaseModel):
    chains: int
    levels: int
    sample_rate: float
    workers: int
    threads: int
    partitions: int
    fit_seconds: float
    score_seconds: float
    peak_bytes: int
    shuffled_bytes: int
    auroc: float
    auprc: float
    f1: float | None


def run_one(
    points: Sequence[SparsePoint], labels: Sequence[int], config: RunConfig
) -> SweepRow:
    contamination = config.contamination
    if contamination is None:
        contamination = sum(1 for v in labels if v > 0) / len(labels)
    tracemalloc.start()
    try:
        with Engine(workers=config.workers, partitions=config.partitions) as engine:
            ds = engine.parallelize(points, config.partitions)
            start = time.perf_counter()
            model, report = fit_pipeline(engine, ds, config)
            fitted = time.perf_counter()
            records = score_pipeline(engine, ds, model, threads=config.threads)
            scored = time.perf_counter()
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    if not 0 < contamination < 1:
        contamination = None
    quality = evaluate(records, list(labels), contamination)
    assert config.partitions is not None
    row = SweepRow(
        chains=config.chains,
        levels=config.levels,
        sample_rate=config.sample_rate,
        workers=config.workers,
        threads=config.threads,
        partitions=config.partitions,
        fit_seconds=fitted - start,
        score_seconds=scored - fitted,
        peak_bytes=peak,
        shuffled_bytes=report.shuffled_bytes,
        auroc=quality.auroc,
        auprc=quality.auprc,
        f1=quality.f1,
    )
    logger.info(
        "M=%d L=%d rate=%s workers=%d threads=%d parts=%d: auroc=%.4f fit=%.2fs",
        row.chains,
        row.levels,
        row.sample_rate,
        row.workers,
        row.threads,
        row.partitions,
        row.auroc,
        row.fit_seconds,
    )
    return row


def run_sweep(
    points: Sequence[SparsePoint],
    labels: Sequence[int],
    base: RunConfig,
    grid: SweepGrid,
) -> list[SweepRow]:
    return [run_one(points, labels, config) for config in grid.configs(base)]


class SweepReport(BaseModel):
    rows: list[SweepRow]

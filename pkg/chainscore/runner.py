"""End-to-end pipelines: load, project, fit, score and evaluate."""

from __future__ import annotations

import logging
import time
from pathlib import Path

import numpy as np
from pydantic import BaseModel

from chainscore.bench import LABEL_COLUMN
from chainscore.config import RunConfig
from chainscore.core import (
    DatasetSchema,
    SparsePoint,
    parse_dense_csv,
    parse_sparse_kv,
    read_csv_header,
)
from chainscore.engine import Engine, PartitionedDataset, StageMetrics
from chainscore.errors import DataError
from chainscore.metrics import EvalReport, auprc, auroc, f1
from chainscore.model import EnsembleModel, fit_ensemble
from chainscore.projector import HashProjector, Sketch, project_dataset
from chainscore.scoring import ScoreRecord, rank_and_label, score_ensemble


logger = logging.getLogger(__name__)


class FitReport(BaseModel):
    points: int
    k: int
    chains: int
    levels: int
    rows: int
    width: int
    sample_rate: float
    run_seed: int
    workers: int
    partitions: int
    threads: int
    project_seconds: float
    fit_seconds: float
    pre_combine_records: int
    shuffled_bytes: int
    model_bytes: int = 0
    stages: dict[str, StageMetrics] = {}


def open_engine(config: RunConfig) -> Engine:
    return Engine(workers=config.workers, partitions=config.partitions)


def _schema_for(path: Path, config: RunConfig) -> DatasetSchema:
    header = read_csv_header(path)
    if not header:
        return DatasetSchema((), ())
    if not config.has_header:
        extra = int(config.id_column is not None) + int(config.label_column is not None)
        names = [f"f{j}" for j in range(len(header) - extra)]
        columns = ([config.id_column] if config.id_column else []) + names
        columns += [config.label_column] if config.label_column else []
        header = columns
    missing = {c for c in (config.id_column, config.label_column) if c} - set(header)
    if missing:
        raise DataError(f"{path}: columns {sorted(missing)} not in header")
    try:
        return DatasetSchema.from_header(
            header,
            categorical=config.categorical,
            id_column=config.id_column,
            label_column=config.label_column,
        )
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def with_default_label(config: RunConfig, path: Path) -> RunConfig:
    """Treat a ``label`` header column as ground truth unless one is configured.

    Files written by ``gen`` carry one, and it must never reach the projection.
    """
    if config.label_column is not None or config.input_format != "csv":
        return config
    if not config.has_header or LABEL_COLUMN not in read_csv_header(path):
        return config
    logger.info("%s: using column %r as labels", path, LABEL_COLUMN)
    return config.model_copy(update={"label_column": LABEL_COLUMN})


def load_points(
    engine: Engine, path: Path, config: RunConfig
) -> PartitionedDataset[SparsePoint]:
    if config.input_format == "kv":
        return parse_sparse_kv(path, engine, config.partitions)
    schema = _schema_for(path, config)
    return parse_dense_csv(path, schema, config.has_header, engine, config.partitions)


def project(
    engine: Engine, points: PartitionedDataset[SparsePoint], k: int
) -> PartitionedDataset[Sketch]:
    return project_dataset(engine, points, HashProjector.from_dimension(k))


def fit_pipeline(
    engine: Engine, points: PartitionedDataset[SparsePoint], config: RunConfig
) -> tuple[EnsembleModel, FitReport]:
    """Project, compute bin widths and fit the ensemble: one pass over the points."""
    start = time.perf_counter()
    sketches = project(engine, points, config.k)
    projected = time.perf_counter()
    model = fit_ensemble(engine, sketches, config)
    done = time.perf_counter()
    metrics = engine.metrics
    report = FitReport(
        points=points.count(),
        k=config.k,
        chains=config.chains,
        levels=config.levels,
        rows=config.rows,
        width=config.width,
        sample_rate=config.sample_rate,
        run_seed=config.run_seed,
        workers=engine.workers,
        partitions=points.partition_count,
        threads=config.threads,
        project_seconds=projected - start,
        fit_seconds=done - projected,
        pre_combine_records=int(metrics.total("pre_combine_records", prefix="fit/")),
        shuffled_bytes=int(metrics.total("shuffled_bytes", prefix="fit/")),
        stages=dict(metrics.stages),
    )
    logger.info(
        "fit %d points in %.2fs (%d bytes shuffled)",
        report.points,
        report.project_seconds + report.fit_seconds,
        report.shuffled_bytes,
    )
    return model, report


def score_pipeline(
    engine: Engine,
    points: PartitionedDataset[SparsePoint],
    model: EnsembleModel,
    threads: int = 1,
) -> list[ScoreRecord]:
    """Scores in input order."""
    sketches = project_dataset(engine, points, model.projector)
    return score_ensemble(engine, sketches, model, threads=threads).collect()


def evaluate(
    records: list[ScoreRecord],
    labels: list[int] | np.ndarray,
    contamination: float | None,
) -> EvalReport:
    truth = np.asarray(labels)
    if len(records) != truth.size:
        raise DataError(f"{len(records)} scores but {truth.size} labels")
    outlierness = np.array([r.outlierness for r in records], dtype=np.float64)
    outliers = int((truth > 0).sum())
    report = EvalReport(
        n=truth.size,
        outliers=outliers,
        auroc=auroc(outlierness, truth),
        auprc=auprc(outlierness, truth),
        contamination=contamination,
    )
    if contamination is not None:
        report.f1 = f1(rank_and_label(records, contamination), truth)
    return report


def labels_of(points: PartitionedDataset[SparsePoint]) -> list[tuple[str, int]]:
    """(id, label) in input order; a point without a label is an error."""
    out = []
    for p in points.collect():
        if p.label is None:
            raise DataError(f"point {p.id!r} has no label")
        out.append((p.id, p.label))
    return out

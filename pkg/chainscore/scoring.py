"""Outlier scores: mean over chains of the minimum extrapolated bin count.

Lower scores are more outlying. Ranking metrics use ``outlierness = -score``.
"""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import TextIO

from chainscore.chain import HalfSpaceChain, bin_ids
from chainscore.engine import Engine, PartitionedDataset
from chainscore.errors import ParseError
from chainscore.model import EnsembleModel
from chainscore.projector import Sketch, SketchBatch, as_matrix


logger = logging.getLogger(__name__)

TSV_COLUMNS = ("id", "score", "outlierness")


@dataclass(frozen=True)
class ScoreRecord:
    id: str
    score: float
    label: int | None = None

    @property
    def outlierness(self) -> float:
        return -self.score if self.score else 0.0


def score_point_chain(s: Sketch, c: HalfSpaceChain) -> float:
    """Reference scorer for one sketch; batches go through ``chain_score_matrix``."""
    keys = bin_ids(s, c)
    return min(
        2.0 ** (level + 1) * sketch.query(key)
        for level, (key, sketch) in enumerate(zip(keys, c.sketches, strict=True))
    )


def _partition_dimension(part: Sequence[Sketch]) -> int | None:
    if not len(part):
        return None
    if isinstance(part, SketchBatch):
        return part.k
    return part[0].k


def score_ensemble(
    engine: Engine,
    data: PartitionedDataset[Sketch],
    model: EnsembleModel,
    threads: int = 1,
) -> PartitionedDataset[ScoreRecord]:
    """Score every sketch; the model reaches workers once, as a broadcast."""
    for part in data.partitions:
        k = _partition_dimension(part)
        if k is not None:
            model.check_dimension(k)
    shared = engine.broadcast(model)

    def score(part: Sequence[Sketch]) -> list[ScoreRecord]:
        if not len(part):
            return []
        batch = as_matrix(part, shared.value.k)
        scores = shared.value.score_matrix(batch.matrix, threads=threads)
        return [
            ScoreRecord(point_id, float(value), label)
            for point_id, value, label in zip(
                batch.ids, scores, batch.labels, strict=True
            )
        ]

    return engine.map_partitions(data, score, stage="score")


def outlier_count(n: int, contamination: float) -> int:
    if not 0.0 < contamination < 1.0:
        raise ValueError(f"contamination must be in (0, 1), got {contamination}")
    if n == 0:
        return 0
    # round() first so that 0.1 * 30 counts as 3, not 4
    return max(1, math.ceil(round(contamination * n, 9)))


def rank_and_label(scores: Sequence[ScoreRecord], contamination: float) -> list[int]:
    """1 for the ``ceil(contamination * n)`` lowest scores, ties broken by id."""
    n_out = outlier_count(len(scores), contamination)
    order = sorted(range(len(scores)), key=lambda i: (scores[i].score, scores[i].id))
    labels = [0] * len(scores)
    for i in order[:n_out]:
        labels[i] = 1
    return labels


# ---------------------------------------------------------------------------
# TSV
# ---------------------------------------------------------------------------


def write_scores_tsv(
    out: TextIO, records: Iterable[ScoreRecord], labels: Sequence[int] | None = None
) -> None:
    header = list(TSV_COLUMNS) + (["label"] if labels is not None else [])
    out.write("\t".join(header) + "\n")
    for i, rec in enumerate(records):
        row = [rec.id, repr(rec.score), repr(rec.outlierness)]
        if labels is not None:
            row.append(str(labels[i]))
        out.write("\t".join(row) + "\n")


def read_scores_tsv(path: Path) -> list[ScoreRecord]:
    records: list[ScoreRecord] = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        header = next(reader, None)
        if header is None or tuple(header[:3]) != TSV_COLUMNS:
            raise ParseError("missing score header", path=path, line_no=1)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, got {len(row)}",
                    path=path,
                    line_no=line_no,
                )
            try:
                score = float(row[1])
            except ValueError:
                raise ParseError(
                    f"bad score {row[1]!r}", path=path, line_no=line_no
                ) from None
            records.append(ScoreRecord(row[0], score))
    return records

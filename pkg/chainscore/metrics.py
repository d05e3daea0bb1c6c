"""Ranking and classification quality of outlier scores.

All ranking functions take *outlierness* (higher = more outlying) and
ground-truth labels where any value > 0 marks an outlier.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
from pydantic import BaseModel
from scipy.stats import rankdata

from chainscore.errors import DataError


class EvalReport(BaseModel):
    n: int
    outliers: int
    auroc: float
    auprc: float
    f1: float | None = None
    contamination: float | None = None


def _prepare(
    outlierness: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(outlierness, dtype=np.float64)
    truth = np.asarray(labels) > 0
    if scores.shape != truth.shape or scores.ndim != 1:
        raise DataError(f"{scores.size} scores but {truth.size} labels")
    if truth.all() or not truth.any():
        raise DataError("ranking metrics need at least one outlier and one inlier")
    return scores, truth


def auroc(
    outlierness: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray
) -> float:
    """Mann-Whitney statistic: P(outlier ranked above inlier), ties count 1/2."""
    scores, truth = _prepare(outlierness, labels)
    ranks = rankdata(scores)
    pos = int(truth.sum())
    neg = truth.size - pos
    u = ranks[truth].sum() - pos * (pos + 1) / 2.0
    return float(u / (pos * neg))


def precision_recall_curve(
    outlierness: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Precision and recall at every distinct threshold, highest threshold first."""
    scores, truth = _prepare(outlierness, labels)
    order = np.argsort(-scores, kind="stable")
    scores, truth = scores[order], truth[order]
    ends = np.r_[np.flatnonzero(np.diff(scores)), scores.size - 1]
    tps = np.cumsum(truth)[ends]
    fps = (ends + 1) - tps
    precision = tps / (tps + fps)
    recall = tps / truth.sum()
    return precision, recall, scores[ends]


def auprc(
    outlierness: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray
) -> float:
    """Step-interpolated area under the precision-recall curve."""
    precision, recall, _ = precision_recall_curve(outlierness, labels)
    steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(steps * precision))


def f1(
    predicted: Sequence[int] | np.ndarray, labels: Sequence[int] | np.ndarray
) -> float:
    pred = np.asarray(predicted) > 0
    truth = np.asarray(labels) > 0
    if pred.shape != truth.shape:
        raise DataError(f"{pred.size} predictions but {truth.size} labels")
    tp = int((pred & truth).sum())
    if tp == 0:
        return 0.0
    precision = tp / int(pred.sum())
    recall = tp / int(truth.sum())
    return 2 * precision * recall / (precision + recall)

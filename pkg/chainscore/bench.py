"""Synthetic outlier benchmarks.

Two constructions:

* grid injection: count the inliers per cell of a fine 2-d grid, mark every
  empty cell whose 8 neighbours are empty too, and place outliers uniformly
  inside randomly chosen marked cells;
* variance inflation: fit a diagonal Gaussian mixture to inliers, then draw
  outliers from a copy of it whose variance is multiplied on a random
  subset of features.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel
from scipy.ndimage import binary_dilation
from scipy.special import logsumexp

from chainscore.core import SparsePoint, write_dense_csv, write_sparse_kv
from chainscore.errors import DataError
from chainscore.presets import BenchPreset


logger = logging.getLogger(__name__)

LABEL_COLUMN = "label"


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


class GeneratorSidecar(BaseModel):
    kind: str
    seed: int
    n: int
    outliers: int
    params: dict[str, Any] = {}


@dataclass(frozen=True, eq=False)
class BenchDataset:
    matrix: np.ndarray
    labels: np.ndarray
    kind: str
    seed: int
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.matrix.ndim != 2 or self.labels.shape != (self.matrix.shape[0],):
            raise ValueError("matrix rows and labels must align")

    @property
    def n(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def d(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def outliers(self) -> int:
        return int((self.labels > 0).sum())

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f"f{j}" for j in range(self.d))

    def to_points(self) -> list[SparsePoint]:
        names = self.feature_names
        points = []
        rows = zip(self.matrix.tolist(), self.labels.tolist(), strict=True)
        for i, (row, label) in enumerate(rows):
            real = {name: v for name, v in zip(names, row, strict=True) if v != 0.0}
            points.append(SparsePoint(str(i), real_features=real, label=int(label)))
        return points

    def sidecar(self) -> GeneratorSidecar:
        return GeneratorSidecar(
            kind=self.kind,
            seed=self.seed,
            n=self.n,
            outliers=self.outliers,
            params=self.params,
        )

    def write(self, path: Path, fmt: str = "csv") -> Path:
        """Write the data file and its ``.json`` sidecar; returns the sidecar path."""
        if fmt == "csv":
            labels = self.labels.tolist()
            rows = (
                [*row, label]
                for row, label in zip(self.matrix.tolist(), labels, strict=True)
            )
            write_dense_csv(path, [*self.feature_names, LABEL_COLUMN], rows)
        elif fmt == "kv":
            write_sparse_kv(path, self.to_points())
        else:
            raise ValueError(f"unknown format {fmt!r}")
        sidecar = path.with_name(path.name + ".json")
        sidecar.write_text(self.sidecar().model_dump_json(indent=2), encoding="utf-8")
        logger.info("wrote %d rows (%d outliers) to %s", self.n, self.outliers, path)
        return sidecar


# ---------------------------------------------------------------------------
# Grid injection
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridIndex:
    cell_size: float
    origin: tuple[float, float]
    shape: tuple[int, int]
    occupancy: np.ndarray

    @classmethod
    def from_points(
        cls,
        points: np.ndarray,
        cell_size: float = 0.01,
        bounds: tuple[float, float, float, float] | None = None,
    ) -> GridIndex:
        """Bin 2-d points; default bounds are the bounding box grown by one cell."""
        if points.ndim != 2 or points.shape[1] != 2:
            raise DataError("grid injection needs 2-d points")
        if cell_size <= 0:
            raise ValueError("cell size must be positive")
        if bounds is None:
            if not len(points):
                raise DataError("cannot derive grid bounds from no points")
            lo = np.floor(points.min(axis=0) / cell_size) - 1
            hi = np.floor(points.max(axis=0) / cell_size) + 2
            origin = (float(lo[0] * cell_size), float(lo[1] * cell_size))
            shape = (int(hi[0] - lo[0]), int(hi[1] - lo[1]))
        else:
            x0, y0, x1, y1 = bounds
            if x1 <= x0 or y1 <= y0:
                raise ValueError(
                    "bounds must be (xmin, ymin, xmax, ymax) with positive area"
                )
            origin = (x0, y0)
            shape = (
                max(1, math.ceil((x1 - x0) / cell_size - 1e-9)),
                max(1, math.ceil((y1 - y0) / cell_size - 1e-9)),
            )
        occupancy = np.zeros(shape, dtype=bool)
        index = cls(cell_size, origin, shape, occupancy)
        cells = index.cells_of(points)
        inside = index.contains(cells)
        occupancy[cells[inside, 0], cells[inside, 1]] = True
        occupancy.flags.writeable = False
        return index

    def cells_of(self, points: np.ndarray) -> np.ndarray:
        scaled = (points - np.asarray(self.origin)) / self.cell_size
        return np.floor(scaled).astype(np.int64)

    def contains(self, cells: np.ndarray) -> np.ndarray:
        return (
            (cells[:, 0] >= 0)
            & (cells[:, 0] < self.shape[0])
            & (cells[:, 1] >= 0)
            & (cells[:, 1] < self.shape[1])
        )

    def markable(self) -> np.ndarray:
        """Empty cells whose 8 neighbours are empty; outside the grid is empty."""
        block = np.ones((3, 3), dtype=bool)
        near = binary_dilation(self.occupancy, structure=block, border_value=0)
        return ~near


def inject_grid_outliers(
    points: np.ndarray,
    count: int,
    cell_size: float = 0.01,
    rng_seed: int = 0,
    bounds: tuple[float, float, float, float] | None = None,
) -> BenchDataset:
    """Inliers unchanged and labeled 0, followed by ``count`` injected outliers."""
    if count < 0:
        raise ValueError("count must be >= 0")
    grid = GridIndex.from_points(points, cell_size, bounds)
    marked = np.argwhere(grid.markable())
    if not len(marked):
        raise DataError(
            "no empty cell has 8 empty neighbours; use a finer grid or wider bounds"
        )
    rng = np.random.default_rng(rng_seed)
    chosen = marked[rng.integers(0, len(marked), size=count)]
    origin = np.asarray(grid.origin)
    injected = np.empty((count, 2), dtype=np.float64)
    pending = np.arange(count)
    while pending.size:
        # Rounding can push a draw onto a neighbouring cell edge; redraw those.
        offsets = rng.random((pending.size, 2))
        injected[pending] = origin + (chosen[pending] + offsets) * cell_size
        landed = grid.cells_of(injected[pending])
        pending = pending[(landed != chosen[pending]).any(axis=1)]
    matrix = np.vstack([points.astype(np.float64), injected])
    labels = np.r_[
        np.zeros(len(points), dtype=np.int64), np.ones(count, dtype=np.int64)
    ]
    logger.info("injected %d outliers into %d marked cells", count, len(marked))
    return BenchDataset(
        matrix,
        labels,
        kind="grid",
        seed=rng_seed,
        params={
            "cell_size": cell_size,
            "origin": list(grid.origin),
            "shape": list(grid.shape),
            "marked_cells": int(len(marked)),
        },
    )


def sample_clustered_2d(
    n: int, clusters: int = 8, spread: float = 0.02, rng_seed: int = 0
) -> np.ndarray:
    """Gaussian blobs inside the unit square, leaving wide empty regions."""
    if n < 0 or clusters < 1:
        raise ValueError("need n >= 0 and clusters >= 1")
    rng = np.random.default_rng(rng_seed)
    centers = rng.uniform(0.15, 0.85, size=(clusters, 2))
    weights = rng.dirichlet(np.full(clusters, 2.0))
    member = rng.choice(clusters, size=n, p=weights)
    scale = spread * rng.uniform(0.5, 1.5, size=(clusters, 2))
    points = centers[member] + rng.standard_normal((n, 2)) * scale[member]
    return np.clip(points, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Gaussian mixture
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GmmSpec:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self) -> None:
        k = self.weights.size
        shaped = self.means.ndim == 2 and self.means.shape[0] == k
        if not shaped or self.variances.shape != self.means.shape:
            raise ValueError("weights, means and variances disagree on shape")
        total = float(self.weights.sum())
        if (self.weights <= 0).any() or not math.isclose(total, 1.0, rel_tol=1e-9):
            raise ValueError("weights must be positive and sum to 1")
        if (self.variances <= 0).any():
            raise ValueError("variances must be positive")

    @property
    def components(self) -> int:
        return int(self.weights.size)

    @property
    def d(self) -> int:
        return int(self.means.shape[1])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        member = rng.choice(self.components, size=n, p=self.weights)
        noise = rng.standard_normal((n, self.d))
        return self.means[member] + noise * np.sqrt(self.variances[member])

    def inflated(self, features: np.ndarray, factor: float) -> GmmSpec:
        variances = self.variances.copy()
        variances[:, features] *= factor
        return GmmSpec(self.weights, self.means, variances)

    def log_resp(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-component log joint densities and per-point log likelihoods."""
        precision = 1.0 / self.variances
        quad = (
            (x**2) @ precision.T
            - 2.0 * x @ (self.means * precision).T
            + (self.means**2 * precision).sum(axis=1)
        )
        log_det = np.log(2.0 * np.pi * self.variances).sum(axis=1)
        joint = np.log(self.weights) - 0.5 * (quad + log_det)
        return joint, logsumexp(joint, axis=1)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    dist = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = dist.sum()
        idx = rng.choice(len(x), p=dist / total) if total > 0 else rng.integers(len(x))
        centers.append(x[idx])
        dist = np.minimum(dist, ((x - x[idx]) ** 2).sum(axis=1))
    return np.stack(centers)


def _m_step(x: np.ndarray, resp: np.ndarray, floor: float) -> GmmSpec:
    nk = resp.sum(axis=0) + 10 * np.finfo(np.float64).eps
    means = (resp.T @ x) / nk[:, None]
    variances = (resp.T @ (x**2)) / nk[:, None] - means**2
    return GmmSpec(nk / nk.sum(), means, np.maximum(variances, floor))


def fit_diag_gmm(
    inliers: np.ndarray, k: int, iters: int = 100, rng_seed: int = 0, tol: float = 1e-6
) -> GmmSpec:
    """EM for a diagonal-covariance mixture with k-means++ initialization."""
    x = np.asarray(inliers, dtype=np.float64)
    if x.ndim != 2 or not len(x):
        raise DataError("need a non-empty 2-d inlier matrix")
    if k < 1 or k > len(x):
        raise DataError(f"cannot fit {k} components to {len(x)} inliers")
    floor = 1e-6 * max(float(x.var(axis=0).mean()), 1e-12)
    rng = np.random.default_rng(rng_seed)
    centers = _kmeans_pp(x, k, rng)
    nearest = (
        (x**2).sum(axis=1)[:, None] - 2.0 * x @ centers.T + (centers**2).sum(axis=1)
    ).argmin(axis=1)
    resp = np.eye(k)[nearest]
    spec = _m_step(x, resp, floor)
    previous = -np.inf
    for it in range(iters):
        joint, log_lik = spec.log_resp(x)
        resp = np.exp(joint - log_lik[:, None])
        spec = _m_step(x, resp, floor)
        mean_ll = float(log_lik.mean())
        if abs(mean_ll - previous) < tol:
            logger.debug("EM converged after %d iterations", it + 1)
            break
        previous = mean_ll
    return spec


def synthetic_base_inliers(
    n: int = 3500, d: int = 500, k: int = 5, rng_seed: int = 0
) -> np.ndarray:
    """A clustered high-dimensional inlier set to fit the benchmark mixture to."""
    rng = np.random.default_rng(rng_seed)
    spec = GmmSpec(
        rng.dirichlet(np.full(k, 5.0)),
        rng.normal(0.0, 0.75, size=(k, d)),
        rng.uniform(0.5, 1.5, size=(k, d)),
    )
    return spec.sample(n, rng)


def sample_gmm_benchmark(
    spec: GmmSpec,
    n: int,
    outlier_frac: float = 0.1,
    feature_frac: float = 0.1,
    variance_factor: float = 5.0,
    rng_seed: int = 0,
) -> BenchDataset:
    """Inliers from ``spec``, outliers from ``spec`` with inflated variances.

    One feature subset is drawn per dataset. Rows are shuffled.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0.0 <= outlier_frac < 1.0 or not 0.0 < feature_frac <= 1.0:
        raise ValueError("outlier_frac must be in [0, 1) and feature_frac in (0, 1]")
    rng = np.random.default_rng(rng_seed)
    n_out = round_half_up(outlier_frac * n)
    n_in = n - n_out
    size = math.ceil(feature_frac * spec.d)
    inflated = np.sort(rng.choice(spec.d, size=size, replace=False))
    inliers = spec.sample(n_in, rng)
    outliers = spec.inflated(inflated, variance_factor).sample(n_out, rng)
    matrix = np.vstack([inliers, outliers])
    labels = np.r_[np.zeros(n_in, dtype=np.int64), np.ones(n_out, dtype=np.int64)]
    order = rng.permutation(n)
    return BenchDataset(
        matrix[order],
        labels[order],
        kind="gmm",
        seed=rng_seed,
        params={
            "components": spec.components,
            "d": spec.d,
            "outlier_frac": outlier_frac,
            "feature_frac": feature_frac,
            "variance_factor": variance_factor,
            "inflated_features": inflated.tolist(),
        },
    )


def generate_preset(preset: BenchPreset, rng_seed: int = 0) -> BenchDataset:
    """Build the labeled dataset a preset describes."""
    if preset.kind == "grid":
        inliers = sample_clustered_2d(preset.n, rng_seed=rng_seed)
        return inject_grid_outliers(inliers, int(preset.outliers), rng_seed=rng_seed)
    base = synthetic_base_inliers(d=preset.d, rng_seed=rng_seed)
    spec = fit_diag_gmm(base, k=5, rng_seed=rng_seed)
    return sample_gmm_benchmark(
        spec, preset.n, outlier_frac=preset.outliers, rng_seed=rng_seed
    )


def verify_grid_injection(dataset: BenchDataset) -> None:
    """Raise unless every injected point sits in an inlier-free 3x3 block."""
    params = dataset.params
    inliers = dataset.matrix[dataset.labels == 0]
    injected = dataset.matrix[dataset.labels > 0]
    x0, y0 = params["origin"]
    nx, ny = params["shape"]
    cell = params["cell_size"]
    box = (x0, y0, x0 + nx * cell, y0 + ny * cell)
    grid = GridIndex.from_points(inliers, cell, box)
    cells = grid.cells_of(injected)
    inside = grid.contains(cells)
    if not inside.all():
        raise DataError(f"{int((~inside).sum())} injected points fall outside the grid")
    ok = grid.markable()[cells[:, 0], cells[:, 1]]
    if not ok.all():
        raise DataError(
            f"{int((~ok).sum())} injected points have an occupied neighbour cell"
        )

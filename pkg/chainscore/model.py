"""The fitted ensemble of half-space chains and its binary model file.

Model file layout (all little-endian)::

    magic "CHSM" | u16 version | u32 K, L, M, r, w | u64 run_seed | f64 sample_rate
    K x u64 projector seeds | K x f64 bin widths
    M x ( u64 chain seed | L x u32 features | L x f64 shifts | L x CMS )

where each CMS is ``u32 r | u32 w | r x u64 row seeds | r*w x i64 counts``.
"""

from __future__ import annotations

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from chainscore.chain import (
    HalfSpaceChain,
    chain_score_matrix,
    clamp_scaled,
    compute_bin_widths,
    fit_chain,
    init_chain,
)
from chainscore.cms import CountMinSketch
from chainscore.config import RunConfig
from chainscore.engine import Engine, PartitionedDataset
from chainscore.errors import DataError, DimensionMismatchError
from chainscore.hashing import derive_seed, h64_key_columns
from chainscore.projector import HashProjector, Sketch


logger = logging.getLogger(__name__)

MAGIC = b"CHSM"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIIIQd")


def chain_seed(run_seed: int, index: int) -> int:
    return derive_seed(run_seed, "chain", index)


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    projector_seeds: tuple[int, ...]
    delta: np.ndarray
    chains: tuple[HalfSpaceChain, ...]
    run_seed: int = 0
    sample_rate: float = 1.0

    def __post_init__(self) -> None:
        if not self.chains:
            raise ValueError("an ensemble needs at least one chain")
        head = self.chains[0]
        for c in self.chains:
            if not np.array_equal(c.delta, self.delta):
                raise ValueError("all chains must share the ensemble's bin widths")
            if (c.levels, c.rows, c.width) != (head.levels, head.rows, head.width):
                raise ValueError("all chains must share L, r and w")
        if len(self.projector_seeds) != self.k:
            raise ValueError("projector seeds and bin widths differ in length")

    @property
    def k(self) -> int:
        return int(self.delta.size)

    @property
    def size(self) -> int:
        return len(self.chains)

    @property
    def levels(self) -> int:
        return self.chains[0].levels

    @property
    def rows(self) -> int:
        return self.chains[0].rows

    @property
    def width(self) -> int:
        return self.chains[0].width

    @cached_property
    def projector(self) -> HashProjector:
        return HashProjector(self.projector_seeds)

    # -- scoring ------------------------------------------------------------

    def check_dimension(self, k: int) -> None:
        if k != self.k:
            raise DimensionMismatchError(
                f"sketches have {k} components, model has K={self.k}"
            )

    def score_matrix(self, matrix: np.ndarray, threads: int = 1) -> np.ndarray:
        """Mean over chains of the per-chain minimum extrapolated count."""
        self.check_dimension(matrix.shape[1])
        if threads > 1 and self.size > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                per_chain = list(
                    pool.map(lambda c: chain_score_matrix(matrix, c), self.chains)
                )
        else:
            per_chain = [chain_score_matrix(matrix, c) for c in self.chains]
        total = np.zeros(matrix.shape[0], dtype=np.float64)
        for scores in per_chain:
            total += scores
        return total / self.size

    @cached_property
    def _stacked(self) -> dict[str, np.ndarray]:
        return {
            "features": np.stack([c.features for c in self.chains]),
            "shifts": np.stack([c.shifts for c in self.chains]),
            "first": np.stack([c.first_occurrence for c in self.chains]),
            "states": np.stack(
                [
                    np.stack([s.row_states(self.k) for s in c.sketches])
                    for c in self.chains
                ]
            ),
            "counts": np.stack(
                [np.stack([s.counts for s in c.sketches]) for c in self.chains]
            ),
            "active": np.unique(np.concatenate([c.features for c in self.chains])),
        }

    def score_one(self, values: np.ndarray) -> float:
        """Score a single sketch with every chain at once."""
        values = np.asarray(values, dtype=np.float64)
        self.check_dimension(values.size)
        st = self._stacked
        m, levels = st["features"].shape
        chain_idx = np.arange(m)
        z = np.zeros((m, self.k), dtype=np.float64)
        keys = np.zeros((m, levels, 1, self.k), dtype=np.int64)
        for level in range(levels):
            f = st["features"][:, level]
            fresh = (values[f] + st["shifts"][:, level]) / self.delta[f]
            doubled = 2.0 * z[chain_idx, f]
            stepped = np.where(st["first"][:, level], fresh, doubled)
            z[chain_idx, f] = clamp_scaled(stepped)
            keys[:, level, 0, :] = np.floor(z)
        digests = h64_key_columns(st["states"], keys, st["active"].tolist(), self.k)
        cols = (digests[..., 0] % np.uint64(self.width)).astype(np.int64)
        counts = np.take_along_axis(st["counts"], cols[..., None], axis=3)[..., 0]
        scale = 2.0 ** np.arange(1, levels + 1)
        per_level = counts.min(axis=2).astype(np.float64) * scale
        return float(per_level.min(axis=1).sum() / self.size)

    # -- codec --------------------------------------------------------------

    def to_bytes(self) -> bytes:
        parts = [
            _HEADER.pack(
                MAGIC,
                VERSION,
                self.k,
                self.levels,
                self.size,
                self.rows,
                self.width,
                self.run_seed,
                self.sample_rate,
            ),
            np.asarray(self.projector_seeds, dtype="<u8").tobytes(),
            self.delta.astype("<f8").tobytes(),
        ]
        for c in self.chains:
            parts.append(struct.pack("<Q", c.seed))
            parts.append(c.features.astype("<u4").tobytes())
            parts.append(c.shifts.astype("<f8").tobytes())
            parts.extend(s.to_bytes() for s in c.sketches)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> EnsembleModel:
        try:
            return cls._decode(data)
        except (struct.error, ValueError) as exc:
            raise DataError(f"corrupt model file: {exc}") from exc

    @classmethod
    def _decode(cls, data: bytes) -> EnsembleModel:
        magic, version, k, levels, m, _r, _w, run_seed, sample_rate = (
            _HEADER.unpack_from(data)
        )
        if magic != MAGIC:
            raise DataError("not a chainscore model file")
        if version != VERSION:
            raise DataError(f"unsupported model version {version}")
        offset = _HEADER.size
        seeds = np.frombuffer(data, dtype="<u8", count=k, offset=offset)
        offset += 8 * k
        delta = np.frombuffer(data, dtype="<f8", count=k, offset=offset).astype(
            np.float64
        )
        offset += 8 * k
        chains = []
        for _ in range(m):
            (seed,) = struct.unpack_from("<Q", data, offset)
            offset += 8
            features = np.frombuffer(data, dtype="<u4", count=levels, offset=offset)
            offset += 4 * levels
            shifts = np.frombuffer(data, dtype="<f8", count=levels, offset=offset)
            offset += 8 * levels
            sketches = []
            for _ in range(levels):
                sketch, offset = CountMinSketch.from_bytes(data, offset)
                sketches.append(sketch)
            chains.append(
                HalfSpaceChain(seed, delta, features, shifts, tuple(sketches))
            )
        if offset != len(data):
            raise DataError(f"{len(data) - offset} trailing bytes after model")
        return cls(
            tuple(int(s) for s in seeds), delta, tuple(chains), run_seed, sample_rate
        )

    def save(self, path: Path) -> None:
        path.write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: Path) -> EnsembleModel:
        return cls.from_bytes(path.read_bytes())


def fit_ensemble(
    engine: Engine, data: PartitionedDataset[Sketch], config: RunConfig
) -> EnsembleModel:
    """Fit ``config.chains`` chains, ``config.threads`` at a time.

    Chain ``m`` draws everything from a seed derived from (run_seed, m), so
    the model does not depend on which thread fits which chain.
    """
    delta = compute_bin_widths(engine, data, config.k)

    def fit_one(index: int) -> HalfSpaceChain:
        chain = init_chain(
            chain_seed(config.run_seed, index),
            delta,
            config.levels,
            config.rows,
            config.width,
        )
        fitted = fit_chain(engine, data, chain, config.sample_rate, chain.sample_seed())
        logger.debug("fitted chain %d", index)
        return fitted

    with ThreadPoolExecutor(
        max_workers=config.threads, thread_name_prefix="chainscore-chain"
    ) as pool:
        chains = tuple(pool.map(fit_one, range(config.chains)))
    logger.info("fitted %d chains of depth %d", len(chains), config.levels)
    return EnsembleModel(
        HashProjector.from_dimension(config.k).seeds,
        delta,
        chains,
        run_seed=config.run_seed,
        sample_rate=config.sample_rate,
    )

"""In-process shared-nothing execution engine.

Datasets are immutable tuples of partitions. Every stage runs one task per
partition on a bounded worker pool; tasks see only their own partition and
broadcast values. ``reduce_by_key`` pre-combines inside each partition,
serializes the combined buckets (the "network" exchange, with byte
accounting) and merges them on the reduce side.
"""

from __future__ import annotations

import itertools
import logging
import pickle
import threading
import time
from collections.abc import Callable, Hashable, Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Generic, Protocol, Self, TypeVar, overload, runtime_checkable

import numpy as np
from pydantic import BaseModel, PrivateAttr

from chainscore.errors import StageError
from chainscore.hashing import unit_interval


logger = logging.getLogger(__name__)

T = TypeVar("T")
U = TypeVar("U")
K = TypeVar("K", bound=Hashable)
V = TypeVar("V")


@runtime_checkable
class Columnar(Protocol):
    """A partition that exposes element ids and row selection without
    materializing elements one by one."""

    @property
    def ids(self) -> Sequence[str]: ...

    def select(self, mask: np.ndarray) -> Self: ...

    def __len__(self) -> int: ...


@dataclass(frozen=True, eq=False)
class PairBlock(Sequence[tuple[int, Any]]):
    """A columnar batch of ``(key, value)`` pairs with non-negative int keys.

    ``source_records`` is the number of logical pairs the block stands for
    when its producer already folded repeats locally.
    """

    keys: np.ndarray
    values: np.ndarray
    source_records: int | None = None

    def __post_init__(self) -> None:
        if self.keys.shape != self.values.shape[:1]:
            raise ValueError("keys and values differ in length")

    def __len__(self) -> int:
        return int(self.keys.size)

    @property
    def records(self) -> int:
        return len(self) if self.source_records is None else self.source_records

    @overload
    def __getitem__(self, index: int) -> tuple[int, Any]: ...

    @overload
    def __getitem__(self, index: slice) -> Sequence[tuple[int, Any]]: ...

    def __getitem__(self, index: int | slice) -> Any:
        if isinstance(index, slice):
            return PairBlock(self.keys[index], self.values[index])
        return int(self.keys[index]), self.values[index].item()

    def __iter__(self) -> Iterator[tuple[int, Any]]:
        return zip(self.keys.tolist(), self.values.tolist(), strict=True)

    @classmethod
    def empty(cls, dtype: Any = np.int64) -> PairBlock:
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=dtype))

    def combined(self, ufunc: np.ufunc) -> PairBlock:
        if self.keys.size == 0:
            return self
        order = np.argsort(self.keys, kind="stable")
        keys = self.keys[order]
        values = self.values[order]
        starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
        return PairBlock(keys[starts], ufunc.reduceat(values, starts))


@dataclass(frozen=True)
class PartitionedDataset(Generic[T]):
    partitions: tuple[Sequence[T], ...]

    def __post_init__(self) -> None:
        if not self.partitions:
            raise ValueError("a dataset has at least one partition")

    @property
    def partition_count(self) -> int:
        return len(self.partitions)

    def count(self) -> int:
        return sum(len(p) for p in self.partitions)

    def collect(self) -> list[T]:
        return list(itertools.chain.from_iterable(self.partitions))


@dataclass(frozen=True)
class Broadcast(Generic[T]):
    value: T


class StageMetrics(BaseModel):
    calls: int = 0
    wall_seconds: float = 0.0
    records_in: int = 0
    records_out: int = 0
    pre_combine_records: int = 0
    shuffled_records: int = 0
    shuffled_bytes: int = 0


class EngineMetrics(BaseModel):
    stages: dict[str, StageMetrics] = {}

    _lock: threading.Lock = PrivateAttr(default_factory=threading.Lock)

    def record(self, stage: str, **values: float) -> None:
        with self._lock:
            metrics = self.stages.setdefault(stage, StageMetrics())
            metrics.calls += 1
            for key, value in values.items():
                setattr(metrics, key, getattr(metrics, key) + value)

    def total(self, field: str, prefix: str = "") -> float:
        with self._lock:
            return sum(
                getattr(m, field)
                for name, m in self.stages.items()
                if name.startswith(prefix)
            )

    def write_json(self, path: Path) -> None:
        with self._lock:
            path.write_text(self.model_dump_json(indent=2), encoding="utf-8")


def _split(items: Sequence[T], parts: int) -> tuple[Sequence[T], ...]:
    n = len(items)
    bounds = [round(i * n / parts) for i in range(parts + 1)]
    return tuple(items[bounds[i] : bounds[i + 1]] for i in range(parts))


def _bucket_of(key: Hashable, buckets: int) -> int:
    if isinstance(key, int):
        return key % buckets
    return hash(key) % buckets


class Engine:
    """Bounded worker pool plus the dataset primitives the pipelines use."""

    def __init__(self, workers: int = 4, partitions: int | None = None) -> None:
        if workers < 1:
            raise ValueError("workers must be >= 1")
        if partitions is not None and partitions < 1:
            raise ValueError("partitions must be >= 1")
        self.workers = workers
        self.default_partitions = partitions or workers * 4
        self.metrics = EngineMetrics()
        self._pool = ThreadPoolExecutor(
            max_workers=workers, thread_name_prefix="chainscore-worker"
        )

    def __enter__(self) -> Engine:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def close(self) -> None:
        self._pool.shutdown(wait=True)

    # -- construction -------------------------------------------------------

    def parallelize(
        self, items: Sequence[T], partitions: int | None = None
    ) -> PartitionedDataset[T]:
        """Split ``items`` into contiguous partitions, preserving order."""
        count = partitions or self.default_partitions
        return PartitionedDataset(_split(list(items), count))

    def repartition(
        self, ds: PartitionedDataset[T], partitions: int
    ) -> PartitionedDataset[T]:
        return self.parallelize(ds.collect(), partitions)

    def broadcast(self, value: T) -> Broadcast[T]:
        return Broadcast(value)

    # -- stage runner -------------------------------------------------------

    def _run(
        self,
        stage: str,
        ds: PartitionedDataset[Any],
        task: Callable[[int, Sequence[Any]], Sequence[Any]],
    ) -> tuple[Sequence[Any], ...]:
        start = time.perf_counter()
        futures = [
            self._pool.submit(task, idx, part) for idx, part in enumerate(ds.partitions)
        ]
        try:
            results = tuple(f.result() for f in futures)
        except BaseException:
            for f in futures:
                f.cancel()
            raise
        elapsed = time.perf_counter() - start
        self.metrics.record(
            stage,
            wall_seconds=elapsed,
            records_in=ds.count(),
            records_out=sum(len(r) for r in results),
        )
        logger.debug("stage %s finished in %.3fs", stage, elapsed)
        return results

    # -- narrow transformations ---------------------------------------------

    def map(
        self, ds: PartitionedDataset[T], f: Callable[[T], U], stage: str = "map"
    ) -> PartitionedDataset[U]:
        """Per-record map; the pipelines use ``map_partitions`` on columnar batches."""
        def task(pidx: int, part: Sequence[T]) -> list[U]:
            out: list[U] = []
            for idx, item in enumerate(part):
                try:
                    out.append(f(item))
                except Exception as exc:
                    raise StageError(stage, pidx, idx) from exc
            return out

        return PartitionedDataset(self._run(stage, ds, task))

    def flat_map(
        self,
        ds: PartitionedDataset[T],
        f: Callable[[T], Sequence[U]],
        stage: str = "flat_map",
    ) -> PartitionedDataset[U]:
        """Per-record reference path, not used by the fit or score pipelines."""
        def task(pidx: int, part: Sequence[T]) -> list[U]:
            out: list[U] = []
            for idx, item in enumerate(part):
                try:
                    out.extend(f(item))
                except Exception as exc:
                    raise StageError(stage, pidx, idx) from exc
            return out

        return PartitionedDataset(self._run(stage, ds, task))

    def filter(
        self, ds: PartitionedDataset[T], f: Callable[[T], bool], stage: str = "filter"
    ) -> PartitionedDataset[T]:
        def task(pidx: int, part: Sequence[T]) -> list[T]:
            out: list[T] = []
            for idx, item in enumerate(part):
                try:
                    keep = f(item)
                except Exception as exc:
                    raise StageError(stage, pidx, idx) from exc
                if keep:
                    out.append(item)
            return out

        return PartitionedDataset(self._run(stage, ds, task))

    def map_partitions(
        self,
        ds: PartitionedDataset[T],
        f: Callable[[Sequence[T]], Sequence[U]],
        stage: str = "map_partitions",
    ) -> PartitionedDataset[U]:
        """Apply ``f`` to whole partitions.

        ``f`` must act elementwise in effect: the union of its outputs may not
        depend on where partition boundaries fall.
        """

        def task(pidx: int, part: Sequence[T]) -> Sequence[U]:
            try:
                return f(part)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(stage, pidx, None) from exc

        return PartitionedDataset(self._run(stage, ds, task))

    def sample(
        self,
        ds: PartitionedDataset[T],
        rate: float,
        seed: int,
        key: Callable[[T], str] | None = None,
        stage: str = "sample",
    ) -> PartitionedDataset[T]:
        """Bernoulli(rate) sample keyed by (seed, element id).

        The decision for an element depends only on its id, never on the
        partition it sits in.
        """
        if not 0.0 < rate <= 1.0:
            raise ValueError(f"sample rate must be in (0, 1], got {rate}")
        if rate == 1.0:
            return ds
        key_fn = key or (lambda item: item.id)  # type: ignore[attr-defined]

        def task(pidx: int, part: Sequence[T]) -> Sequence[T]:
            if isinstance(part, Columnar):
                mask = unit_interval(seed, part.ids) < rate
                return part.select(mask)  # type: ignore[return-value]
            ids = [key_fn(item) for item in part]
            mask = unit_interval(seed, ids) < rate
            return [item for item, keep in zip(part, mask, strict=True) if keep]

        return PartitionedDataset(self._run(stage, ds, task))

    # -- wide transformations -----------------------------------------------

    def reduce_by_key(
        self,
        ds: PartitionedDataset[tuple[K, V]],
        combine: Callable[[V, V], V],
        stage: str = "reduce_by_key",
    ) -> PartitionedDataset[tuple[K, V]]:
        """Fold values per key with an associative, commutative ``combine``.

        Partitions that are ``PairBlock``s pre-combine with sort + reduceat
        when ``combine`` is a numpy ufunc; other partitions fold through a
        dict. Output is hash-partitioned over the input partition count.
        """
        buckets = ds.partition_count
        ufunc = combine if isinstance(combine, np.ufunc) else None
        start = time.perf_counter()

        def map_side(
            pidx: int, part: Sequence[tuple[K, V]]
        ) -> tuple[list[bytes], int]:
            if isinstance(part, PairBlock) and ufunc is not None:
                block = part.combined(ufunc)
                slots = block.keys % buckets
                payloads: list[Any] = [
                    PairBlock(block.keys[slots == b], block.values[slots == b])
                    for b in range(buckets)
                ]
            else:
                local: dict[K, V] = {}
                for idx, (k, v) in enumerate(part):
                    try:
                        local[k] = combine(local[k], v) if k in local else v
                    except Exception as exc:
                        raise StageError(stage, pidx, idx) from exc
                payloads = [dict() for _ in range(buckets)]
                for k, v in local.items():
                    payloads[_bucket_of(k, buckets)][k] = v
            blobs = [
                pickle.dumps(p, protocol=pickle.HIGHEST_PROTOCOL) for p in payloads
            ]
            return blobs, sum(len(p) for p in payloads)

        map_futures = [
            self._pool.submit(map_side, idx, part)
            for idx, part in enumerate(ds.partitions)
        ]
        mapped = [f.result() for f in map_futures]
        shuffled = [blobs for blobs, _ in mapped]
        shuffled_bytes = sum(len(blob) for row in shuffled for blob in row)

        def reduce_side(bucket: int) -> Sequence[tuple[K, V]]:
            incoming = [pickle.loads(row[bucket]) for row in shuffled]
            blocks = [p for p in incoming if isinstance(p, PairBlock)]
            dicts = [p for p in incoming if isinstance(p, dict)]
            merged: dict[K, V] = {}
            if blocks:
                assert ufunc is not None
                joined = PairBlock(
                    np.concatenate([b.keys for b in blocks]),
                    np.concatenate([b.values for b in blocks]),
                ).combined(ufunc)
                if not dicts:
                    return joined
                merged.update(joined)  # type: ignore[arg-type]
            for d in dicts:
                for k, v in d.items():
                    merged[k] = combine(merged[k], v) if k in merged else v
            return list(merged.items())

        reduce_futures = [self._pool.submit(reduce_side, b) for b in range(buckets)]
        results = tuple(f.result() for f in reduce_futures)

        self.metrics.record(
            stage,
            wall_seconds=time.perf_counter() - start,
            records_in=ds.count(),
            pre_combine_records=sum(
                p.records if isinstance(p, PairBlock) else len(p) for p in ds.partitions
            ),
            shuffled_records=sum(count for _, count in mapped),
            shuffled_bytes=shuffled_bytes,
            records_out=sum(len(r) for r in results),
        )
        return PartitionedDataset(results)

    def collect_as_map(self, ds: PartitionedDataset[tuple[K, V]]) -> dict[K, V]:
        """Gather pairs at the driver; a repeated key means a reduce is missing."""
        out: dict[K, V] = {}
        for part in ds.partitions:
            for k, v in part:
                if k in out:
                    raise ValueError(f"duplicate key {k!r} in collect_as_map")
                out[k] = v
        return out

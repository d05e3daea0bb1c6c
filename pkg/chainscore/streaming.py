"""Constant-time scoring of update triples against a frozen model.

Sketches of recently updated ids live in a fixed-size LRU cache. An id that
is not cached (new, or evicted earlier) starts again from the zero sketch,
so the score of an evicted id drifts from its batch score.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from collections.abc import Iterable, Iterator

from pydantic import BaseModel

from chainscore.core import UpdateTriple, parse_update
from chainscore.errors import DataError
from chainscore.model import EnsembleModel
from chainscore.projector import HashProjector, Sketch, update_sketch
from chainscore.scoring import ScoreRecord


logger = logging.getLogger(__name__)


class SketchCache:
    """LRU map from point id to its current sketch, holding at most ``capacity``."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError("cache capacity must be >= 1")
        self.capacity = capacity
        self.evictions = 0
        self._entries: OrderedDict[str, Sketch] = OrderedDict()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, point_id: object) -> bool:
        return point_id in self._entries

    def get(self, point_id: str) -> Sketch | None:
        sketch = self._entries.get(point_id)
        if sketch is not None:
            self._entries.move_to_end(point_id)
        return sketch

    def peek(self, point_id: str) -> Sketch | None:
        return self._entries.get(point_id)

    def put(self, point_id: str, sketch: Sketch) -> str | None:
        """Insert or refresh; returns the evicted id, if any."""
        self._entries[point_id] = sketch
        self._entries.move_to_end(point_id)
        if len(self._entries) <= self.capacity:
            return None
        evicted, _ = self._entries.popitem(last=False)
        self.evictions += 1
        return evicted

    def ids(self) -> list[str]:
        """Least recently used first."""
        return list(self._entries)


class StreamStats(BaseModel):
    processed: int = 0
    failed: int = 0
    cache_misses: int = 0
    evictions: int = 0


def process_update(
    t: UpdateTriple,
    cache: SketchCache,
    model: EnsembleModel,
    p: HashProjector,
) -> ScoreRecord:
    """Apply one triple and rescore; the cache is only touched on success."""
    if p.k != model.k:
        raise DataError(f"projector has K={p.k}, model has K={model.k}")
    current = cache.peek(t.id) or Sketch.zeros(t.id, model.k)
    updated = update_sketch(current, t, p)
    score = model.score_one(updated.values)
    cache.put(t.id, updated)
    return ScoreRecord(t.id, score)


class StreamScorer:
    def __init__(
        self,
        model: EnsembleModel,
        cache_size: int,
        projector: HashProjector | None = None,
    ) -> None:
        self.model = model
        self.projector = projector or model.projector
        self.cache = SketchCache(cache_size)
        self.stats = StreamStats()

    def process(self, t: UpdateTriple) -> ScoreRecord:
        if t.id not in self.cache:
            self.stats.cache_misses += 1
        record = process_update(t, self.cache, self.model, self.projector)
        self.stats.processed += 1
        self.stats.evictions = self.cache.evictions
        return record

    def process_line(self, line: str, line_no: int) -> ScoreRecord | None:
        try:
            return self.process(parse_update(line, line_no))
        except DataError as exc:
            self.stats.failed += 1
            logger.warning("skipping update on line %d: %s", line_no, exc)
            return None

    def run(self, lines: Iterable[str]) -> Iterator[ScoreRecord]:
        for line_no, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            record = self.process_line(line, line_no)
            if record is not None:
                yield record


def run_stream(
    lines: Iterable[str], model: EnsembleModel, cache_size: int
) -> Iterator[ScoreRecord]:
    return StreamScorer(model, cache_size).run(lines)

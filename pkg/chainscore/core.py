"""Domain types, dataset ingestion and update-triple parsing."""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING

from chainscore.errors import ParseError, StageError


if TYPE_CHECKING:
    from chainscore.engine import Engine, PartitionedDataset


FEATURE_SEPARATOR = ":"


class FeatureKind(str, Enum):
    REAL = "real"
    CATEGORICAL = "categorical"


class UpdateKind(str, Enum):
    NUMERIC_DELTA = "numeric-delta"
    CATEGORICAL_SUBSTITUTION = "categorical-substitution"


def _check_feature_name(name: str) -> None:
    if not name:
        raise ValueError("feature name must be non-empty")
    if FEATURE_SEPARATOR in name:
        raise ValueError(f"feature name {name!r} contains reserved ':'")


@dataclass(frozen=True)
class SparsePoint:
    id: str
    real_features: dict[str, float] = field(default_factory=dict)
    cat_features: dict[str, str] = field(default_factory=dict)
    label: int | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("point id must be non-empty")
        for name, value in self.real_features.items():
            _check_feature_name(name)
            if not math.isfinite(value):
                raise ValueError(f"feature {name!r} of point {self.id!r} is not finite")
        for name in self.cat_features:
            _check_feature_name(name)
            if name in self.real_features:
                raise ValueError(
                    f"feature {name!r} of point {self.id!r} is both real "
                    "and categorical"
                )


@dataclass(frozen=True)
class UpdateTriple:
    id: str
    feature: str
    kind: UpdateKind
    delta: float = 0.0
    old_val: str | None = None
    new_val: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("update id must be non-empty")
        _check_feature_name(self.feature)
        if self.kind is UpdateKind.NUMERIC_DELTA:
            if not math.isfinite(self.delta):
                raise ValueError("numeric delta must be finite")
            if self.old_val is not None or self.new_val is not None:
                raise ValueError("numeric delta carries no categorical values")
        elif not self.new_val:
            raise ValueError("categorical substitution requires new_val")

    @classmethod
    def numeric(cls, id: str, feature: str, delta: float) -> UpdateTriple:
        return cls(id, feature, UpdateKind.NUMERIC_DELTA, delta=delta)

    @classmethod
    def substitution(
        cls, id: str, feature: str, old_val: str | None, new_val: str
    ) -> UpdateTriple:
        return cls(
            id,
            feature,
            UpdateKind.CATEGORICAL_SUBSTITUTION,
            old_val=old_val,
            new_val=new_val,
        )


@dataclass(frozen=True)
class DatasetSchema:
    feature_names: tuple[str, ...]
    feature_kinds: tuple[FeatureKind, ...]
    id_column: str | None = None
    label_column: str | None = None

    def __post_init__(self) -> None:
        if len(self.feature_names) != len(self.feature_kinds):
            raise ValueError("feature_names and feature_kinds differ in length")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValueError("feature names must be unique")
        for name in self.feature_names:
            _check_feature_name(name)

    @classmethod
    def all_real(cls, names: Sequence[str], **kwargs: str | None) -> DatasetSchema:
        return cls(tuple(names), tuple(FeatureKind.REAL for _ in names), **kwargs)

    @classmethod
    def from_header(
        cls,
        header: Sequence[str],
        categorical: Iterable[str] = (),
        id_column: str | None = None,
        label_column: str | None = None,
    ) -> DatasetSchema:
        categorical = set(categorical)
        extra = {id_column, label_column} - {None}
        names = tuple(h for h in header if h not in extra)
        unknown = categorical - set(names)
        if unknown:
            raise ValueError(f"categorical features not in header: {sorted(unknown)}")
        kinds = tuple(
            FeatureKind.CATEGORICAL if n in categorical else FeatureKind.REAL
            for n in names
        )
        return cls(names, kinds, id_column=id_column, label_column=label_column)

    @property
    def columns(self) -> tuple[str, ...]:
        cols: list[str] = []
        if self.id_column:
            cols.append(self.id_column)
        cols.extend(self.feature_names)
        if self.label_column:
            cols.append(self.label_column)
        return tuple(cols)


def read_csv_header(path: Path) -> list[str]:
    with path.open(encoding="utf-8", newline="") as fh:
        return next(csv.reader(fh), [])


# ---------------------------------------------------------------------------
# Dense CSV
# ---------------------------------------------------------------------------


def _parse_label(token: str, path: Path, line_no: int) -> int:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(
            f"label {token!r} is not numeric", path=path, line_no=line_no
        ) from None
    if not value.is_integer():
        raise ParseError(
            f"label {token!r} is not an integer", path=path, line_no=line_no
        )
    return int(value)


def _parse_dense_chunk(
    chunk: Sequence[tuple[int, int, str]], schema: DatasetSchema, path: Path
) -> list[SparsePoint]:
    arity = len(schema.columns)
    points: list[SparsePoint] = []
    for row_index, line_no, text in chunk:
        row = next(csv.reader(io.StringIO(text)), [])
        if len(row) != arity:
            raise ParseError(
                f"expected {arity} fields, got {len(row)}", path=path, line_no=line_no
            )
        offset = 0
        point_id = str(row_index)
        if schema.id_column:
            point_id = row[0].strip()
            offset = 1
            if not point_id:
                raise ParseError("empty id", path=path, line_no=line_no)
        real: dict[str, float] = {}
        cat: dict[str, str] = {}
        for j, (name, kind) in enumerate(
            zip(schema.feature_names, schema.feature_kinds, strict=True)
        ):
            token = row[offset + j].strip()
            if kind is FeatureKind.CATEGORICAL:
                if token:
                    cat[name] = token
                continue
            try:
                value = float(token)
            except ValueError:
                raise ParseError(
                    f"non-numeric token {token!r} in real column {name!r}",
                    path=path,
                    line_no=line_no,
                ) from None
            if not math.isfinite(value):
                raise ParseError(
                    f"non-finite value in column {name!r}", path=path, line_no=line_no
                )
            if value != 0.0:
                real[name] = value
        label = None
        if schema.label_column:
            label = _parse_label(row[-1].strip(), path, line_no)
        points.append(
            SparsePoint(point_id, real_features=real, cat_features=cat, label=label)
        )
    return points


def _numbered_rows(path: Path, skip: int) -> list[tuple[int, int, str]]:
    """(row_index, line_no, text) for every non-blank data line."""
    rows: list[tuple[int, int, str]] = []
    with path.open(encoding="utf-8") as fh:
        for line_no, text in enumerate(fh, start=1):
            if line_no <= skip:
                continue
            text = text.rstrip("\r\n")
            if not text.strip():
                continue
            rows.append((len(rows), line_no, text))
    return rows


def _unwrap_stage_error(exc: StageError) -> Exception:
    cause = exc.__cause__
    return cause if isinstance(cause, ParseError) else exc


def _check_unique_ids(ds: PartitionedDataset[SparsePoint], path: Path) -> None:
    seen: set[str] = set()
    for point in ds.collect():
        if point.id in seen:
            raise ParseError(f"duplicate id {point.id!r}", path=path)
        seen.add(point.id)


def parse_dense_csv(
    path: Path,
    schema: DatasetSchema,
    has_header: bool,
    engine: Engine,
    partitions: int | None = None,
) -> PartitionedDataset[SparsePoint]:
    """Parse a comma-separated file into one SparsePoint per data row.

    Without an id column the 0-based data-row index becomes the id. Zero
    real values are dropped; empty categorical cells are treated as absent.
    """
    rows = _numbered_rows(path, skip=1 if has_header else 0)
    # Row index travels with each line so ids do not depend on partitioning.
    chunks = engine.parallelize(rows, partitions)

    def parse(chunk: Sequence[tuple[int, int, str]]) -> list[SparsePoint]:
        return _parse_dense_chunk(chunk, schema, path)

    try:
        ds = engine.map_partitions(chunks, parse, stage="parse/dense-csv")
    except StageError as exc:
        raise _unwrap_stage_error(exc) from exc
    if schema.id_column:
        _check_unique_ids(ds, path)
    return ds


# ---------------------------------------------------------------------------
# Sparse key-value
# ---------------------------------------------------------------------------


def _parse_kv_line(text: str, row_index: int, path: Path, line_no: int) -> SparsePoint:
    tokens = text.split()
    label = _parse_label(tokens[0], path, line_no)
    real: dict[str, float] = {}
    for token in tokens[1:]:
        idx, sep, raw = token.partition(":")
        if not sep or not idx:
            raise ParseError(f"malformed pair {token!r}", path=path, line_no=line_no)
        try:
            value = float(raw)
        except ValueError:
            raise ParseError(
                f"value {raw!r} of index {idx} is not numeric",
                path=path,
                line_no=line_no,
            ) from None
        if not math.isfinite(value):
            raise ParseError(
                f"non-finite value at index {idx}", path=path, line_no=line_no
            )
        name = f"f{idx}"
        if name in real:
            raise ParseError(f"duplicate index {idx}", path=path, line_no=line_no)
        # Zeros are recorded then removed so duplicates of a zero are still caught.
        real[name] = value
    real = {k: v for k, v in real.items() if v != 0.0}
    return SparsePoint(str(row_index), real_features=real, label=label)


def parse_sparse_kv(
    path: Path, engine: Engine, partitions: int | None = None
) -> PartitionedDataset[SparsePoint]:
    """Parse ``label idx:val idx:val ...`` lines; the line's row index is the id."""
    rows = _numbered_rows(path, skip=0)
    chunks = engine.parallelize(rows, partitions)

    def parse(chunk: Sequence[tuple[int, int, str]]) -> list[SparsePoint]:
        return [_parse_kv_line(text, idx, path, ln) for idx, ln, text in chunk]

    try:
        return engine.map_partitions(chunks, parse, stage="parse/sparse-kv")
    except StageError as exc:
        raise _unwrap_stage_error(exc) from exc


def format_sparse_kv(point: SparsePoint) -> str:
    if point.cat_features:
        raise ValueError("sparse kv format holds real features only")
    pairs = []
    for name, value in point.real_features.items():
        if not (name.startswith("f") and name[1:].isdigit()):
            raise ValueError(f"feature {name!r} is not of the form f<index>")
        pairs.append((int(name[1:]), value))
    pairs.sort()
    if point.label is None:
        raise ValueError(f"point {point.id!r} has no label; kv lines require one")
    label = point.label
    body = " ".join(f"{idx}:{value!r}" for idx, value in pairs)
    return f"{label} {body}".rstrip()


def write_sparse_kv(path: Path, points: Iterable[SparsePoint]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for point in points:
            fh.write(format_sparse_kv(point) + "\n")


def write_dense_csv(
    path: Path,
    header: Sequence[str],
    rows: Iterable[Sequence[object]],
) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# Update triples
# ---------------------------------------------------------------------------


def parse_update(line: str, line_no: int | None = None) -> UpdateTriple:
    """Parse ``id,feature,delta-spec``.

    A delta-spec containing ':' is a categorical substitution ``old:new``
    (empty ``old`` means the feature is new); anything else is a real delta.
    """
    parts = [p.strip() for p in line.strip().split(",")]
    if len(parts) != 3:
        raise ParseError(f"expected 3 fields, got {len(parts)}", line_no=line_no)
    point_id, feature, spec = parts
    try:
        if FEATURE_SEPARATOR in spec:
            old, _, new = spec.partition(FEATURE_SEPARATOR)
            return UpdateTriple.substitution(point_id, feature, old or None, new)
        try:
            delta = float(spec)
        except ValueError:
            raise ParseError(
                f"delta {spec!r} is not a real number", line_no=line_no
            ) from None
        return UpdateTriple.numeric(point_id, feature, delta)
    except ValueError as exc:
        raise ParseError(str(exc), line_no=line_no) from exc

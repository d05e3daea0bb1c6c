from __future__ import annotations

from pathlib import Path


class ChainscoreError(Exception):
    """Base class for errors raised by chainscore."""


class ConfigError(ChainscoreError):
    """Raised when a run configuration violates its invariants."""


class DataError(ChainscoreError):
    """Raised when input data cannot be used as given."""


class ParseError(DataError):
    """Raised when an input line cannot be parsed."""

    def __init__(
        self,
        message: str,
        *,
        path: Path | str | None = None,
        line_no: int | None = None,
    ) -> None:
        self.path = str(path) if path is not None else None
        self.line_no = line_no
        location = ""
        if self.path is not None and line_no is not None:
            location = f"{self.path}:{line_no}: "
        elif line_no is not None:
            location = f"line {line_no}: "
        super().__init__(f"{location}{message}")


class FitError(DataError):
    """Raised when a chain cannot be fitted (e.g. the sample is empty)."""


class DimensionMismatchError(DataError):
    """Raised when sketches and a model disagree on the projection dimension."""


class StageError(ChainscoreError):
    """Raised when a user function fails inside an engine stage.

    The original exception is chained as ``__cause__``.
    """

    def __init__(self, stage: str, partition: int, index: int | None) -> None:
        self.stage = stage
        self.partition = partition
        self.index = index
        where = f"partition {partition}"
        if index is not None:
            where += f", element {index}"
        super().__init__(f"stage {stage!r} failed at {where}")

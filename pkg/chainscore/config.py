"""Run configuration: defaults, key=value config files and flag overrides.

Precedence is flags > config file > defaults. The config file is optional;
``CHAINSCORE_CONFIG`` names one to use when no ``--config`` flag is given.
"""

from __future__ import annotations

import logging
import os
from collections.abc import Mapping
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from chainscore.errors import ConfigError


logger = logging.getLogger(__name__)

CONFIG_ENV = "CHAINSCORE_CONFIG"

# Short names accepted in config files alongside the field names.
ALIASES = {
    "K": "k",
    "M": "chains",
    "L": "levels",
    "r": "rows",
    "w": "width",
}


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    k: int = Field(50, ge=1, description="projection dimension K")
    chains: int = Field(100, ge=1, description="ensemble size M")
    levels: int = Field(20, ge=1, description="chain depth L")
    rows: int = Field(10, ge=1, description="CMS rows r")
    width: int = Field(100, ge=1, description="CMS columns w")
    sample_rate: float = Field(1.0, gt=0.0, le=1.0)
    contamination: float | None = Field(None, gt=0.0, lt=1.0)
    run_seed: int = Field(0, ge=0, lt=2**64)
    threads: int = Field(4, ge=1, description="chains fitted concurrently")
    workers: int = Field(4, ge=1, description="engine worker pool size")
    partitions: int | None = Field(None, ge=1)
    cache_size: int = Field(10_000, ge=1)
    input_format: Literal["csv", "kv"] = "csv"
    has_header: bool = True
    id_column: str | None = None
    label_column: str | None = None
    categorical: tuple[str, ...] = ()

    @field_validator("categorical", mode="before")
    @classmethod
    def _split_names(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(v.strip() for v in value.split(",") if v.strip())
        return value

    @field_validator("id_column", "label_column", mode="before")
    @classmethod
    def _blank_is_none(cls, value: Any) -> Any:
        if isinstance(value, str) and not value.strip():
            return None
        return value


def default_config_path() -> Path | None:
    value = os.getenv(CONFIG_ENV)
    return Path(value) if value else None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{line_no}: expected key=value, got {raw!r}")
        key = ALIASES.get(key, key)
        if key in values:
            raise ConfigError(f"{source}:{line_no}: {key!r} set twice")
        values[key] = value.strip()
    return values


def load_config_file(path: Path) -> dict[str, str]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def resolve_config(
    path: Path | None = None, overrides: Mapping[str, Any] | None = None
) -> RunConfig:
    """Merge defaults, the config file and flag overrides (``None`` means unset)."""
    merged: dict[str, Any] = {}
    path = path or default_config_path()
    if path is not None:
        merged.update(load_config_file(path))
        logger.info("loaded config file %s", path)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"]) or "config"
        parts.append(f"{where}: {err['msg']}")
    return "invalid configuration: " + "; ".join(parts)

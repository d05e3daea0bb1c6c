from __future__ import annotations

from pathlib import Path

import pytest

from chainscore.config import CONFIG_ENV, RunConfig, parse_config_text, resolve_config
from chainscore.errors import ConfigError


def test_defaults() -> None:
    config = RunConfig()
    assert (config.k, config.chains, config.levels, config.rows, config.width) == (
        50,
        100,
        20,
        10,
        100,
    )
    assert config.sample_rate == 1.0
    assert config.contamination is None
    assert config.partitions is None


def test_parse_config_text_aliases_and_comments() -> None:
    values = parse_config_text(
        "# header\nK = 16\nM=8 # ensemble\n\nsample_rate = 0.5\n"
    )
    assert values == {"k": "16", "chains": "8", "sample_rate": "0.5"}


def test_parse_config_text_rejects_garbage() -> None:
    with pytest.raises(ConfigError, match="expected key=value"):
        parse_config_text("just words\n", source="run.conf")


def test_parse_config_text_rejects_repeats() -> None:
    with pytest.raises(ConfigError, match="set twice"):
        parse_config_text("K = 4\nk = 5\n")


def test_flags_override_file_override_defaults(tmp_path: Path) -> None:
    path = tmp_path / "run.conf"
    path.write_text("K = 16\nM = 8\ncategorical = color, size\n")
    config = resolve_config(path, {"chains": 3, "levels": None})
    assert (config.k, config.chains, config.levels) == (16, 3, 20)
    assert config.categorical == ("color", "size")
    assert config.model_fields_set >= {"k", "chains"}
    assert "levels" not in config.model_fields_set


def test_env_names_the_default_file(
    tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    path = tmp_path / "env.conf"
    path.write_text("w = 64\n")
    monkeypatch.setenv(CONFIG_ENV, str(path))
    assert resolve_config().width == 64


def test_missing_config_file(tmp_path: Path) -> None:
    with pytest.raises(ConfigError, match="cannot read"):
        resolve_config(tmp_path / "absent.conf")


@pytest.mark.parametrize(
    "overrides",
    [
        {"k": 0},
        {"sample_rate": 0.0},
        {"sample_rate": 1.5},
        {"contamination": 1.0},
        {"input_format": "parquet"},
        {"unknown_knob": 1},
    ],
)
def test_invalid_values_are_config_errors(overrides: dict[str, object]) -> None:
    with pytest.raises(ConfigError, match="invalid configuration"):
        resolve_config(None, overrides)


def test_blank_columns_mean_none() -> None:
    config = RunConfig(id_column=" ", label_column="label")
    assert config.id_column is None
    assert config.label_column == "label"


def test_config_is_frozen() -> None:
    with pytest.raises(ValueError):
        RunConfig().k = 3  # type: ignore[misc]

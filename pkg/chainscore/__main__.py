from __future__ import annotations

import logging
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any, NoReturn, TextIO

import click
from pydantic import BaseModel

from chainscore import bench
from chainscore.config import RunConfig, resolve_config
from chainscore.errors import ConfigError, DataError, DimensionMismatchError, StageError
from chainscore.model import EnsembleModel
from chainscore.presets import PRESETS, resolve_preset
from chainscore.runner import (
    evaluate,
    fit_pipeline,
    labels_of,
    load_points,
    open_engine,
    score_pipeline,
    with_default_label,
)
from chainscore.scoring import (
    TSV_COLUMNS,
    rank_and_label,
    read_scores_tsv,
    write_scores_tsv,
)
from chainscore.streaming import StreamScorer
from chainscore.sweep import SweepGrid, SweepReport, run_sweep


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

_IN_FILE = click.Path(exists=True, dir_okay=False, path_type=Path)
_OUT_FILE = click.Path(dir_okay=False, path_type=Path)


def _exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_USAGE
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, StageError) and isinstance(exc.__cause__, DataError):
        return EXIT_DATA
    return EXIT_INTERNAL


class ExitCodeGroup(click.Group):
    """Maps failures to exit codes: 1 usage, 2 data, 3 internal."""

    def main(self, *args: Any, **kwargs: Any) -> NoReturn:  # type: ignore[override]
        kwargs.pop("standalone_mode", None)
        try:
            result = super().main(*args, standalone_mode=False, **kwargs)
        except click.exceptions.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(EXIT_USAGE)
        except click.ClickException as exc:
            exc.show()
            sys.exit(EXIT_USAGE)
        except Exception as exc:
            code = _exit_code_for(exc)
            if code == EXIT_INTERNAL:
                logger.exception("internal error")
            cause = exc.__cause__ if isinstance(exc, StageError) else None
            detail = f"{exc} ({cause})" if cause is not None else str(exc)
            click.echo(f"Error: {detail}", err=True)
            sys.exit(code)
        sys.exit(result if isinstance(result, int) else EXIT_OK)


def _write_json(model: BaseModel, path: Path | None) -> None:
    text = model.model_dump_json(indent=2)
    if path is None:
        click.echo(text)
    else:
        path.write_text(text + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Shared options
# ---------------------------------------------------------------------------

_RUN_OPTIONS: tuple[Callable[[Any], Any], ...] = (
    click.option(
        "--config",
        "config_path",
        type=_IN_FILE,
        default=None,
        help="key=value config file (default: $CHAINSCORE_CONFIG).",
    ),
    click.option(
        "-K", "--dim", "k", type=int, default=None, help="Projection dimension [50]."
    ),
    click.option("-M", "--chains", type=int, default=None, help="Ensemble size [100]."),
    click.option("-L", "--levels", type=int, default=None, help="Chain depth [20]."),
    click.option("-r", "--rows", type=int, default=None, help="CMS rows [10]."),
    click.option("-w", "--width", type=int, default=None, help="CMS columns [100]."),
    click.option(
        "--sample-rate", type=float, default=None, help="Fit sample rate [1.0]."
    ),
    click.option(
        "--contamination",
        type=float,
        default=None,
        help="Outlier fraction for labels.",
    ),
    click.option("--seed", "run_seed", type=int, default=None, help="Run seed [0]."),
    click.option(
        "--threads", type=int, default=None, help="Chains fitted concurrently [4]."
    ),
    click.option("--workers", type=int, default=None, help="Engine workers [4]."),
    click.option(
        "--partitions", type=int, default=None, help="Partitions [workers x 4]."
    ),
    click.option(
        "--format", "input_format", type=click.Choice(["csv", "kv"]), default=None
    ),
    click.option("--header/--no-header", "has_header", default=None),
    click.option("--id-column", default=None),
    click.option(
        "--label-column",
        default=None,
        help="Ground-truth column [label, when the header has one].",
    ),
    click.option(
        "--categorical", default=None, help="Comma-separated categorical columns."
    ),
)


def run_options(f: Callable[..., Any]) -> Callable[..., Any]:
    for option in reversed(_RUN_OPTIONS):
        f = option(f)
    return f


def _config_from(config_path: Path | None, **overrides: Any) -> RunConfig:
    return resolve_config(config_path, overrides)


# ---------------------------------------------------------------------------
# cli
# ---------------------------------------------------------------------------


@click.group(cls=ExitCodeGroup)
@click.option(
    "--log-level",
    envvar="CHAINSCORE_LOG_LEVEL",
    default="WARNING",
    show_default=True,
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
)
def cli(log_level: str) -> None:
    """Outlier scoring with hashed projections and half-space chains."""
    logging.basicConfig(
        level=log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


@cli.group("gen")
def gen() -> None:
    """Generate labeled benchmark datasets."""


_OUTPUT = click.argument("output", type=_OUT_FILE)
_GEN_FORMAT = click.option(
    "--format",
    "fmt",
    type=click.Choice(["csv", "kv"]),
    default="csv",
    show_default=True,
)


@gen.command("gmm")
@_OUTPUT
@click.option("--n", "n", default=40_000, show_default=True, type=int)
@click.option("--d", "d", default=500, show_default=True, type=int)
@click.option("--outlier-frac", default=0.1, show_default=True, type=float)
@click.option("--feature-frac", default=0.1, show_default=True, type=float)
@click.option("--variance-factor", default=5.0, show_default=True, type=float)
@click.option("--components", default=5, show_default=True, type=int)
@click.option("--base-n", default=3_500, show_default=True, type=int)
@click.option("--iters", default=100, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@_GEN_FORMAT
def gen_gmm_command(
    output: Path,
    n: int,
    d: int,
    outlier_frac: float,
    feature_frac: float,
    variance_factor: float,
    components: int,
    base_n: int,
    iters: int,
    seed: int,
    fmt: str,
) -> None:
    """Variance-inflation benchmark from a mixture fitted to base inliers."""
    try:
        base = bench.synthetic_base_inliers(base_n, d, components, rng_seed=seed)
        spec = bench.fit_diag_gmm(base, components, iters=iters, rng_seed=seed)
        dataset = bench.sample_gmm_benchmark(
            spec, n, outlier_frac, feature_frac, variance_factor, rng_seed=seed
        )
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from exc
    dataset.write(output, fmt)
    click.echo(f"Wrote {dataset.n} rows ({dataset.outliers} outliers) to {output}")


@gen.command("grid")
@_OUTPUT
@click.option("--n", "n", default=1_000_000, show_default=True, type=int)
@click.option("--outliers", default=1_000, show_default=True, type=int)
@click.option("--clusters", default=8, show_default=True, type=int)
@click.option("--spread", default=0.02, show_default=True, type=float)
@click.option("--cell-size", default=0.01, show_default=True, type=float)
@click.option(
    "--bounds",
    default=None,
    help="xmin,ymin,xmax,ymax (default: data box + 1 cell).",
)
@click.option("--seed", default=0, show_default=True, type=int)
@_GEN_FORMAT
def gen_grid_command(
    output: Path,
    n: int,
    outliers: int,
    clusters: int,
    spread: float,
    cell_size: float,
    bounds: str | None,
    seed: int,
    fmt: str,
) -> None:
    """Grid-injection benchmark over clustered 2-d inliers."""
    box: tuple[float, float, float, float] | None = None
    if bounds:
        try:
            x0, y0, x1, y1 = (float(v) for v in bounds.split(","))
        except ValueError as exc:
            raise click.BadParameter(
                "expected four comma-separated numbers", param_hint="--bounds"
            ) from exc
        box = (x0, y0, x1, y1)
    try:
        inliers = bench.sample_clustered_2d(n, clusters, spread, rng_seed=seed)
        dataset = bench.inject_grid_outliers(inliers, outliers, cell_size, seed, box)
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from exc
    bench.verify_grid_injection(dataset)
    dataset.write(output, fmt)
    click.echo(f"Wrote {dataset.n} rows ({dataset.outliers} outliers) to {output}")


@gen.command("preset")
@click.argument("name", type=click.Choice([p.name for p in PRESETS]))
@_OUTPUT
@click.option("--seed", default=0, show_default=True, type=int)
@_GEN_FORMAT
def gen_preset_command(name: str, output: Path, seed: int, fmt: str) -> None:
    """Generate the dataset of a named benchmark preset."""
    preset = resolve_preset(name)
    dataset = bench.generate_preset(preset, rng_seed=seed)
    dataset.write(output, fmt)
    click.echo(
        f"Wrote {dataset.n} rows ({dataset.outliers} outliers) to {output}; "
        f"suggested: -K {preset.k} -M {preset.chains} -L {preset.levels} "
        f"--sample-rate {preset.sample_rate}"
    )


@cli.command("fit")
@click.argument("input_file", type=_IN_FILE)
@click.argument("model_file", type=_OUT_FILE)
@click.option(
    "--report",
    "report_file",
    type=_OUT_FILE,
    default=None,
    help="Fit report path (default: MODEL_FILE.json).",
)
@run_options
def fit_command(
    input_file: Path,
    model_file: Path,
    report_file: Path | None,
    config_path: Path | None,
    **flags: Any,
) -> None:
    """Project INPUT_FILE, fit the chain ensemble and write MODEL_FILE."""
    config = with_default_label(_config_from(config_path, **flags), input_file)
    with open_engine(config) as engine:
        points = load_points(engine, input_file, config)
        model, report = fit_pipeline(engine, points, config)
    data = model.to_bytes()
    model_file.write_bytes(data)
    report.model_bytes = len(data)
    _write_json(report, report_file or model_file.with_name(model_file.name + ".json"))
    click.echo(f"Fitted {model.size} chains on {report.points} points -> {model_file}")


@cli.command("score")
@click.argument("input_file", type=_IN_FILE)
@click.argument("model_file", type=_IN_FILE)
@click.option("-o", "--output", type=click.File("w", encoding="utf-8"), default="-")
@run_options
def score_command(
    input_file: Path,
    model_file: Path,
    output: TextIO,
    config_path: Path | None,
    **flags: Any,
) -> None:
    """Score INPUT_FILE against MODEL_FILE as id/score/outlierness TSV."""
    config = with_default_label(_config_from(config_path, **flags), input_file)
    model = EnsembleModel.load(model_file)
    if "k" in config.model_fields_set and config.k != model.k:
        raise DimensionMismatchError(
            f"configured K={config.k} but model has K={model.k}"
        )
    with open_engine(config) as engine:
        points = load_points(engine, input_file, config)
        records = score_pipeline(engine, points, model, threads=config.threads)
    labels = None
    if config.contamination is not None:
        labels = rank_and_label(records, config.contamination)
    write_scores_tsv(output, records, labels)


@cli.command("eval")
@click.argument("scores_file", type=_IN_FILE)
@click.argument("labels_file", type=_IN_FILE)
@click.option("-o", "--output", type=_OUT_FILE, default=None)
@run_options
def eval_command(
    scores_file: Path,
    labels_file: Path,
    output: Path | None,
    config_path: Path | None,
    **flags: Any,
) -> None:
    """Compare SCORES_FILE with the labels carried by dataset LABELS_FILE."""
    if flags.get("label_column") is None and flags.get("input_format") != "kv":
        flags["label_column"] = bench.LABEL_COLUMN
    config = _config_from(config_path, **flags)
    records = read_scores_tsv(scores_file)
    with open_engine(config) as engine:
        truth = labels_of(load_points(engine, labels_file, config))
    if len(truth) != len(records):
        raise DataError(f"{len(records)} scores but {len(truth)} labelled points")
    for rec, (point_id, _) in zip(records, truth, strict=True):
        if rec.id != point_id:
            raise DataError(
                f"score id {rec.id!r} does not match dataset id {point_id!r}"
            )
    report = evaluate(records, [label for _, label in truth], config.contamination)
    _write_json(report, output)


@cli.command("stream")
@click.argument("model_file", type=_IN_FILE)
@click.option(
    "-i",
    "--input",
    "input_stream",
    type=click.File("r", encoding="utf-8"),
    default="-",
)
@click.option("-o", "--output", type=click.File("w", encoding="utf-8"), default="-")
@click.option("--cache-size", type=int, default=None, help="LRU capacity N [10000].")
@click.option("--config", "config_path", type=_IN_FILE)
def stream_command(
    model_file: Path,
    input_stream: TextIO,
    output: TextIO,
    cache_size: int | None,
    config_path: Path | None,
) -> None:
    """Read id,feature,delta triples and emit an updated score per line."""
    config = _config_from(config_path, cache_size=cache_size)
    scorer = StreamScorer(EnsembleModel.load(model_file), config.cache_size)
    output.write("\t".join(TSV_COLUMNS) + "\n")
    for record in scorer.run(input_stream):
        output.write(f"{record.id}\t{record.score!r}\t{record.outlierness!r}\n")
        output.flush()
    logger.info("stream finished: %s", scorer.stats.model_dump())


def _int_list(value: str) -> tuple[int, ...]:
    return tuple(int(v) for v in value.split(",") if v.strip())


def _float_list(value: str) -> tuple[float, ...]:
    return tuple(float(v) for v in value.split(",") if v.strip())


@cli.command("sweep")
@click.argument("input_file", type=_IN_FILE)
@click.option("--grid-chains", default="10", show_default=True)
@click.option("--grid-levels", default="10", show_default=True)
@click.option("--grid-sample-rates", default="1.0", show_default=True)
@click.option("--grid-workers", default="", help="Worker counts [--workers].")
@click.option("--grid-threads", default="", help="Thread counts [--threads].")
@click.option("--grid-partitions", default="4", show_default=True)
@click.option("-o", "--output", type=_OUT_FILE, default=None)
@run_options
def sweep_command(
    input_file: Path,
    grid_chains: str,
    grid_levels: str,
    grid_sample_rates: str,
    grid_workers: str,
    grid_threads: str,
    grid_partitions: str,
    output: Path | None,
    config_path: Path | None,
    **flags: Any,
) -> None:
    """Fit and score INPUT_FILE over a grid of M, L, rate, workers and partitions."""
    if flags.get("label_column") is None and flags.get("input_format") != "kv":
        flags["label_column"] = bench.LABEL_COLUMN
    config = _config_from(config_path, **flags)
    try:
        grid = SweepGrid(
            chains=_int_list(grid_chains),
            levels=_int_list(grid_levels),
            sample_rates=_float_list(grid_sample_rates),
            workers=_int_list(grid_workers),
            threads=_int_list(grid_threads),
            partitions=_int_list(grid_partitions),
        )
        configs = list(grid.configs(config))
    except ValueError as exc:
        raise ConfigError(f"invalid sweep grid: {exc}") from None
    with open_engine(config) as engine:
        points = load_points(engine, input_file, config).collect()
    labels = [p.label if p.label is not None else 0 for p in points]
    logger.info("sweeping %d configurations", len(configs))
    rows = run_sweep(points, labels, config, grid)
    _write_json(SweepReport(rows=rows), output)


if __name__ == "__main__":
    cli()

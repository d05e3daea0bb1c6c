#!/usr/bin/env python3
"""Run the ten acceptance checks at a configurable scale and print a table.

Usage:
    uv run python scripts/run_acceptance.py                 # full desk scale
    uv run python scripts/run_acceptance.py --scale 0.05    # quick smoke run
    uv run python scripts/run_acceptance.py --only 1,4,9

``--scale`` multiplies every point, string and update count. Thresholds stay
fixed, so small scales are a smoke test rather than a verdict.
"""

from __future__ import annotations

import dataclasses
import logging
import sys
import time
from collections.abc import Callable
from pathlib import Path

import click
import numpy as np
from pydantic import BaseModel

from chainscore.bench import (
    BenchDataset,
    generate_preset,
    inject_grid_outliers,
    sample_clustered_2d,
)
from chainscore.chain import ExactHistogramChain, chain_score_matrix
from chainscore.cms import CountMinSketch, cms_row_seeds, collision_free, encode_bin_key
from chainscore.config import RunConfig
from chainscore.core import SparsePoint, UpdateTriple
from chainscore.engine import Engine
from chainscore.metrics import auroc
from chainscore.model import fit_ensemble
from chainscore.presets import resolve_preset
from chainscore.projector import as_matrix, hash_components
from chainscore.runner import fit_pipeline, project, score_pipeline
from chainscore.streaming import StreamScorer


logger = logging.getLogger("acceptance")


class CheckResult(BaseModel):
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


class AcceptanceReport(BaseModel):
    scale: float
    results: list[CheckResult]


def _n(base: int, scale: float, floor: int = 10) -> int:
    return max(floor, int(round(base * scale)))


def _points(matrix: np.ndarray, labels: np.ndarray | None = None) -> list[SparsePoint]:
    if labels is None:
        labels = np.zeros(matrix.shape[0], dtype=np.int64)
    return BenchDataset(matrix, labels, kind="acceptance", seed=0).to_points()


def _fit_and_score(
    points: list[SparsePoint], config: RunConfig, partitions: int | None = None
) -> np.ndarray:
    partitions = partitions or config.partitions
    with Engine(workers=config.workers, partitions=partitions) as engine:
        ds = engine.parallelize(points)
        model, _ = fit_pipeline(engine, ds, config)
        records = score_pipeline(engine, ds, model, threads=config.threads)
    return np.array([r.score for r in records])


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


def check_exact_histogram(scale: float) -> tuple[bool, str]:
    n = _n(10_000, scale)
    rng = np.random.default_rng(1)
    points = _points(np.round(rng.normal(size=(n, 20)) * 4) / 4)
    config = RunConfig(k=10, chains=4, levels=8, rows=10, width=100_000, workers=4)
    with Engine(workers=4) as engine:
        sketches = project(engine, engine.parallelize(points), config.k)
        model = fit_ensemble(engine, sketches, config)
        flat = sketches.collect()
    batch = as_matrix(flat, config.k)
    clean_levels = 0
    for chain in model.chains:
        oracle = ExactHistogramChain.fit(chain, flat)
        for level, sketch in enumerate(chain.sketches):
            clean_levels += collision_free(sketch, oracle.level_keys(level))
        got = chain_score_matrix(batch.matrix, chain)
        want = np.array([oracle.score(s) for s in flat])
        if not np.array_equal(got, want):
            bad = int((got != want).sum())
            return False, f"{bad} of {n} scores differ from the exact histogram"
    total = len(model.chains) * config.levels
    clean = f"{clean_levels}/{total} levels collision-free"
    return True, f"n={n}; {clean}; all scores equal"


def check_partition_invariance(scale: float) -> tuple[bool, str]:
    n = _n(100_000, scale)
    data = inject_grid_outliers(
        sample_clustered_2d(n, rng_seed=2), _n(100, scale, 1), rng_seed=2
    )
    points = data.to_points()
    base = RunConfig(k=20, chains=10, levels=10, workers=8)
    reference: np.ndarray | None = None
    worst = 0.0
    for partitions in (1, 4, 16):
        for threads in (1, 8):
            update = {"partitions": partitions, "threads": threads}
            config = base.model_copy(update=update)
            scores = _fit_and_score(points, config)
            if reference is None:
                reference = scores
                continue
            denom = np.maximum(np.abs(reference), 1e-300)
            worst = max(worst, float(np.max(np.abs(scores - reference) / denom)))
    return worst <= 1e-9, f"n={data.n}; max relative difference {worst:.3g}"


def _random_triples(
    n: int, rng: np.random.Generator
) -> tuple[list[UpdateTriple], list[SparsePoint]]:
    real: list[dict[str, float]] = [{} for _ in range(n)]
    color: list[str | None] = [None] * n
    triples = []
    colors = ["red", "green", "blue", "amber", "grey"]
    for _ in range(6 * n):
        i = int(rng.integers(n))
        pid = f"p{i}"
        kind = rng.random()
        if kind < 0.6:
            feature = f"f{rng.integers(10)}"
        elif kind < 0.8:
            # features that only appear late in the stream
            feature = f"g{rng.integers(1_000)}"
        else:
            new = str(rng.choice([c for c in colors if c != color[i]]))
            triples.append(UpdateTriple.substitution(pid, "color", color[i], new))
            color[i] = new
            continue
        delta = float(rng.integers(-8, 9)) / 4
        triples.append(UpdateTriple.numeric(pid, feature, delta))
        real[i][feature] = real[i].get(feature, 0.0) + delta
    finals = [
        SparsePoint(
            f"p{i}",
            {k: v for k, v in real[i].items() if v != 0.0},
            {"color": color[i]} if color[i] else {},
        )
        for i in range(n)
    ]
    return triples, finals


def check_streaming_equivalence(scale: float) -> tuple[bool, str]:
    n = _n(1_000, scale)
    triples, finals = _random_triples(n, np.random.default_rng(3))
    touched = {t.id for t in triples}
    finals = [p for p in finals if p.id in touched]
    config = RunConfig(k=20, chains=10, levels=10, workers=4)
    with Engine(workers=4) as engine:
        ds = engine.parallelize(finals)
        model, _ = fit_pipeline(engine, ds, config)
        batch = {r.id: r.score for r in score_pipeline(engine, ds, model)}
    scorer = StreamScorer(model, cache_size=len(finals))
    streamed = {}
    for t in triples:
        streamed[t.id] = scorer.process(t).score
    worst = max(
        abs(streamed[pid] - batch[pid]) / max(abs(batch[pid]), 1e-300) for pid in batch
    )
    detail = f"{len(triples)} triples over {len(finals)} points"
    return worst <= 1e-9, f"{detail}; max rel diff {worst:.3g}"


def check_hash_distribution(scale: float) -> tuple[bool, str]:
    n = _n(1_000_000, scale, 1_000)
    rng = np.random.default_rng(4)
    strings = [f"{v:x}" for v in rng.integers(0, 2**62, size=n).tolist()]
    worst = 0.0
    for seed in range(50):
        values = hash_components(seed, strings)
        freq = np.array([(values == v).mean() for v in (1, -1, 0)])
        worst = max(worst, float(np.abs(freq - [1 / 6, 1 / 6, 2 / 3]).max()))
    return worst <= 0.01, f"{n} strings x 50 seeds; max deviation {worst:.4f}"


def check_cms_overestimate(scale: float) -> tuple[bool, str]:
    streams = _n(1_000, scale)
    rng = np.random.default_rng(5)
    exact_when_clean = 0
    clean = 0
    for s in range(streams):
        w = int(rng.integers(4, 64))
        cms = CountMinSketch.empty(3, w, cms_row_seeds(s, 0, 3))
        n_keys = int(rng.integers(1, 40))
        keys = [encode_bin_key(rng.integers(-3, 4, size=4)) for _ in range(n_keys)]
        truth: dict[bytes, int] = {}
        for key in keys:
            count = int(rng.integers(1, 5))
            cms = cms.add(key, count)
            truth[key] = truth.get(key, 0) + count
        answers = {key: cms.query(key) for key in truth}
        if any(answers[key] < truth[key] for key in truth):
            return False, f"stream {s} underestimated a key"
        if collision_free(cms, truth):
            clean += 1
            if answers != truth:
                return False, f"stream {s} is collision-free but not exact"
            exact_when_clean += 1
    exact = f"{exact_when_clean}/{clean} collision-free streams exact"
    return True, f"{streams} streams; {exact}"


def _benchmark_auroc(preset_name: str, scale: float, seeds: int) -> tuple[bool, str]:
    preset = resolve_preset(preset_name)
    if preset.kind == "grid":
        preset = dataclasses.replace(
            preset,
            n=_n(preset.n, scale, 1_000),
            outliers=_n(int(preset.outliers), scale, 1),
        )
    else:
        preset = dataclasses.replace(preset, n=_n(preset.n, scale, 200))
    values = []
    for seed in range(seeds):
        data = generate_preset(preset, rng_seed=seed)
        config = RunConfig(
            k=preset.k,
            chains=preset.chains,
            levels=preset.levels,
            sample_rate=preset.sample_rate,
            run_seed=seed,
            workers=8,
            threads=8,
        )
        scores = _fit_and_score(data.to_points(), config)
        values.append(auroc(-scores, data.labels))
    mean = float(np.mean(values))
    spread = ", ".join(f"{v:.3f}" for v in values)
    detail = f"n={preset.n}; AUROC {mean:.3f} ({spread}) >= {preset.min_auroc}"
    return mean >= preset.min_auroc, detail


def check_gmm_quality(scale: float) -> tuple[bool, str]:
    return _benchmark_auroc("gmm-desk", scale, seeds=3)


def check_grid_quality(scale: float) -> tuple[bool, str]:
    return _benchmark_auroc("grid-desk", scale, seeds=3)


def check_linear_scaling(scale: float) -> tuple[bool, str]:
    config = RunConfig(k=20, chains=10, levels=10, workers=8, threads=8)
    timings = []
    sizes = [_n(base, scale, 1_000) for base in (100_000, 200_000, 400_000)]
    for n in sizes:
        points = _points(sample_clustered_2d(n, rng_seed=8))
        start = time.perf_counter()
        _fit_and_score(points, config)
        timings.append(time.perf_counter() - start)
    ratios = [timings[1] / timings[0], timings[2] / timings[1]]
    detail = ", ".join(
        f"n={n}: {t:.2f}s" for n, t in zip(sizes, timings, strict=True)
    )
    detail += f"; ratios {ratios[0]:.2f}, {ratios[1]:.2f}"
    return all(r <= 2.5 for r in ratios), detail


def check_shuffle_accounting(scale: float) -> tuple[bool, str]:
    settings = [
        (4, 3, 6, _n(5_000, scale), 1.0),
        (2, 5, 3, _n(2_000, scale), 0.5),
        (6, 2, 8, _n(3_000, scale), 0.25),
    ]
    rng = np.random.default_rng(9)
    for m, r, depth, n, rate in settings:
        points = _points(np.round(rng.normal(size=(n, 5)) * 8) / 8)
        config = RunConfig(
            k=8, chains=m, rows=r, levels=depth, width=256, sample_rate=rate
        )
        with Engine(workers=4) as engine:
            ds = engine.parallelize(points)
            model, report = fit_pipeline(engine, ds, config)
            sketches = project(engine, ds, config.k)
            sampled = sum(
                engine.sample(
                    sketches, rate, c.sample_seed(), stage="verify/sample"
                ).count()
                for c in model.chains
            )
        expected = r * depth * sampled
        if report.pre_combine_records != expected:
            got = report.pre_combine_records
            return False, f"M={m} r={r} L={depth}: {got} != {expected}"
    return True, f"{len(settings)} settings match r*L*sum(sampled n)"


def check_streaming_latency(scale: float) -> tuple[bool, str]:
    updates = _n(1_000_000, scale, 10_000)
    cache_size = _n(10_000, scale, 100)
    rng = np.random.default_rng(10)
    warm = _points(np.round(rng.normal(size=(2_000, 20)) * 4) / 4)
    config = RunConfig(k=20, chains=10, levels=10, workers=4)
    with Engine(workers=4) as engine:
        model, _ = fit_pipeline(engine, engine.parallelize(warm), config)
    scorer = StreamScorer(model, cache_size=cache_size)
    ids = rng.integers(0, 5 * cache_size, size=updates)
    features = rng.integers(0, 20, size=updates)
    deltas = rng.integers(-4, 5, size=updates) / 4
    elapsed = np.empty(updates)
    for i in range(updates):
        t = UpdateTriple.numeric(f"p{ids[i]}", f"f{features[i]}", float(deltas[i]))
        start = time.perf_counter()
        scorer.process(t)
        elapsed[i] = time.perf_counter() - start
    tenth = updates // 10
    early = float(elapsed[:tenth].mean())
    late = float(elapsed[-tenth:].mean())
    detail = (
        f"{updates} updates, N={cache_size}; "
        f"early {early * 1e6:.1f}us, late {late * 1e6:.1f}us"
    )
    return late <= 2 * early, f"{detail}; {scorer.stats.evictions} evictions"


CHECKS: tuple[tuple[str, Callable[[float], tuple[bool, str]]], ...] = (
    ("exact histogram oracle", check_exact_histogram),
    ("partition/thread invariance", check_partition_invariance),
    ("streaming = batch", check_streaming_equivalence),
    ("hash distribution", check_hash_distribution),
    ("count-min overestimate", check_cms_overestimate),
    ("GMM detection quality", check_gmm_quality),
    ("grid detection quality", check_grid_quality),
    ("linear scaling in n", check_linear_scaling),
    ("shuffle accounting", check_shuffle_accounting),
    ("constant-time streaming", check_streaming_latency),
)


def run_check(number: int, scale: float) -> CheckResult:
    name, check = CHECKS[number - 1]
    logger.info("running check %d: %s", number, name)
    start = time.perf_counter()
    try:
        passed, detail = check(scale)
    except Exception as exc:
        logger.exception("check %d raised", number)
        passed, detail = False, f"raised {type(exc).__name__}: {exc}"
    return CheckResult(
        number=number,
        name=name,
        passed=passed,
        detail=detail,
        seconds=time.perf_counter() - start,
    )


@click.command()
@click.option(
    "--scale",
    type=click.FloatRange(min=0.0, min_open=True),
    default=1.0,
    show_default=True,
)
@click.option("--only", default="", help="Comma-separated check numbers, e.g. 1,4,9.")
@click.option(
    "-o", "--output", type=click.Path(dir_okay=False, path_type=Path), default=None
)
@click.option("--log-level", default="INFO", show_default=True)
def main(scale: float, only: str, output: Path | None, log_level: str) -> None:
    """Run acceptance checks and exit non-zero if any fails."""
    logging.basicConfig(
        level=log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    numbers = [int(v) for v in only.split(",") if v.strip()]
    numbers = numbers or list(range(1, len(CHECKS) + 1))
    bad = [v for v in numbers if not 1 <= v <= len(CHECKS)]
    if bad:
        raise click.BadParameter(f"no such check: {bad}", param_hint="--only")

    results = [run_check(number, scale) for number in numbers]
    click.echo(f"{'#':>2}  {'check':<28} {'result':<6} {'secs':>8}  detail")
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        click.echo(
            f"{res.number:>2}  {res.name:<28} {status:<6} "
            f"{res.seconds:>8.1f}  {res.detail}"
        )
    if output is not None:
        report = AcceptanceReport(scale=scale, results=results)
        output.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    sys.exit(0 if all(r.passed for r in results) else 1)


if __name__ == "__main__":
    main()

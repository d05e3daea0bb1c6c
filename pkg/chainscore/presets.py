from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BenchPreset:
    name: str
    kind: str
    n: int
    d: int
    # fraction of n for gmm presets, injected count for grid presets
    outliers: float
    k: int
    chains: int
    levels: int
    sample_rate: float
    min_auroc: float


PRESETS: tuple[BenchPreset, ...] = (
    BenchPreset(
        name="gmm-desk",
        kind="gmm",
        n=40_000,
        d=500,
        outliers=0.10,
        k=50,
        chains=100,
        levels=20,
        sample_rate=0.1,
        min_auroc=0.75,
    ),
    BenchPreset(
        name="grid-desk",
        kind="grid",
        n=1_000_000,
        d=2,
        outliers=1_000,
        k=50,
        chains=10,
        levels=10,
        sample_rate=1.0,
        min_auroc=0.90,
    ),
    BenchPreset(
        name="gmm-small",
        kind="gmm",
        n=4_000,
        d=100,
        outliers=0.10,
        k=20,
        chains=20,
        levels=10,
        sample_rate=0.5,
        min_auroc=0.70,
    ),
    BenchPreset(
        name="grid-small",
        kind="grid",
        n=20_000,
        d=2,
        outliers=100,
        k=20,
        chains=10,
        levels=10,
        sample_rate=1.0,
        min_auroc=0.85,
    ),
)


def resolve_preset(name: str) -> BenchPreset:
    normalized = name.strip().lower()
    for preset in PRESETS:
        if preset.name == normalized:
            return preset
    known = ", ".join(p.name for p in PRESETS)
    raise KeyError(f"unknown preset {name!r} (known: {known})")

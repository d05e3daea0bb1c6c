from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chainscore.core import SparsePoint, UpdateTriple
from chainscore.engine import Engine
from chainscore.errors import DataError
from chainscore.hashing import h64
from chainscore.projector import (
    HashProjector,
    Sketch,
    SketchBatch,
    hash_component,
    hash_components,
    project,
    project_dataset,
    project_partition,
    update_sketch,
)


P = HashProjector.from_dimension(16)


def test_hash_component_follows_mod_six() -> None:
    for s in ["a", "b", "URL", "loc:NYC", "f0", "f1", "f2"]:
        u = h64(3, s) % 6
        assert hash_component(3, s) == {0: 1, 1: -1}.get(u, 0)


def test_hash_components_matches_scalar() -> None:
    strings = [f"f{i}" for i in range(200)]
    expected = [hash_component(5, s) for s in strings]
    assert hash_components(5, strings).tolist() == expected


def test_hash_component_density() -> None:
    strings = [f"feature-{i}" for i in range(6000)]
    values = hash_components(0, strings)
    assert abs(float((values != 0).mean()) - 1 / 3) < 0.03
    assert abs(int((values == 1).sum()) - int((values == -1).sum())) < 300


@pytest.mark.parametrize(("s1", "s2"), [(0, 1), (3, 17), (41, 42)])
def test_hash_components_independent_across_seeds(s1: int, s2: int) -> None:
    names = [f"name-{i}" for i in range(1000)]
    a = hash_components(s1, names)
    b = hash_components(s2, names)
    # Independent draws agree with probability 1/36 + 1/36 + 4/9.
    agreement = float((a == b).mean())
    assert 0.4 <= agreement <= 0.6
    assert float(((a != 0) & (a == b)).mean()) < 0.1


def test_projector_rejects_duplicate_seeds() -> None:
    with pytest.raises(ValueError):
        HashProjector((1, 1))


def test_projector_needs_a_name_cache() -> None:
    with pytest.raises(ValueError):
        HashProjector((1, 2), name_cache_size=0)


def test_empty_point_projects_to_zero() -> None:
    sketch = project(SparsePoint("e"), P)
    assert sketch.values.tolist() == [0.0] * 16


def test_single_real_feature() -> None:
    sketch = project(SparsePoint("a", real_features={"URL": 2.5}), P)
    assert sketch.values.tolist() == (2.5 * P.row("URL")).tolist()


def test_categorical_feature_hashes_name_and_value() -> None:
    sketch = project(SparsePoint("a", cat_features={"loc": "NYC"}), P)
    assert sketch.values.tolist() == P.row("loc:NYC").astype(float).tolist()


@given(
    st.dictionaries(
        st.sampled_from([f"f{i}" for i in range(20)]),
        st.integers(-50, 50).map(float),
        max_size=10,
    ),
    st.integers(-4, 4),
)
def test_projection_is_linear(features: dict[str, float], c: int) -> None:
    base = project(SparsePoint("a", real_features=features), P).values
    scaled = {k: v * c for k, v in features.items() if v * c != 0}
    assert np.array_equal(
        project(SparsePoint("a", real_features=scaled), P).values, c * base
    )


def test_project_partition_matches_project() -> None:
    rng = np.random.default_rng(1)
    points = [
        SparsePoint(
            str(i),
            real_features={
                f"f{j}": float(rng.normal()) for j in rng.choice(30, 5)
            },
            cat_features={"color": str(rng.choice(["red", "blue"]))},
            label=i % 2,
        )
        for i in range(25)
    ]
    batch = project_partition(points, P)
    for point, sketch in zip(points, batch, strict=True):
        expected = project(point, P)
        assert sketch.id == point.id
        assert sketch.label == point.label
        np.testing.assert_allclose(
            sketch.values, expected.values, rtol=1e-12, atol=1e-12
        )


def test_project_dataset_is_one_stage() -> None:
    points = [SparsePoint(str(i), real_features={"x": float(i + 1)}) for i in range(10)]
    with Engine(workers=2, partitions=4) as engine:
        ds = project_dataset(engine, engine.parallelize(points), P)
        assert [s.id for s in ds.collect()] == [p.id for p in points]
        assert set(engine.metrics.stages) == {"project"}


# ---------------------------------------------------------------------------
# Name row cache
# ---------------------------------------------------------------------------


def test_name_rows_evict_least_recently_used() -> None:
    p = HashProjector((0, 1, 2, 3), name_cache_size=3)
    p.name_rows(["a", "b", "c"])
    p.name_rows(["a"])
    p.name_rows(["d"])
    assert p.cached_names == 3
    assert list(p._name_rows) == ["c", "a", "d"]


def test_name_rows_beyond_capacity_are_still_exact() -> None:
    p = HashProjector(tuple(range(8)), name_cache_size=4)
    names = [f"f{i}" for i in range(10)] + ["f0", "f9"]
    rows = p.name_rows(names)
    assert rows.tolist() == [p.row(n).tolist() for n in names]
    assert p.cached_names == 4
    again = p.name_rows(names)
    assert again.tolist() == rows.tolist()


def test_projection_does_not_depend_on_cache_size() -> None:
    small = HashProjector(P.seeds, name_cache_size=2)
    point = SparsePoint("a", real_features={f"f{i}": float(i + 1) for i in range(9)})
    for _ in range(3):
        assert np.array_equal(project(point, small).values, project(point, P).values)


# ---------------------------------------------------------------------------
# SketchBatch
# ---------------------------------------------------------------------------


def test_sketch_batch_select_and_slice() -> None:
    matrix = np.arange(6, dtype=float).reshape(3, 2)
    batch = SketchBatch(("a", "b", "c"), matrix, (0, 1, None))
    picked = batch.select(np.array([True, False, True]))
    assert list(picked.ids) == ["a", "c"]
    assert picked.labels == (0, None)
    assert batch[1:].matrix.tolist() == [[2.0, 3.0], [4.0, 5.0]]


def test_sketch_is_read_only() -> None:
    sketch = Sketch("a", np.ones(3))
    with pytest.raises(ValueError):
        sketch.values[0] = 2.0


# ---------------------------------------------------------------------------
# update_sketch
# ---------------------------------------------------------------------------


def test_zero_delta_leaves_sketch_unchanged() -> None:
    sketch = project(SparsePoint("a", real_features={"URL": 1.0}), P)
    updated = update_sketch(sketch, UpdateTriple.numeric("a", "URL", 0.0), P)
    assert updated.values.tolist() == sketch.values.tolist()


def test_identity_substitution_leaves_sketch_unchanged() -> None:
    sketch = project(SparsePoint("a", cat_features={"loc": "NYC"}), P)
    t = UpdateTriple.substitution("a", "loc", "NYC", "NYC")
    assert update_sketch(sketch, t, P).values.tolist() == sketch.values.tolist()


def test_updates_reproduce_batch_projection() -> None:
    point = SparsePoint(
        "a", real_features={"URL": 3.0, "clicks": -2.0}, cat_features={"loc": "Austin"}
    )
    sketch = Sketch.zeros("a", P.k)
    for t in [
        UpdateTriple.numeric("a", "URL", 3.0),
        UpdateTriple.substitution("a", "loc", None, "NYC"),
        UpdateTriple.numeric("a", "clicks", -2.0),
        UpdateTriple.substitution("a", "loc", "NYC", "Austin"),
    ]:
        sketch = update_sketch(sketch, t, P)
    assert sketch.values.tolist() == project(point, P).values.tolist()


def test_update_rejects_dimension_mismatch() -> None:
    with pytest.raises(ValueError):
        update_sketch(Sketch.zeros("a", 3), UpdateTriple.numeric("a", "x", 1.0), P)


def test_update_that_overflows_is_a_data_error() -> None:
    name = next(f"x{i}" for i in range(1000) if P.row(f"x{i}").any())
    big = UpdateTriple.numeric("a", name, 1e308)
    sketch = update_sketch(Sketch.zeros("a", P.k), big, P)
    with pytest.raises(DataError, match="non-finite"):
        update_sketch(sketch, big, P)

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from chainscore.chain import fit_chain, init_chain
from chainscore.config import RunConfig
from chainscore.engine import Engine, PartitionedDataset
from chainscore.errors import DataError, DimensionMismatchError
from chainscore.model import MAGIC, EnsembleModel, chain_seed, fit_ensemble
from chainscore.projector import Sketch


def _data(
    engine: Engine, n: int = 120, k: int = 6, seed: int = 0
) -> PartitionedDataset[Sketch]:
    rng = np.random.default_rng(seed)
    matrix = rng.normal(size=(n, k))
    matrix[:5] += 6.0
    return engine.parallelize([Sketch(str(i), row) for i, row in enumerate(matrix)])


def _config(**kw: object) -> RunConfig:
    base: dict[str, object] = dict(k=6, chains=5, levels=6, rows=3, width=32, threads=2)
    return RunConfig.model_validate(base | kw)


@pytest.fixture(scope="module")
def model() -> EnsembleModel:
    with Engine(workers=2, partitions=4) as engine:
        return fit_ensemble(engine, _data(engine), _config(sample_rate=0.7))


def test_model_shape(model: EnsembleModel) -> None:
    shape = (model.k, model.size, model.levels, model.rows, model.width)
    assert shape == (6, 5, 6, 3, 32)
    assert model.projector.k == 6


def test_chain_seeds_come_from_run_seed(model: EnsembleModel) -> None:
    assert [c.seed for c in model.chains] == [chain_seed(0, m) for m in range(5)]
    assert len({c.seed for c in model.chains}) == 5


def test_single_chain_equals_fit_chain() -> None:
    config = _config(chains=1)
    with Engine(workers=2, partitions=3) as engine:
        data = _data(engine)
        ensemble = fit_ensemble(engine, data, config)
        chain = init_chain(chain_seed(0, 0), ensemble.delta, 6, 3, 32)
        alone = fit_chain(engine, data, chain, 1.0, chain.sample_seed())
    assert [s.counts.tolist() for s in ensemble.chains[0].sketches] == [
        s.counts.tolist() for s in alone.sketches
    ]


def test_thread_count_does_not_change_the_model() -> None:
    blobs = []
    for threads in (1, 8):
        with Engine(workers=3, partitions=5) as engine:
            model = fit_ensemble(engine, _data(engine), _config(threads=threads))
            blobs.append(model.to_bytes())
    assert blobs[0] == blobs[1]


def test_same_seed_same_model_and_other_seed_differs() -> None:
    with Engine(workers=2) as engine:
        data = _data(engine)
        a = fit_ensemble(engine, data, _config(run_seed=3)).to_bytes()
        b = fit_ensemble(engine, data, _config(run_seed=3)).to_bytes()
        c = fit_ensemble(engine, data, _config(run_seed=4)).to_bytes()
    assert a == b
    assert a != c


def test_codec_round_trip(model: EnsembleModel, tmp_path: Path) -> None:
    path = tmp_path / "model.bin"
    model.save(path)
    assert path.read_bytes()[:4] == MAGIC
    loaded = EnsembleModel.load(path)
    assert loaded.to_bytes() == model.to_bytes()
    assert loaded.sample_rate == model.sample_rate
    matrix = np.random.default_rng(1).normal(size=(20, 6))
    assert loaded.score_matrix(matrix).tolist() == model.score_matrix(matrix).tolist()


def test_truncated_model_is_a_data_error(model: EnsembleModel) -> None:
    with pytest.raises(DataError):
        EnsembleModel.from_bytes(model.to_bytes()[:-3])


def test_trailing_bytes_are_rejected(model: EnsembleModel) -> None:
    with pytest.raises(DataError, match="trailing"):
        EnsembleModel.from_bytes(model.to_bytes() + b"\0")


def test_wrong_magic(model: EnsembleModel) -> None:
    with pytest.raises(DataError, match="not a chainscore model"):
        EnsembleModel.from_bytes(b"XXXX" + model.to_bytes()[4:])


def test_score_one_matches_score_matrix(model: EnsembleModel) -> None:
    matrix = np.random.default_rng(2).normal(size=(30, 6)) * 2
    batch = model.score_matrix(matrix)
    assert [model.score_one(row) for row in matrix] == batch.tolist()


def test_score_matrix_threads_agree(model: EnsembleModel) -> None:
    matrix = np.random.default_rng(4).normal(size=(50, 6))
    assert model.score_matrix(matrix, threads=1).tolist() == model.score_matrix(
        matrix, threads=8
    ).tolist()


def test_score_rejects_wrong_dimension(model: EnsembleModel) -> None:
    with pytest.raises(DimensionMismatchError):
        model.score_matrix(np.zeros((2, 5)))
    with pytest.raises(DimensionMismatchError):
        model.score_one(np.zeros(7))


def test_scoring_does_not_mutate_the_model(model: EnsembleModel) -> None:
    before = model.to_bytes()
    matrix = np.random.default_rng(5).normal(size=(10, 6))
    first = model.score_matrix(matrix).tolist()
    assert model.score_matrix(matrix).tolist() == first
    assert model.to_bytes() == before


def test_planted_outliers_score_low(model: EnsembleModel) -> None:
    rng = np.random.default_rng(0)
    matrix = rng.normal(size=(120, 6))
    matrix[:5] += 6.0
    scores = model.score_matrix(matrix)
    assert scores[:5].mean() < scores[5:].mean()

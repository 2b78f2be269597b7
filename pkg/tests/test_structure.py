"""Structural embedding pretraining (plain trilinear model, no fusion)."""
import numpy as np
import pytest

from mmkgc.data import TripleStore, build_filter_index
from mmkgc.errors import ConfigError
from mmkgc.evaluation import hits_at_k, mrr
from mmkgc.retrieval import Query, filtered_rank, queries_for_split
from mmkgc.structure import (StructureConfig, StructureModel,
                             train_structure_embeddings)


def cycle_store(n=4):
    train = [(i, 0, (i + 1) % n) for i in range(n)]
    return TripleStore(train=train, valid=[], test=[])


def ranks_on(sm: StructureModel, triples, filt):
    return [filtered_rank(sm.score_all(q), q, filt)
            for q in queries_for_split(triples)]


def test_zero_epochs_returns_seeded_init():
    store = cycle_store()
    cfg = StructureConfig(dim=8, epochs=0, seed=5)
    a = train_structure_embeddings(store, 4, 1, cfg)
    b = train_structure_embeddings(store, 4, 1, cfg)
    assert np.array_equal(a.matrix, b.matrix)
    init = StructureModel(4, 1, 8, seed=5)
    assert np.array_equal(a.matrix, init.entities.data)
    assert np.all(np.abs(a.matrix) <= 0.05)
    assert a.epochs_run == 0 and not a.diverged


def test_output_shape_and_dtype():
    store = cycle_store(5)
    out = train_structure_embeddings(store, 5, 1, StructureConfig(dim=12, epochs=3, seed=1))
    assert out.matrix.shape == (5, 12)
    assert out.matrix.dtype == np.float32
    assert np.isfinite(out.matrix).all()


def test_structure_config_validation():
    with pytest.raises(ConfigError):
        StructureConfig(dim=0).validate()
    with pytest.raises(ConfigError):
        StructureConfig(lr=-0.1).validate()
    StructureConfig(dim=200).validate()  # benchmark-scale width accepted


def test_cycle_memorization_reaches_perfect_hits():
    store = cycle_store(4)
    cfg = StructureConfig(dim=8, epochs=300, lr=0.01, batch_size=8, seed=3)
    out = train_structure_embeddings(store, 4, 1, cfg)
    assert all(np.isfinite(out.losses))
    filt = build_filter_index(store, ("train",))
    sm = StructureModel(4, 1, 8, seed=0)
    sm.load_arrays(out.matrix, out.relations, out.core)
    ranks = ranks_on(sm, store.train, filt)
    assert hits_at_k(ranks, 1) == 1.0
    assert mrr(ranks) == 1.0


def test_training_loss_decreases():
    store = cycle_store(6)
    cfg = StructureConfig(dim=8, epochs=100, lr=0.01, batch_size=8, seed=2)
    out = train_structure_embeddings(store, 6, 1, cfg)
    assert out.losses[-1] < 0.5 * out.losses[0]


def test_seed_determinism_after_training():
    store = cycle_store(5)
    cfg = StructureConfig(dim=8, epochs=5, lr=0.01, batch_size=8, seed=11)
    a = train_structure_embeddings(store, 5, 1, cfg)
    b = train_structure_embeddings(store, 5, 1, cfg)
    assert np.array_equal(a.matrix, b.matrix)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_with_last_finite_matrix():
    store = cycle_store(4)
    # a step size this large overflows float32 scores within an epoch or two
    cfg = StructureConfig(dim=8, epochs=50, lr=1e13, batch_size=8, seed=1)
    out = train_structure_embeddings(store, 4, 1, cfg)
    assert out.diverged
    assert out.epochs_run < cfg.epochs
    assert np.isfinite(out.matrix).all()


def test_early_stopping_on_flat_validation():
    train = [(i, 0, (i + 1) % 6) for i in range(6)]
    valid = [(0, 0, 2), (1, 0, 3)]
    store = TripleStore(train=train, valid=valid, test=[])
    cfg = StructureConfig(dim=8, epochs=50, lr=0.0, batch_size=8, seed=1,
                          patience=2, eval_every=1)
    out = train_structure_embeddings(store, 6, 1, cfg)
    assert out.epochs_run == 3


def test_score_all_directions():
    sm = StructureModel(5, 2, 8, seed=9)
    tail_scores = sm.score_all(Query("tail", entity=1, relation=0, gold=2))
    head_scores = sm.score_all(Query("head", entity=2, relation=0, gold=1))
    assert tail_scores.shape == head_scores.shape == (5,)
    # both directions score the same triple identically
    assert abs(tail_scores[2] - head_scores[1]) < 1e-6

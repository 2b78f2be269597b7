"""Trainer: loss, negative sampling, epoch loop, checkpoints, early stopping."""
import json
import math
import os

import numpy as np
import pytest

from mmkgc.autodiff import Tensor
from mmkgc.data import TripleStore, build_filter_index
from mmkgc.errors import CheckpointError, ConfigError, DataError, OptimError
from mmkgc.evaluation import evaluate_split
from mmkgc.model import ModelConfig, RetrieverModel
from mmkgc.optim import Adam
from mmkgc.training import (TrainConfig, bce_loss, epoch_loss, fit,
                            load_checkpoint, sample_negatives, save_checkpoint,
                            train_epoch)

from helpers import make_synthetic_triples
from oracles import bce_naive

DIMS = {"visual": 10, "textual": 6, "structural": 8}


def toy(seed=5, n_ent=10, n_rel=2, n_train=20, n_valid=4, n_test=4, dim=8):
    train, valid, test = make_synthetic_triples(n_ent, n_rel, n_train, n_valid,
                                                n_test, seed=seed)
    store = TripleStore(train=train, valid=valid, test=test)
    cfg = ModelConfig(dim=dim, n_simple=1, n_phm=1, phm_blocks=2, kappa=1)
    rng = np.random.default_rng(seed + 1)
    feats = {m: rng.normal(size=(n_ent, d)).astype(np.float32) for m, d in DIMS.items()}
    model = RetrieverModel(cfg, n_ent, n_rel, DIMS, seed=seed + 2)
    return store, model, feats


# --- loss -----------------------------------------------------------------


def test_bce_positive_at_zero_score_is_ln2():
    loss = bce_loss(Tensor(np.zeros(1)), np.ones(1))
    assert abs(float(loss.data) - math.log(2.0)) < 1e-7


def test_bce_negative_at_large_negative_score_vanishes():
    loss = bce_loss(Tensor(np.array([-40.0])), np.zeros(1))
    assert 0.0 <= float(loss.data) < 1e-12


def test_bce_is_a_sum_not_a_mean():
    two = bce_loss(Tensor(np.zeros(2)), np.ones(2))
    assert abs(float(two.data) - 2.0 * math.log(2.0)) < 1e-6


def test_bce_matches_naive_oracle():
    rng = np.random.default_rng(3)
    scores = rng.normal(scale=4.0, size=64)
    labels = rng.uniform(size=64)
    got = float(bce_loss(Tensor(scores), labels).data)
    assert abs(got - bce_naive(scores, labels)) < 1e-6


def test_bce_gradient_is_sigmoid_minus_label():
    rng = np.random.default_rng(4)
    scores = rng.normal(scale=3.0, size=32)
    labels = (rng.uniform(size=32) > 0.5).astype(np.float64)
    s = Tensor(scores, requires_grad=True)
    bce_loss(s, labels).backward()
    want = 1.0 / (1.0 + np.exp(-scores)) - labels
    assert np.max(np.abs(s.grad - want)) < 1e-6


def test_bce_shape_mismatch_rejected():
    from mmkgc.errors import ShapeError
    with pytest.raises(ShapeError):
        bce_loss(Tensor(np.zeros(3)), np.ones(4))


# --- negative sampling ------------------------------------------------------


def test_negatives_forced_outcome_on_two_entity_kg():
    store = TripleStore(train=[(0, 0, 1)], valid=[], test=[])
    filt = build_filter_index(store, ("train",))
    rng = np.random.default_rng(0)
    negs = [n for _ in range(50)
            for n in sample_negatives((0, 0, 1), 2, filt, 1, rng)]
    assert set(negs) <= {(0, 0, 0), (1, 0, 1)}
    for h, r, t in negs:
        if h == 0:  # tail corruption kept the head: only (0,0,0) is unknown
            assert (h, r, t) == (0, 0, 0)


def test_negatives_deterministic_per_seed():
    store = TripleStore(train=[(i, 0, (i + 1) % 10) for i in range(10)], valid=[], test=[])
    filt = build_filter_index(store, ("train",))
    a = sample_negatives((0, 0, 1), 10, filt, 16, np.random.default_rng(12))
    b = sample_negatives((0, 0, 1), 10, filt, 16, np.random.default_rng(12))
    assert a == b


def test_negatives_never_in_train_split():
    train, _, _ = make_synthetic_triples(100, 4, 300, 0, 0, seed=8)
    store = TripleStore(train=train, valid=[], test=[])
    filt = build_filter_index(store, ("train",))
    rng = np.random.default_rng(9)
    drawn = 0
    for pos in train[:100]:
        for neg in sample_negatives(pos, 100, filt, 10, rng):
            assert not filt.contains(*neg)
            drawn += 1
    assert drawn == 1000


def test_negatives_error_when_all_corruptions_known():
    # single-entity KG: every corruption of (0,0,0) is (0,0,0) itself
    store = TripleStore(train=[(0, 0, 0)], valid=[], test=[])
    filt = build_filter_index(store, ("train",))
    with pytest.raises(DataError):
        sample_negatives((0, 0, 0), 1, filt, 1, np.random.default_rng(0))


def test_negatives_require_positive_count():
    store = TripleStore(train=[(0, 0, 1)], valid=[], test=[])
    filt = build_filter_index(store, ("train",))
    with pytest.raises(ConfigError):
        sample_negatives((0, 0, 1), 2, filt, 0, np.random.default_rng(0))


# --- epoch loop -------------------------------------------------------------


def snapshot(model):
    return {k: v.data.copy() for k, v in model.parameters().items()}


def test_zero_lr_leaves_parameters_and_loss_unchanged():
    store, model, feats = toy()
    filt = build_filter_index(store, ("train",))
    cfg = TrainConfig(dim=8, lr=0.0, batch_size=8, epochs=1, seed=3)
    opt = Adam(model.parameters(), lr=0.0)
    before = snapshot(model)
    first = train_epoch(model, feats, store, filt, cfg, opt, np.random.default_rng(3))
    second = train_epoch(model, feats, store, filt, cfg, opt, np.random.default_rng(3))
    after = snapshot(model)
    assert first == second
    for k in before:
        assert np.array_equal(before[k], after[k]), k


@pytest.mark.parametrize("mode", ["one-vs-all", "sampled"])
def test_loss_decreases_over_first_epochs(mode):
    store, model, feats = toy(seed=13)
    filt = build_filter_index(store, ("train",))
    cfg = TrainConfig(dim=8, lr=0.005, batch_size=32, epochs=1, mode=mode,
                      n_neg=4, seed=1)
    opt = Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)

    def probe():
        # fixed rng: same corruptions and gate noise, so values are comparable
        return epoch_loss(model, feats, store, filt, cfg, np.random.default_rng(99))

    probes = [probe()]
    for _ in range(20):
        train_epoch(model, feats, store, filt, cfg, opt, rng)
        probes.append(probe())
    assert all(np.isfinite(probes))
    assert probes[-1] < probes[0]
    drops = sum(1 for a, b in zip(probes, probes[1:]) if b < a)
    assert drops >= 18  # strict decrease, at most 2 optimizer overshoots


def test_sampled_mode_memorizes_small_kg():
    store, model, feats = toy(seed=21, n_ent=12, n_rel=2, n_train=24, dim=16)
    filt = build_filter_index(store, ("train",))
    cfg = TrainConfig(dim=16, lr=0.01, batch_size=32, epochs=1, mode="sampled",
                      n_neg=8, seed=2)
    opt = Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    losses = [train_epoch(model, feats, store, filt, cfg, opt, rng)
              for _ in range(200)]
    report = evaluate_split(model, feats, store.train, filt)
    assert report.hits[1] >= 0.95
    assert losses[-1] < 0.2 * losses[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts_with_diagnostics():
    store, model, feats = toy()
    filt = build_filter_index(store, ("train",))
    feats["visual"][0, 0] = np.inf  # whitening of an inf row yields NaN
    cfg = TrainConfig(dim=8, lr=0.001, batch_size=64, epochs=1, seed=0)
    opt = Adam(model.parameters(), lr=cfg.lr)
    with pytest.raises(OptimError, match="non-finite loss.*batch"):
        train_epoch(model, feats, store, filt, cfg, opt, np.random.default_rng(0))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(mode="both").validate()
    with pytest.raises(ConfigError):
        TrainConfig(lr=-1.0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(label_smoothing=1.0).validate()
    TrainConfig().validate()


# --- checkpoints -------------------------------------------------------------


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    store, model, feats = toy()
    p1 = os.path.join(tmp_path, "a")
    p2 = os.path.join(tmp_path, "b")
    save_checkpoint(model, p1, extra={"epoch": 3, "valid_mrr": 0.5})
    loaded, manifest = load_checkpoint(p1)
    save_checkpoint(loaded, p2, extra=manifest["extra"])
    for suffix in (".manifest.json", ".params.bin"):
        a = open(p1 + suffix, "rb").read()
        b = open(p2 + suffix, "rb").read()
        assert a == b, suffix
    for k, v in model.parameters().items():
        assert np.array_equal(v.data, loaded.parameters()[k].data), k


def test_checkpoint_manifest_covers_every_parameter_once(tmp_path):
    store, model, feats = toy()
    prefix = os.path.join(tmp_path, "m")
    save_checkpoint(model, prefix)
    manifest = json.load(open(prefix + ".manifest.json", encoding="utf-8"))
    names = [p["name"] for p in manifest["params"]]
    assert sorted(names) == sorted(model.parameters().keys())
    assert len(names) == len(set(names))
    offset = 0
    for p in manifest["params"]:
        assert p["offset"] == offset
        offset += p["nbytes"]
    blob = open(prefix + ".params.bin", "rb").read()
    assert offset == len(blob)


def test_checkpoint_tampered_blob_detected(tmp_path):
    store, model, feats = toy()
    prefix = os.path.join(tmp_path, "m")
    save_checkpoint(model, prefix)
    blob = open(prefix + ".params.bin", "rb").read()
    open(prefix + ".params.bin", "wb").write(blob[:-4])
    with pytest.raises(CheckpointError, match="blob"):
        load_checkpoint(prefix)


def test_checkpoint_shape_mismatch_names_tensor(tmp_path):
    store, model, feats = toy()
    prefix = os.path.join(tmp_path, "m")
    save_checkpoint(model, prefix)
    manifest = json.load(open(prefix + ".manifest.json", encoding="utf-8"))
    manifest["params"][0]["shape"] = [1, 1]
    json.dump(manifest, open(prefix + ".manifest.json", "w", encoding="utf-8"))
    bad = manifest["params"][0]["name"]
    with pytest.raises(CheckpointError, match=bad.replace(".", r"\.")):
        load_checkpoint(prefix)


# --- fit driver --------------------------------------------------------------


def test_fit_writes_log_and_checkpoint(tmp_path):
    store, model, feats = toy(seed=17)
    cfg = TrainConfig(dim=8, lr=0.005, batch_size=16, epochs=4, eval_every=2,
                      patience=10, seed=4)
    out = os.path.join(tmp_path, "run")
    result = fit(model, feats, store, cfg, out)
    rows = [json.loads(line) for line in open(os.path.join(out, "train_log.jsonl"))]
    assert len(rows) == result.epochs_run == 4
    assert all({"epoch", "loss"} <= set(r) for r in rows)
    assert any("valid_mrr" in r for r in rows)
    assert os.path.exists(result.checkpoint_prefix + ".manifest.json")
    loaded, manifest = load_checkpoint(result.checkpoint_prefix)
    assert manifest["extra"]["valid_mrr"] == result.best_valid_mrr


def test_fit_early_stops_on_flat_validation(tmp_path):
    store, model, feats = toy(seed=19)
    cfg = TrainConfig(dim=8, lr=0.0, batch_size=16, epochs=50, eval_every=1,
                      patience=2, seed=4)
    result = fit(model, feats, store, cfg, os.path.join(tmp_path, "run"))
    assert result.stopped_early
    assert result.epochs_run == 3  # best at eval 1, patience exhausted at eval 3


def test_fit_same_seed_reproduces_parameters(tmp_path):
    outs = []
    for attempt in range(2):
        store, model, feats = toy(seed=29)
        cfg = TrainConfig(dim=8, lr=0.005, batch_size=16, epochs=3,
                          eval_every=10, seed=7)
        fit(model, feats, store, cfg, os.path.join(tmp_path, f"run{attempt}"))
        outs.append(snapshot(model))
    for k in outs[0]:
        assert np.array_equal(outs[0][k], outs[1][k]), k


def test_fit_checkpoints_byte_identical_across_runs(tmp_path):
    blobs = []
    for attempt in range(2):
        store, model, feats = toy(seed=29)
        cfg = TrainConfig(dim=8, lr=0.005, batch_size=16, epochs=3,
                          eval_every=2, seed=7)
        res = fit(model, feats, store, cfg, os.path.join(tmp_path, f"r{attempt}"))
        blobs.append(open(res.checkpoint_prefix + ".params.bin", "rb").read())
    assert blobs[0] == blobs[1]

"""Filtered MRR / Hits@k aggregation and report emission."""
import json

import numpy as np
import pytest

from mmkgc.data import TripleStore, build_filter_index
from mmkgc.errors import UsageError
from mmkgc.evaluation import (MetricsReport, evaluate_rankings, evaluate_split,
                              hits_at_k, mrr, sweep_to_csv)
from mmkgc.model import ModelConfig, RetrieverModel
from mmkgc.retrieval import Query, queries_for_split, rank_queries, score_all

from helpers import make_synthetic_triples
from oracles import filtered_rank_scan, hits_naive, mrr_naive


def toy_setup(seed=23, n_ent=20, n_rel=3):
    train, valid, test = make_synthetic_triples(n_ent, n_rel, 60, 8, 8, seed=seed)
    store = TripleStore(train=train, valid=valid, test=test)
    cfg = ModelConfig(dim=8, n_simple=1, n_phm=1, phm_blocks=2, kappa=1)
    dims = {"visual": 10, "textual": 6, "structural": 8}
    rng = np.random.default_rng(seed + 1)
    feats = {m: rng.normal(size=(n_ent, d)).astype(np.float32) for m, d in dims.items()}
    model = RetrieverModel(cfg, n_ent, n_rel, dims, seed=seed + 2)
    return store, model, feats


def test_mrr_all_rank_one():
    assert mrr([1.0, 1.0, 1.0]) == 1.0


def test_mrr_known_values():
    ranks = [1.0, 2.0, 4.0]
    assert mrr(ranks) == (1.0 + 0.5 + 0.25) / 3
    assert mrr(ranks) == mrr_naive(ranks)


def test_mrr_rejects_empty():
    with pytest.raises(UsageError):
        mrr([])


def test_hits_known_values():
    ranks = [1.0, 2.0, 4.0]
    assert hits_at_k(ranks, 1) == hits_naive(ranks, 1) == 1.0 / 3
    assert hits_at_k(ranks, 3) == hits_naive(ranks, 3) == 2.0 / 3
    assert hits_at_k(ranks, 10) == 1.0


def test_fractional_tie_rank_policy():
    # a rank-1 tie (1.5) misses Hits@1 but lands inside Hits@3
    assert hits_at_k([1.5], 1) == 0.0
    assert hits_at_k([1.5], 3) == 1.0


def test_metrics_match_naive_on_random_ranks():
    rng = np.random.default_rng(9)
    ranks = [float(r) for r in rng.integers(1, 30, size=101)]
    ranks[::7] = [r + 0.5 for r in ranks[::7]]  # sprinkle tie ranks
    assert mrr(ranks) == mrr_naive(ranks)
    for k in (1, 3, 10):
        assert hits_at_k(ranks, k) == hits_naive(ranks, k)


def test_evaluate_split_shape_and_invariants():
    store, model, feats = toy_setup()
    filt = build_filter_index(store, ("train", "valid", "test"))
    report = evaluate_split(model, feats, store.test, filt)
    assert report.n_queries == 2 * len(store.test)
    assert 0.0 <= report.mrr <= 1.0
    assert report.hits[1] <= report.hits[3] <= report.hits[10] <= 1.0
    assert report.mrr >= report.hits[1]
    assert report.wall_time_s >= 0.0
    for side in ("head", "tail"):
        sub = report.by_direction[side]
        assert sub["n"] == len(store.test)
        assert sub["hits"][1] <= sub["hits"][3] <= sub["hits"][10]


def test_evaluate_split_matches_brute_force_reference():
    store, model, feats = toy_setup(seed=31)
    filt = build_filter_index(store, ("train", "valid", "test"))
    report = evaluate_split(model, feats, store.test, filt)

    ranks = []
    for h, r, t in store.test:
        tq_scores = score_all(model, feats, Query("tail", h, r, gold=t))
        ranks.append(filtered_rank_scan(tq_scores, t, filt.tails_of(h, r) - {t}))
        hq_scores = score_all(model, feats, Query("head", t, r, gold=h))
        ranks.append(filtered_rank_scan(hq_scores, h, filt.heads_of(r, t) - {h}))
    assert report.mrr == mrr_naive(ranks)
    for k in (1, 3, 10):
        assert report.hits[k] == hits_naive(ranks, k)


def test_evaluate_rankings_equals_evaluate_split():
    store, model, feats = toy_setup(seed=37)
    filt = build_filter_index(store, ("train", "valid", "test"))
    results = rank_queries(model, feats, queries_for_split(store.test), filt)
    via_rankings = evaluate_rankings(results)
    via_split = evaluate_split(model, feats, store.test, filt)
    assert via_rankings.mrr == via_split.mrr
    assert via_rankings.hits == via_split.hits
    assert via_rankings.by_direction == via_split.by_direction


def test_report_json_roundtrip():
    store, model, feats = toy_setup()
    filt = build_filter_index(store, ("train", "valid", "test"))
    report = evaluate_split(model, feats, store.test, filt, config={"k": 20})
    blob = json.loads(report.to_json())
    assert blob["n_queries"] == report.n_queries
    assert blob["mrr"] == report.mrr
    assert blob["hits"]["10"] == report.hits[10]
    assert blob["config"] == {"k": 20}


def test_report_text_table():
    report = MetricsReport(n_queries=4, mrr=0.5,
                           hits={1: 0.25, 3: 0.5, 10: 1.0},
                           by_direction={
                               "head": {"n": 2, "mrr": 0.5, "hits": {1: 0.5, 3: 0.5, 10: 1.0}},
                               "tail": {"n": 2, "mrr": 0.5, "hits": {1: 0.0, 3: 0.5, 10: 1.0}},
                           },
                           wall_time_s=0.01)
    text = report.to_text()
    assert "MRR" in text and "Hits@10" in text
    assert "50.00" in text  # x100 rendering alongside fractions
    assert "head" in text and "tail" in text


def test_sweep_csv_shape():
    store, model, feats = toy_setup()
    filt = build_filter_index(store, ("train", "valid", "test"))
    r = evaluate_split(model, feats, store.test, filt)
    csv_text = sweep_to_csv([(10, r), (20, r)])
    lines = csv_text.strip().split("\n")
    assert lines[0] == "k,mrr,hits@1,hits@3,hits@10"
    assert len(lines) == 3
    first = lines[1].split(",")
    assert first[0] == "10"
    assert float(first[1]) == r.mrr

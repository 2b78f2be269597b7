"""Full-vocabulary scoring, filtered ranking, and top-k candidate lists.

All functions here run the model in evaluation mode (no gate noise, no
gradients). Fused entity tables are relation-dependent, so a small cache keyed
by relation id backs every multi-query entry point.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, no_grad
from .data import FilterIndex, Vocab
from .errors import MmkgcError, UsageError

DIRECTIONS = ("head", "tail")


@dataclass(frozen=True)
class Query:
    """One link-prediction query: predict the missing side of (h, r, t)."""
    direction: str          # which side is missing
    entity: int             # the known entity
    relation: int
    gold: int | None = None

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise UsageError(f"direction must be one of {DIRECTIONS}, got '{self.direction}'")


@dataclass
class RankingResult:
    query: Query
    scores: np.ndarray      # (|E|,)
    rank: float             # filtered rank of the gold
    ordering: np.ndarray    # entity ids by descending score, ties to lower id


@dataclass
class CandidateList:
    query: Query
    k: int
    entity_ids: list[int]
    scores: list[float]


class FusedCache:
    """Memoized per-relation fused entity tables for one frozen model."""

    def __init__(self, model, features):
        self.model = model
        self.features = features
        self._tables: dict[int, Tensor] = {}

    def table(self, relation: int) -> Tensor:
        if relation not in self._tables:
            # graph-free: cached tables would otherwise pin every forward
            # intermediate for the lifetime of the cache
            with no_grad():
                self._tables[relation] = self.model.fused_all_entities(
                    self.features, relation, training=False)
        return self._tables[relation]


def queries_for_split(triples) -> list[Query]:
    """Tail query then head query for every triple, in split order."""
    out = []
    for h, r, t in triples:
        out.append(Query("tail", entity=h, relation=r, gold=t))
        out.append(Query("head", entity=t, relation=r, gold=h))
    return out


def score_all(model, features, query: Query, cache: FusedCache | None = None) -> np.ndarray:
    """Scores of every entity as the missing side of the query."""
    if cache is None:
        cache = FusedCache(model, features)
    table = cache.table(query.relation)
    known = Tensor(table.data[query.entity:query.entity + 1])
    rel = np.array([query.relation])
    if query.direction == "tail":
        scores = model.scorer.score_against_tails(known, rel, table)
    else:
        scores = model.scorer.score_against_heads(known, rel, table)
    return scores.data[0].copy()


def _known_completions(query: Query, filt: FilterIndex) -> set[int]:
    if query.direction == "tail":
        return filt.tails_of(query.entity, query.relation)
    return filt.heads_of(query.relation, query.entity)


def filtered_rank(scores: np.ndarray, query: Query, filt: FilterIndex) -> float:
    """Average-tie rank of the gold among non-filtered competitors.

    Known completions other than the gold are removed; the gold always
    competes, whatever splits the index covers.
    """
    if query.gold is None:
        raise UsageError("filtered_rank needs a query with a gold entity")
    excluded = _known_completions(query, filt) - {query.gold}
    mask = np.ones(len(scores), dtype=bool)
    if excluded:
        mask[list(excluded)] = False
    if not mask[query.gold]:
        raise MmkgcError("internal: gold entity excluded from its own ranking")
    mask[query.gold] = False
    rivals = scores[mask]
    gold_score = scores[query.gold]
    greater = int((rivals > gold_score).sum())
    ties = int((rivals == gold_score).sum())
    return 1.0 + greater + 0.5 * ties


def top_k_candidates(scores: np.ndarray, query: Query, filt: FilterIndex, k: int,
                     exempt: int | None = None) -> CandidateList:
    """Highest-scoring k entities that do not complete a known triple.

    `exempt` spares one entity from the filter; fine-tune data generation uses
    it to keep the gold reachable when the gold triple is itself indexed.
    """
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    removed = _known_completions(query, filt)
    if exempt is not None:
        removed = removed - {exempt}
    ids: list[int] = []
    vals: list[float] = []
    for e in np.argsort(-scores, kind="stable"):
        e = int(e)
        if e in removed:
            continue
        ids.append(e)
        vals.append(float(scores[e]))
        if len(ids) == k:
            break
    return CandidateList(query=query, k=k, entity_ids=ids, scores=vals)


def rank_queries(model, features, queries, filt: FilterIndex) -> list[RankingResult]:
    """Score and rank a batch of gold-bearing queries with a shared cache."""
    cache = FusedCache(model, features)
    out = []
    for q in queries:
        scores = score_all(model, features, q, cache=cache)
        out.append(RankingResult(
            query=q,
            scores=scores,
            rank=filtered_rank(scores, q, filt),
            ordering=np.argsort(-scores, kind="stable"),
        ))
    return out


def candidate_lists(model, features, queries, filt: FilterIndex, k: int,
                    exempt_gold: bool = False) -> list[CandidateList]:
    """Top-k lists for a batch of queries with a shared cache."""
    cache = FusedCache(model, features)
    out = []
    for q in queries:
        scores = score_all(model, features, q, cache=cache)
        exempt = q.gold if exempt_gold else None
        out.append(top_k_candidates(scores, q, filt, k, exempt=exempt))
    return out


def write_candidates_jsonl(path: str, lists, vocab: Vocab) -> None:
    """One JSON object per query: labels resolved through the vocab."""
    with open(path, "w", encoding="utf-8") as fh:
        for cl in lists:
            q = cl.query
            row = {
                "direction": q.direction,
                "entity": vocab.id_to_entity[q.entity],
                "relation": vocab.id_to_relation[q.relation],
                "candidates": [
                    {"label": vocab.id_to_entity[e], "score": s}
                    for e, s in zip(cl.entity_ids, cl.scores)
                ],
            }
            if q.gold is not None:
                row["gold"] = vocab.id_to_entity[q.gold]
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")

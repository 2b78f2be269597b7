"""Answer parsing and rank merging for the generative predictor.

The LLM emits one entity name; ranking metrics need a full ordering. The
merge rule promotes the chosen candidate to rank 1 while every other entity
keeps its retriever-relative order, implemented as a score bump past the
current maximum followed by a recompute of the filtered rank. A parse
failure or transport failure leaves the retriever ranking untouched.
"""
from dataclasses import dataclass

import numpy as np

from ..data import Vocab
from ..errors import TransportError, UsageError
from ..retrieval import (CandidateList, FilterIndex, FusedCache, Query,
                         RankingResult, filtered_rank, score_all,
                         top_k_candidates)

from .client import LlmClient, LlmRequest, query_key
from .prompts import build_prompt


def _normalize(text: str) -> str:
    """Trim, strip trailing periods and surrounding quotes to a fixed point."""
    prev = None
    s = text
    while s != prev:
        prev = s
        s = s.strip().rstrip(".")
        if len(s) >= 2 and s[0] == s[-1] and s[0] in "'\"":
            s = s[1:-1]
    return s.casefold()


def parse_answer(text: str, candidates) -> int | None:
    """Index of the candidate the response names, or None.

    Exact match on normalized labels first (first candidate wins on
    duplicates), then a containment pass that takes the longest normalized
    label occurring inside the response, ties again to candidate order.
    """
    normalized = [_normalize(c) for c in candidates]
    response = _normalize(text)
    if not response:
        return None
    for i, label in enumerate(normalized):
        if label and label == response:
            return i
    best = None
    best_len = 0
    for i, label in enumerate(normalized):
        if label and label in response and len(label) > best_len:
            best, best_len = i, len(label)
    return best


def rerank_with_answer(ranking: RankingResult, candidates: CandidateList,
                       answer_index: int | None,
                       filt: FilterIndex) -> RankingResult:
    """Promote the answered candidate to the top of the ranking.

    answer_index indexes into `candidates`; None (parse failure) returns the
    input ranking unchanged. Promotion lifts the chosen entity above former
    ties as well: a single-answer predictor must be able to reach rank 1
    outright.
    """
    if answer_index is None:
        return ranking
    if not 0 <= answer_index < len(candidates.entity_ids):
        raise UsageError(
            f"answer index {answer_index} outside the "
            f"{len(candidates.entity_ids)}-candidate list")
    chosen = candidates.entity_ids[answer_index]
    scores = ranking.scores.copy()
    scores[chosen] = ranking.scores.max() + 1.0
    return RankingResult(
        query=ranking.query,
        scores=scores,
        rank=filtered_rank(scores, ranking.query, filt),
        ordering=np.argsort(-scores, kind="stable"),
    )


@dataclass
class PredictOutcome:
    query: Query
    result: RankingResult        # final ranking, reranked when answered
    retriever_rank: float
    candidates: CandidateList
    answer_index: int | None
    response_text: str | None    # None when transport failed
    fallback: bool               # transport failure, retriever ranking kept


@dataclass
class PredictStats:
    n_queries: int
    n_answered: int
    n_parse_failures: int
    n_fallbacks: int


def predict_queries(model, features, queries, eval_filt: FilterIndex,
                    cand_filt: FilterIndex, client: LlmClient, vocab: Vocab,
                    k: int = 20, max_tokens: int = 16,
                    temperature: float = 0.0):
    """Run retrieve -> prompt -> LLM -> rerank over a query batch.

    Ranks are filtered against eval_filt; candidate lists against cand_filt
    (train and valid splits at test time, so test golds stay reachable).
    Returns (outcomes, stats).
    """
    cache = FusedCache(model, features)
    outcomes: list[PredictOutcome] = []
    n_answered = n_parse_failures = n_fallbacks = 0
    for query in queries:
        scores = score_all(model, features, query, cache=cache)
        ranking = RankingResult(
            query=query, scores=scores,
            rank=filtered_rank(scores, query, eval_filt),
            ordering=np.argsort(-scores, kind="stable"))
        cands = top_k_candidates(scores, query, cand_filt, k)
        instance = build_prompt(query, cands, model, features, vocab)
        request = LlmRequest(
            prompt=instance.text,
            embeddings={name: [float(v) for v in vec]
                        for name, vec in instance.embeddings.items()},
            max_tokens=max_tokens, temperature=temperature)
        try:
            response = client.query(request, key=query_key(query, vocab))
        except TransportError:
            n_fallbacks += 1
            outcomes.append(PredictOutcome(
                query=query, result=ranking, retriever_rank=ranking.rank,
                candidates=cands, answer_index=None, response_text=None,
                fallback=True))
            continue
        index = parse_answer(response.text, instance.candidates)
        if index is None:
            n_parse_failures += 1
            result = ranking
        else:
            n_answered += 1
            result = rerank_with_answer(ranking, cands, index, eval_filt)
        outcomes.append(PredictOutcome(
            query=query, result=result, retriever_rank=ranking.rank,
            candidates=cands, answer_index=index,
            response_text=response.text, fallback=False))
    stats = PredictStats(n_queries=len(outcomes), n_answered=n_answered,
                         n_parse_failures=n_parse_failures,
                         n_fallbacks=n_fallbacks)
    return outcomes, stats


def recall_at_k(candidate_lists) -> float:
    """Fraction of queries whose gold made it into the candidate list."""
    lists = list(candidate_lists)
    if not lists:
        raise UsageError("recall over an empty candidate batch")
    for cl in lists:
        if cl.query.gold is None:
            raise UsageError("recall needs gold-bearing queries")
    return sum(1 for cl in lists if cl.query.gold in cl.entity_ids) / len(lists)

"""Filtered MRR / Hits@k aggregation and report rendering.

Aggregation runs in plain Python floats in query order so that results are
bit-reproducible and directly comparable against naive reference sums.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

from .data import FilterIndex
from .errors import UsageError
from .retrieval import queries_for_split, rank_queries

DEFAULT_KS = (1, 3, 10)


def mrr(ranks) -> float:
    """Mean reciprocal rank; ranks may be fractional under the tie policy."""
    ranks = list(ranks)
    if not ranks:
        raise UsageError("mrr of an empty rank list")
    return sum(1.0 / r for r in ranks) / len(ranks)


def hits_at_k(ranks, k: int) -> float:
    """Fraction of ranks <= k; a tie rank like 1.5 does not count for k=1."""
    ranks = list(ranks)
    if not ranks:
        raise UsageError("hits_at_k of an empty rank list")
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    return sum(1.0 for r in ranks if r <= k) / len(ranks)


@dataclass
class MetricsReport:
    n_queries: int
    mrr: float
    hits: dict[int, float]
    by_direction: dict[str, dict]
    wall_time_s: float
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        blob = {
            "n_queries": self.n_queries,
            "mrr": self.mrr,
            "hits": {str(k): v for k, v in self.hits.items()},
            "by_direction": {
                side: {"n": sub["n"], "mrr": sub["mrr"],
                       "hits": {str(k): v for k, v in sub["hits"].items()}}
                for side, sub in self.by_direction.items()
            },
            "wall_time_s": self.wall_time_s,
            "config": self.config,
        }
        return json.dumps(blob, indent=2)

    def to_text(self) -> str:
        ks = sorted(self.hits)
        header = ["split".ljust(8), "N".rjust(6), "MRR".rjust(8)]
        header += [f"Hits@{k}".rjust(8) for k in ks]
        lines = ["  ".join(header)]

        def row(name, n, m, hits):
            cells = [name.ljust(8), str(n).rjust(6), f"{m:.4f}".rjust(8)]
            cells += [f"{hits[k]:.4f}".rjust(8) for k in ks]
            return "  ".join(cells)

        lines.append(row("all", self.n_queries, self.mrr, self.hits))
        for side in sorted(self.by_direction):
            sub = self.by_direction[side]
            lines.append(row(side, sub["n"], sub["mrr"], sub["hits"]))
        x100 = ", ".join([f"MRR {self.mrr * 100:.2f}"] +
                         [f"Hits@{k} {self.hits[k] * 100:.2f}" for k in ks])
        lines.append(f"x100: {x100}")
        lines.append(f"wall time: {self.wall_time_s:.2f}s")
        return "\n".join(lines)


def _aggregate(all_ranks: list[float], ranks_by_direction: dict[str, list[float]],
               ks, wall_time_s: float, config: dict | None) -> MetricsReport:
    # overall metrics sum in query order: bit-reproducible and identical to a
    # reference evaluator walking the same queries
    by_direction = {}
    for side, ranks in ranks_by_direction.items():
        by_direction[side] = {
            "n": len(ranks),
            "mrr": mrr(ranks),
            "hits": {k: hits_at_k(ranks, k) for k in ks},
        }
    return MetricsReport(
        n_queries=len(all_ranks),
        mrr=mrr(all_ranks),
        hits={k: hits_at_k(all_ranks, k) for k in ks},
        by_direction=by_direction,
        wall_time_s=wall_time_s,
        config=dict(config or {}),
    )


def evaluate_rankings(results, ks=DEFAULT_KS, config: dict | None = None) -> MetricsReport:
    """Aggregate precomputed RankingResults (e.g. after answer reranking)."""
    start = time.perf_counter()
    all_ranks: list[float] = []
    ranks: dict[str, list[float]] = {}
    for res in results:
        all_ranks.append(res.rank)
        ranks.setdefault(res.query.direction, []).append(res.rank)
    if not ranks:
        raise UsageError("no rankings to evaluate")
    return _aggregate(all_ranks, ranks, ks, time.perf_counter() - start, config)


def evaluate_split(model, features, triples, filt: FilterIndex, ks=DEFAULT_KS,
                   config: dict | None = None) -> MetricsReport:
    """Rank both directions of every triple and aggregate filtered metrics."""
    start = time.perf_counter()
    if not triples:
        raise UsageError("no triples to evaluate")
    results = rank_queries(model, features, queries_for_split(triples), filt)
    all_ranks: list[float] = []
    ranks: dict[str, list[float]] = {}
    for res in results:
        all_ranks.append(res.rank)
        ranks.setdefault(res.query.direction, []).append(res.rank)
    return _aggregate(all_ranks, ranks, ks, time.perf_counter() - start, config)


def sweep_to_csv(rows) -> str:
    """CSV for candidate-size sweeps: (k, MetricsReport) pairs."""
    ks = DEFAULT_KS
    lines = ["k,mrr," + ",".join(f"hits@{k}" for k in ks)]
    for k, report in rows:
        cells = [str(k), repr(report.mrr)] + [repr(report.hits[kk]) for kk in ks]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"

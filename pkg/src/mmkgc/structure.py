"""Structural embedding pretraining: a plain trilinear model over the train
split, no modality fusion. The learned entity table becomes the structural
modality input for the retriever."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, gather_rows
from .data import TripleStore, build_filter_index
from .errors import ConfigError, DataError
from .evaluation import mrr
from .model import TuckerScorer
from .optim import Adam, clip_grad_norm
from .retrieval import Query, filtered_rank, queries_for_split
from .training import bce_loss, one_vs_all_labels


@dataclass
class StructureConfig:
    dim: int = 200
    lr: float = 0.001
    epochs: int = 200
    batch_size: int = 512
    label_smoothing: float = 0.0
    grad_clip: float = 5.0
    seed: int = 0
    patience: int = 10
    eval_every: int = 5

    def validate(self) -> None:
        for name in ("dim", "batch_size", "patience", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not (0.0 <= self.label_smoothing < 1.0):
            raise ConfigError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive, got {self.grad_clip}")


class StructureModel:
    """Entity table + trilinear scorer, trained directly on raw embeddings."""

    def __init__(self, n_entities: int, n_relations: int, dim: int, seed: int,
                 dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.entities = Tensor(rng.uniform(-0.05, 0.05, size=(n_entities, dim)).astype(dtype),
                               requires_grad=True)
        self.scorer = TuckerScorer(dim, n_relations, rng, dtype)

    def load_arrays(self, entities: np.ndarray, relations: np.ndarray,
                    core: np.ndarray) -> None:
        self.entities.data = np.asarray(entities, dtype=self.entities.data.dtype).copy()
        self.scorer.relations.data = np.asarray(relations, dtype=self.entities.data.dtype).copy()
        self.scorer.core.data = np.asarray(core, dtype=self.entities.data.dtype).copy()

    def parameters(self) -> dict[str, Tensor]:
        out = {"entities": self.entities}
        out.update(self.scorer.parameters("scorer"))
        return out

    def score_all(self, query: Query) -> np.ndarray:
        """Scores of every entity as the missing side of the query."""
        known = Tensor(self.entities.data[query.entity:query.entity + 1])
        rel = np.array([query.relation])
        if query.direction == "tail":
            s = self.scorer.score_against_tails(known, rel, self.entities)
        else:
            s = self.scorer.score_against_heads(known, rel, self.entities)
        return s.data[0].copy()


@dataclass
class StructureResult:
    matrix: np.ndarray          # |E| x d_s, float32
    relations: np.ndarray
    core: np.ndarray
    losses: list[float]
    epochs_run: int
    diverged: bool
    best_valid_mrr: float | None


def _snapshot(model: StructureModel) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in model.parameters().items()}


def _valid_mrr(model: StructureModel, store: TripleStore, filt) -> float:
    ranks = [filtered_rank(model.score_all(q), q, filt)
             for q in queries_for_split(store.valid)]
    return mrr(ranks)


def train_structure_embeddings(store: TripleStore, n_entities: int,
                               n_relations: int, config: StructureConfig) -> StructureResult:
    """One-vs-all BCE training of the trilinear model on the train split.

    Zero epochs returns the seeded initialization. A non-finite epoch loss
    aborts: the parameters roll back to the last finite epoch and the result
    is flagged diverged instead of raising.
    """
    config.validate()
    if not store.train:
        raise DataError("structure pretraining needs a non-empty train split")
    model = StructureModel(n_entities, n_relations, config.dim, config.seed)
    filt = build_filter_index(store, ("train",))
    filt_valid = build_filter_index(store, ("train", "valid")) if store.valid else None
    opt = Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)

    losses: list[float] = []
    diverged = False
    best_mrr: float | None = None
    evals_since_best = 0
    good = _snapshot(model)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(store.train))
        epoch_total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [store.train[i] for i in order[start:start + config.batch_size]]
            rels = np.array([r for _, r, _ in batch], dtype=np.int64)
            heads = np.array([h for h, _, _ in batch], dtype=np.int64)
            tails = np.array([t for _, _, t in batch], dtype=np.int64)
            scores_t = model.scorer.score_against_tails(
                gather_rows(model.entities, heads), rels, model.entities)
            scores_h = model.scorer.score_against_heads(
                gather_rows(model.entities, tails), rels, model.entities)
            y_t = one_vs_all_labels(batch, filt, n_entities, "tail", config.label_smoothing)
            y_h = one_vs_all_labels(batch, filt, n_entities, "head", config.label_smoothing)
            loss = bce_loss(scores_t, y_t) + bce_loss(scores_h, y_h)
            value = float(loss.data)
            if not np.isfinite(value):
                diverged = True
                break
            loss.backward()
            clip_grad_norm(model.parameters(), config.grad_clip)
            opt.step()
            opt.zero_grad()
            epoch_total += value
        if diverged:
            for k, v in model.parameters().items():
                v.data = good[k]
            break
        losses.append(epoch_total)
        good = _snapshot(model)
        if filt_valid is not None and epoch % config.eval_every == 0:
            m = _valid_mrr(model, store, filt_valid)
            if best_mrr is None or m > best_mrr:
                best_mrr, evals_since_best = m, 0
            else:
                evals_since_best += 1
            if evals_since_best >= config.patience:
                break
    return StructureResult(
        matrix=model.entities.data.astype(np.float32),
        relations=model.scorer.relations.data.astype(np.float32),
        core=model.scorer.core.data.astype(np.float32),
        losses=losses,
        epochs_run=len(losses),
        diverged=diverged,
        best_valid_mrr=best_mrr,
    )

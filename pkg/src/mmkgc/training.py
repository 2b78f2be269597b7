"""Retriever training: binary cross-entropy objective, negative sampling,
epoch loop, checkpoints, and a validation-driven fit loop.

Default objective is one-vs-all: each (h, r) query scores every entity with a
multi-label target marking all tails known in the training split (and the
symmetric head direction). Sampled mode scores 1 positive + N corruptions per
triple instead.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, gather_rows
from .data import FilterIndex, TripleStore, build_filter_index
from .errors import CheckpointError, ConfigError, DataError, OptimError, ShapeError
from .evaluation import evaluate_split
from .model import ModelConfig, RetrieverModel
from .optim import Adam, clip_grad_norm

MODES = ("one-vs-all", "sampled")
CHECKPOINT_FORMAT = "mmkgc-checkpoint"


@dataclass
class TrainConfig:
    dim: int = 200
    batch_size: int = 512
    lr: float = 0.001
    epochs: int = 100
    kappa: int = 2
    n_neg: int = 32
    mode: str = "one-vs-all"
    label_smoothing: float = 0.0
    seed: int = 0
    patience: int = 10        # evaluations without improvement before stopping
    eval_every: int = 5       # epochs between validation evaluations
    grad_clip: float = 5.0

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got '{self.mode}'")
        for name in ("dim", "batch_size", "epochs", "kappa", "n_neg",
                     "patience", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not (0.0 <= self.label_smoothing < 1.0):
            raise ConfigError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive, got {self.grad_clip}")


@dataclass
class TrainResult:
    epochs_run: int
    losses: list[float]
    best_valid_mrr: float | None
    best_epoch: int | None
    checkpoint_prefix: str
    stopped_early: bool


def bce_loss(scores: Tensor, labels: np.ndarray) -> Tensor:
    """Sum (not mean) of -[y log sigma(s) + (1-y) log(1 - sigma(s))].

    Computed as y*softplus(-s) + (1-y)*softplus(s), which is the same
    quantity without intermediate probabilities, so large |s| stays finite.
    """
    labels = np.asarray(labels, dtype=scores.data.dtype)
    if labels.shape != scores.shape:
        raise ShapeError(f"labels shape {labels.shape} != scores shape {scores.shape}")
    y = Tensor(labels)
    pos = y * (scores * -1.0).softplus()
    neg = (y * -1.0 + 1.0) * scores.softplus()
    return (pos + neg).sum()


def sample_negatives(positive, n_entities: int, filt: FilterIndex, n_neg: int,
                     rng: np.random.Generator, max_attempts: int = 100):
    """Corrupt head or tail (fair coin) with uniform entity draws.

    Corruptions that form a known training triple are rejected and redrawn so
    the negatives carry no false-negative label noise. A KG so dense that a
    corruption slot cannot be filled raises after `max_attempts` redraws.
    """
    if n_neg < 1:
        raise ConfigError(f"n_neg must be >= 1, got {n_neg}")
    h, r, t = positive
    out = []
    for _ in range(n_neg):
        for attempt in range(max_attempts):
            corrupt_tail = bool(rng.integers(0, 2))
            e = int(rng.integers(0, n_entities))
            cand = (h, r, e) if corrupt_tail else (e, r, t)
            if not filt.contains(*cand):
                out.append(cand)
                break
        else:
            raise DataError(
                f"could not sample a negative for {positive} after {max_attempts} "
                "attempts; every corruption is a known training triple")
    return out


def one_vs_all_labels(triples, filt: FilterIndex, n_entities: int,
                       direction: str, smoothing: float) -> np.ndarray:
    y = np.zeros((len(triples), n_entities), dtype=np.float32)
    for i, (h, r, t) in enumerate(triples):
        known = filt.tails_of(h, r) if direction == "tail" else filt.heads_of(r, t)
        y[i, list(known)] = 1.0
    if smoothing:
        y = (1.0 - smoothing) * y + smoothing / n_entities
    return y


def _batch_loss_one_vs_all(model, features, batch, filt, config, rng) -> Tensor:
    by_rel: dict[int, list] = {}
    for trip in batch:
        by_rel.setdefault(trip[1], []).append(trip)
    total = None
    for rel in sorted(by_rel):
        group = by_rel[rel]
        table = model.fused_all_entities(features, rel, training=True, rng=rng)
        rels = np.full(len(group), rel, dtype=np.int64)
        heads = np.array([h for h, _, _ in group], dtype=np.int64)
        tails = np.array([t for _, _, t in group], dtype=np.int64)
        scores_t = model.scorer.score_against_tails(gather_rows(table, heads), rels, table)
        scores_h = model.scorer.score_against_heads(gather_rows(table, tails), rels, table)
        y_t = one_vs_all_labels(group, filt, model.n_entities, "tail", config.label_smoothing)
        y_h = one_vs_all_labels(group, filt, model.n_entities, "head", config.label_smoothing)
        loss = bce_loss(scores_t, y_t) + bce_loss(scores_h, y_h)
        total = loss if total is None else total + loss
    return total


def _batch_loss_sampled(model, features, batch, filt, config, rng) -> Tensor:
    rows = []
    labels = []
    pos_label = 1.0 - config.label_smoothing
    neg_label = config.label_smoothing
    for trip in batch:
        rows.append(trip)
        labels.append(pos_label)
        for neg in sample_negatives(trip, model.n_entities, filt, config.n_neg, rng):
            rows.append(neg)
            labels.append(neg_label)
    heads = np.array([h for h, _, _ in rows], dtype=np.int64)
    rels = np.array([r for _, r, _ in rows], dtype=np.int64)
    tails = np.array([t for _, _, t in rows], dtype=np.int64)
    h_emb = model.fused_batch(features, heads, rels, training=True, rng=rng)
    t_emb = model.fused_batch(features, tails, rels, training=True, rng=rng)
    scores = model.scorer.score_pairs(h_emb, rels, t_emb)
    return bce_loss(scores, np.array(labels, dtype=np.float32))


def train_epoch(model: RetrieverModel, features, store: TripleStore,
                filt: FilterIndex, config: TrainConfig, opt: Adam,
                rng: np.random.Generator) -> float:
    """One shuffled pass over the training triples; returns the summed loss."""
    config.validate()
    order = rng.permutation(len(store.train))
    epoch_loss = 0.0
    for start in range(0, len(order), config.batch_size):
        batch = [store.train[i] for i in order[start:start + config.batch_size]]
        if config.mode == "one-vs-all":
            loss = _batch_loss_one_vs_all(model, features, batch, filt, config, rng)
        else:
            loss = _batch_loss_sampled(model, features, batch, filt, config, rng)
        value = float(loss.data)
        if not np.isfinite(value):
            loss.backward()
            grads = [np.max(np.abs(p.grad)) for p in model.parameters().values()
                     if p.grad is not None]
            worst = max(grads) if grads else float("nan")
            raise OptimError(
                f"non-finite loss {value} in batch starting at triple {start} "
                f"(first triple {batch[0]}); max |grad| = {worst}")
        loss.backward()
        clip_grad_norm(model.parameters(), config.grad_clip)
        opt.step()
        opt.zero_grad()
        epoch_loss += value
    return epoch_loss


def epoch_loss(model: RetrieverModel, features, store: TripleStore,
               filt: FilterIndex, config: TrainConfig,
               rng: np.random.Generator) -> float:
    """Loss of one unshuffled pass with no parameter updates.

    Reseeding `rng` identically across calls makes the value deterministic in
    sampled mode (same corruptions, same gate noise), which gives training
    curves a comparable probe.
    """
    total = 0.0
    for start in range(0, len(store.train), config.batch_size):
        batch = store.train[start:start + config.batch_size]
        if config.mode == "one-vs-all":
            loss = _batch_loss_one_vs_all(model, features, batch, filt, config, rng)
        else:
            loss = _batch_loss_sampled(model, features, batch, filt, config, rng)
        total += float(loss.data)
    return total


def save_checkpoint(model: RetrieverModel, prefix: str, extra: dict | None = None) -> None:
    """Write `<prefix>.manifest.json` + `<prefix>.params.bin` (f32 LE blob)."""
    params = model.parameters()
    entries = []
    chunks = []
    offset = 0
    for name in sorted(params):
        data = np.ascontiguousarray(params[name].data, dtype="<f4")
        raw = data.tobytes()
        entries.append({"name": name, "shape": list(data.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "model": {
            "dim": model.config.dim, "n_simple": model.config.n_simple,
            "n_phm": model.config.n_phm, "phm_blocks": model.config.phm_blocks,
            "kappa": model.config.kappa, "tau": model.config.tau,
            "whiten_eps": model.config.whiten_eps,
            "renormalize_topk": model.config.renormalize_topk,
            "gate_noise": model.config.gate_noise,
            "trainable_structural": model.config.trainable_structural,
        },
        "n_entities": model.n_entities,
        "n_relations": model.n_relations,
        "modal_dims": model.modal_dims,
        "params": entries,
        "extra": extra or {},
    }
    os.makedirs(os.path.dirname(prefix) or ".", exist_ok=True)
    with open(prefix + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    with open(prefix + ".params.bin", "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(prefix: str):
    """Rebuild the model from a checkpoint pair; returns (model, manifest)."""
    try:
        with open(prefix + ".manifest.json", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"missing checkpoint manifest {prefix}.manifest.json")
    except json.JSONDecodeError as e:
        raise CheckpointError(f"unreadable checkpoint manifest: {e}")
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"not a checkpoint manifest: {prefix}.manifest.json")
    try:
        blob = open(prefix + ".params.bin", "rb").read()
    except FileNotFoundError:
        raise CheckpointError(f"missing checkpoint blob {prefix}.params.bin")

    config = ModelConfig(**manifest["model"])
    modal_dims = {k: int(v) for k, v in manifest["modal_dims"].items()}
    structural = None
    if config.trainable_structural:
        structural = np.zeros((manifest["n_entities"], modal_dims["structural"]),
                              dtype=np.float32)
    model = RetrieverModel(config, manifest["n_entities"], manifest["n_relations"],
                           modal_dims, seed=0, structural_matrix=structural)
    params = model.parameters()

    names = [e["name"] for e in manifest["params"]]
    if sorted(names) != sorted(params) or len(names) != len(set(names)):
        missing = sorted(set(params) - set(names))
        extra = sorted(set(names) - set(params))
        raise CheckpointError(
            f"checkpoint parameters do not match the model: missing {missing}, "
            f"unexpected {extra}")
    end = 0
    for entry in manifest["params"]:
        if entry["offset"] != end:
            raise CheckpointError(f"manifest offsets not contiguous at '{entry['name']}'")
        end += entry["nbytes"]
    if end != len(blob):
        raise CheckpointError(
            f"checkpoint blob length {len(blob)} does not match manifest total {end}")

    for entry in manifest["params"]:
        target = params[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != target.data.shape:
            raise CheckpointError(
                f"checkpoint tensor '{entry['name']}' has shape {shape} but the "
                f"model expects {target.data.shape}")
        raw = blob[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
        target.data = arr.astype(target.data.dtype).copy()
    return model, manifest


def fit(model: RetrieverModel, features, store: TripleStore, config: TrainConfig,
        out_dir: str) -> TrainResult:
    """Train with periodic filtered-MRR validation and patience-based stopping.

    Writes `train_log.jsonl` (one object per epoch) and keeps the best
    checkpoint at `<out_dir>/model`. With an empty validation split the loop
    runs all epochs and checkpoints the final model.
    """
    config.validate()
    os.makedirs(out_dir, exist_ok=True)
    prefix = os.path.join(out_dir, "model")
    filt_train = build_filter_index(store, ("train",))
    filt_valid = build_filter_index(store, ("train", "valid")) if store.valid else None
    opt = Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)

    losses: list[float] = []
    best_mrr: float | None = None
    best_epoch: int | None = None
    evals_since_best = 0
    stopped_early = False
    with open(os.path.join(out_dir, "train_log.jsonl"), "w", encoding="utf-8") as log:
        for epoch in range(1, config.epochs + 1):
            start = time.perf_counter()
            loss = train_epoch(model, features, store, filt_train, config, opt, rng)
            losses.append(loss)
            row = {"epoch": epoch, "loss": loss,
                   "seconds": round(time.perf_counter() - start, 3)}
            if filt_valid is not None and epoch % config.eval_every == 0:
                report = evaluate_split(model, features, store.valid, filt_valid)
                row["valid_mrr"] = report.mrr
                if best_mrr is None or report.mrr > best_mrr:
                    best_mrr, best_epoch, evals_since_best = report.mrr, epoch, 0
                    save_checkpoint(model, prefix,
                                    extra={"epoch": epoch, "valid_mrr": report.mrr})
                else:
                    evals_since_best += 1
                if evals_since_best >= config.patience:
                    stopped_early = True
            log.write(json.dumps(row) + "\n")
            if stopped_early:
                break
    if best_epoch is None:
        save_checkpoint(model, prefix, extra={"epoch": len(losses), "valid_mrr": None})
    return TrainResult(epochs_run=len(losses), losses=losses,
                       best_valid_mrr=best_mrr, best_epoch=best_epoch,
                       checkpoint_prefix=prefix, stopped_early=stopped_early)

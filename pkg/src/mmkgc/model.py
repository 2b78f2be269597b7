"""Retriever network: per-modality expert mixtures, relation-gated fusion, trilinear scoring.

Every component takes batched rows (B, d). Thin single-vector wrappers at the
bottom of the module mirror the mathematical one-example formulation and are
what most unit tests drive.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat, gather_rows, mode_n_product, softmax
from .errors import ConfigError, UsageError

MODALITY_ORDER = ("visual", "textual", "structural")


@dataclass
class ModelConfig:
    dim: int = 200
    n_simple: int = 2
    n_phm: int = 2
    phm_blocks: int = 2
    kappa: int = 2
    tau: float = 1.0
    whiten_eps: float = 1e-5
    renormalize_topk: bool = False
    gate_noise: bool = True
    trainable_structural: bool = False

    @property
    def n_experts(self) -> int:
        return self.n_simple + self.n_phm

    def validate(self) -> None:
        if self.dim < 1:
            raise ConfigError(f"dim must be positive, got {self.dim}")
        if self.n_experts < 1:
            raise ConfigError("at least one expert required")
        if not (1 <= self.kappa <= self.n_experts):
            raise ConfigError(f"kappa must be in 1..{self.n_experts}, got {self.kappa}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.phm_blocks < 1:
            raise ConfigError(f"phm_blocks must be positive, got {self.phm_blocks}")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class NoisyTopKGate:
    """Soft router over K experts with optional training-time noise.

    Weights are softmax(logits / tau) over all K experts; in training mode the
    logits get a perturbation eps * softplus(x W_noise) with eps ~ N(0,1) per
    example and expert, dropped at evaluation for deterministic routing.
    """

    def __init__(self, d_in: int, n_experts: int, kappa: int, tau: float,
                 rng: np.random.Generator, dtype, noise: bool = True):
        if tau <= 0:
            raise ConfigError(f"tau must be positive, got {tau}")
        if not (1 <= kappa <= n_experts):
            raise ConfigError(f"kappa must be in 1..{n_experts}, got {kappa}")
        self.kappa = kappa
        self.tau = float(tau)
        self.noise = noise
        self.w_gate = Tensor(np.zeros((d_in, n_experts), dtype=dtype), requires_grad=True)
        self.w_noise = Tensor(np.zeros((d_in, n_experts), dtype=dtype), requires_grad=True)

    def weights_batch(self, x: Tensor, training: bool, rng: np.random.Generator | None):
        """Returns (weights (B,K) Tensor, selection mask (B,K) ndarray)."""
        logits = x @ self.w_gate
        if training and self.noise:
            if rng is None:
                raise UsageError("training-mode gating draws noise and needs an rng")
            eps = Tensor(rng.standard_normal(logits.shape).astype(x.data.dtype))
            logits = logits + eps * (x @ self.w_noise).softplus()
        weights = softmax(logits * (1.0 / self.tau), axis=1)
        order = np.argsort(-weights.data, axis=1, kind="stable")
        top = order[:, :self.kappa]
        mask = np.zeros_like(weights.data)
        np.put_along_axis(mask, top, 1.0, axis=1)
        return weights, mask

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w_gate": self.w_gate, f"{prefix}.w_noise": self.w_noise}


class LinearWhitenExpert:
    """Affine map followed by per-vector standardization (mean 0, std 1)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype,
                 eps: float = 1e-5):
        self.d_out = d_out
        self.eps = eps
        self.w = Tensor(_glorot(rng, d_in, d_out, (d_in, d_out), dtype), requires_grad=True)
        self.b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        y = x @ self.w + self.b
        mu = y.mean(axis=1, keepdims=True)
        centered = y - mu
        var = (centered * centered).mean(axis=1, keepdims=True)
        # eps^2 inside the sqrt keeps the gradient finite for constant rows
        std = (var + self.eps * self.eps).sqrt()
        return centered / (std + self.eps)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class BlockHypercomplexExpert:
    """Blockwise linear map: input split into n contiguous blocks, block j
    transformed by H_j @ W_block, outputs concatenated."""

    def __init__(self, d_in: int, d_out: int, n_blocks: int, rng: np.random.Generator, dtype):
        if d_in % n_blocks != 0:
            raise ConfigError(f"n_blocks={n_blocks} must divide d_in={d_in}")
        if d_out % n_blocks != 0:
            raise ConfigError(f"n_blocks={n_blocks} must divide d_out={d_out}")
        self.n_blocks = n_blocks
        self.d_in = d_in
        self.d_out = d_out
        din_b, dout_b = d_in // n_blocks, d_out // n_blocks
        self.w_block = Tensor(_glorot(rng, din_b, dout_b, (dout_b, din_b), dtype),
                              requires_grad=True)
        self.h_mats = [Tensor(_glorot(rng, dout_b, dout_b, (dout_b, dout_b), dtype),
                              requires_grad=True)
                       for _ in range(n_blocks)]

    def forward(self, x: Tensor) -> Tensor:
        n = self.n_blocks
        batch = x.shape[0]
        din_b = self.d_in // n
        blocks = x.reshape(batch, n, din_b).transpose(1, 0, 2)
        pieces = []
        for j in range(n):
            xj = gather_rows(blocks, np.array([j])).reshape(batch, din_b)
            yj = xj @ self.w_block.transpose(1, 0)
            pieces.append(yj @ self.h_mats[j].transpose(1, 0))
        return concat(pieces, axis=1)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.w_block": self.w_block}
        for j, h in enumerate(self.h_mats):
            out[f"{prefix}.h{j}"] = h
        return out


class ExpertMixture:
    """Top-kappa gated sum of heterogeneous experts for one modality.

    Selected weights are taken from the full-K softmax as-is; renormalizing
    over the selected set is available behind a flag and off by default.
    """

    def __init__(self, d_in: int, d_out: int, experts: list, kappa: int, tau: float,
                 rng: np.random.Generator, dtype, renormalize: bool = False,
                 gate_noise: bool = True):
        for e in experts:
            if e.d_out != d_out:
                raise ConfigError(f"expert output dim {e.d_out} != mixture dim {d_out}")
        self.experts = experts
        self.renormalize = renormalize
        self.gate = NoisyTopKGate(d_in, len(experts), kappa, tau, rng, dtype, noise=gate_noise)

    @classmethod
    def build(cls, d_in: int, d_out: int, config: ModelConfig,
              rng: np.random.Generator, dtype) -> "ExpertMixture":
        experts: list = []
        for _ in range(config.n_simple):
            experts.append(LinearWhitenExpert(d_in, d_out, rng, dtype, eps=config.whiten_eps))
        for _ in range(config.n_phm):
            experts.append(BlockHypercomplexExpert(d_in, d_out, config.phm_blocks, rng, dtype))
        return cls(d_in, d_out, experts, config.kappa, config.tau, rng, dtype,
                   renormalize=config.renormalize_topk, gate_noise=config.gate_noise)

    def forward(self, x: Tensor, training: bool, rng: np.random.Generator | None = None) -> Tensor:
        weights, mask = self.gate.weights_batch(x, training, rng)
        kept = weights * Tensor(mask)
        if self.renormalize:
            kept = kept / kept.sum(axis=1, keepdims=True)
        batch = x.shape[0]
        outs = [e.forward(x).reshape(batch, 1, -1) for e in self.experts]
        stacked = concat(outs, axis=1)
        return (stacked * kept.reshape(batch, len(self.experts), 1)).sum(axis=1)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out = self.gate.parameters(f"{prefix}.gate")
        for k, e in enumerate(self.experts):
            out.update(e.parameters(f"{prefix}.expert{k}"))
        return out


class RelationGatedFusion:
    """Project each modality, then mix them with a per-dimension softmax gate
    whose logits are scaled by a learned per-relation scalar."""

    def __init__(self, dim: int, n_relations: int, modalities, rng: np.random.Generator, dtype):
        self.dim = dim
        self.n_relations = n_relations
        self.modalities = tuple(modalities)
        m = len(self.modalities)
        self.proj_w = {mod: Tensor(_glorot(rng, dim, dim, (dim, dim), dtype), requires_grad=True)
                       for mod in self.modalities}
        self.proj_b = {mod: Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
                       for mod in self.modalities}
        self.gate_w = Tensor(_glorot(rng, m * dim, m * dim, (m * dim, m * dim), dtype),
                             requires_grad=True)
        self.gate_b = Tensor(np.zeros(m * dim, dtype=dtype), requires_grad=True)
        self.relation_scale = Tensor(np.ones(n_relations, dtype=dtype), requires_grad=True)

    def _check_relations(self, rel_ids: np.ndarray) -> None:
        if rel_ids.size and (rel_ids.min() < 0 or rel_ids.max() >= self.n_relations):
            bad = rel_ids[(rel_ids < 0) | (rel_ids >= self.n_relations)][0]
            raise UsageError(f"relation id {bad} out of range 0..{self.n_relations - 1}")

    def project(self, x: Tensor, modality: str) -> Tensor:
        if modality not in self.proj_w:
            raise UsageError(f"unknown modality '{modality}'")
        return (x @ self.proj_w[modality] + self.proj_b[modality]).tanh()

    def gate_batch(self, projected: list[Tensor], rel_ids: np.ndarray | None) -> Tensor:
        """(B, M, d) gate, softmax over the modality axis per dimension."""
        batch = projected[0].shape[0]
        m = len(self.modalities)
        logits = concat(projected, axis=1) @ self.gate_w + self.gate_b
        if rel_ids is not None:
            rel_ids = np.asarray(rel_ids, dtype=np.int64)
            self._check_relations(rel_ids)
            scale = gather_rows(self.relation_scale.reshape(self.n_relations, 1), rel_ids)
            logits = logits * scale
        return softmax(logits.reshape(batch, m, self.dim), axis=1)

    def fuse_batch(self, projected: list[Tensor], z: Tensor) -> Tensor:
        batch = projected[0].shape[0]
        stacked = concat([h.reshape(batch, 1, self.dim) for h in projected], axis=1)
        return (stacked * z).sum(axis=1)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for mod in self.modalities:
            out[f"{prefix}.proj.{mod}.w"] = self.proj_w[mod]
            out[f"{prefix}.proj.{mod}.b"] = self.proj_b[mod]
        out[f"{prefix}.gate.w"] = self.gate_w
        out[f"{prefix}.gate.b"] = self.gate_b
        out[f"{prefix}.relation_scale"] = self.relation_scale
        return out


class TuckerScorer:
    """Trilinear score: core tensor contracted with head, relation, and tail."""

    def __init__(self, dim: int, n_relations: int, rng: np.random.Generator, dtype):
        self.dim = dim
        self.n_relations = n_relations
        self.core = Tensor(rng.uniform(-0.1, 0.1, size=(dim, dim, dim)).astype(dtype),
                           requires_grad=True)
        self.relations = Tensor(rng.uniform(-0.05, 0.05, size=(n_relations, dim)).astype(dtype),
                                requires_grad=True)

    def _rel_vectors(self, rel_ids: np.ndarray) -> Tensor:
        rel_ids = np.asarray(rel_ids, dtype=np.int64)
        if rel_ids.size and (rel_ids.min() < 0 or rel_ids.max() >= self.n_relations):
            raise UsageError(f"relation id out of range 0..{self.n_relations - 1}")
        return gather_rows(self.relations, rel_ids)

    def _head_side(self, h: Tensor, rel_ids: np.ndarray) -> Tensor:
        """v[b, k] = sum_ij core[i,j,k] h[b,i] r[b,j]."""
        batch = h.shape[0]
        r = self._rel_vectors(rel_ids)
        hw = (h @ self.core.reshape(self.dim, self.dim * self.dim)).reshape(batch, self.dim, self.dim)
        return (hw * r.reshape(batch, self.dim, 1)).sum(axis=1)

    def _tail_side(self, t: Tensor, rel_ids: np.ndarray) -> Tensor:
        """u[b, i] = sum_jk core[i,j,k] r[b,j] t[b,k]."""
        batch = t.shape[0]
        r = self._rel_vectors(rel_ids)
        core_by_j = self.core.transpose(1, 0, 2).reshape(self.dim, self.dim * self.dim)
        rw = (r @ core_by_j).reshape(batch, self.dim, self.dim)
        return (rw * t.reshape(batch, 1, self.dim)).sum(axis=2)

    def score_pairs(self, h: Tensor, rel_ids: np.ndarray, t: Tensor) -> Tensor:
        """(B,) scores for aligned head/tail batches."""
        return (self._head_side(h, rel_ids) * t).sum(axis=1)

    def score_against_tails(self, h: Tensor, rel_ids: np.ndarray, tails: Tensor) -> Tensor:
        """(B, E): every row of `tails` as tail candidate."""
        return self._head_side(h, rel_ids) @ tails.transpose(1, 0)

    def score_against_heads(self, t: Tensor, rel_ids: np.ndarray, heads: Tensor) -> Tensor:
        """(B, E): every row of `heads` as head candidate."""
        return self._tail_side(t, rel_ids) @ heads.transpose(1, 0)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.core": self.core, f"{prefix}.relations": self.relations}


class RetrieverModel:
    """Full retriever: modality mixtures -> relation-gated fusion -> scorer."""

    def __init__(self, config: ModelConfig, n_entities: int, n_relations: int,
                 modal_dims: dict[str, int], seed: int = 0, dtype=np.float32,
                 structural_matrix: np.ndarray | None = None):
        config.validate()
        missing = [m for m in MODALITY_ORDER if m not in modal_dims]
        if missing:
            raise ConfigError(f"modal_dims missing {missing}")
        self.config = config
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.modal_dims = dict(modal_dims)
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.mixtures = {m: ExpertMixture.build(modal_dims[m], config.dim, config, rng, dtype)
                         for m in MODALITY_ORDER}
        self.fusion = RelationGatedFusion(config.dim, n_relations, MODALITY_ORDER, rng, dtype)
        self.scorer = TuckerScorer(config.dim, n_relations, rng, dtype)
        self.structural_param: Tensor | None = None
        if config.trainable_structural:
            if structural_matrix is None:
                raise ConfigError("trainable_structural needs an initial structural matrix")
            self.structural_param = Tensor(np.asarray(structural_matrix, dtype=dtype).copy(),
                                           requires_grad=True)

    def _feature_tensor(self, features, modality: str) -> Tensor:
        if modality == "structural" and self.structural_param is not None:
            return self.structural_param
        raw = features[modality]
        matrix = getattr(raw, "matrix", raw)
        return Tensor(np.asarray(matrix, dtype=self.dtype))

    def fused_batch(self, features, entity_ids: np.ndarray, rel_ids: np.ndarray | None,
                    training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Fused embeddings (B, d) for entities under the given query relations.

        rel_ids None produces relation-neutral fusion (unit gate scale), used
        by the embedding export.
        """
        entity_ids = np.asarray(entity_ids, dtype=np.int64)
        projected = []
        for m in MODALITY_ORDER:
            x = gather_rows(self._feature_tensor(features, m), entity_ids)
            enriched = self.mixtures[m].forward(x, training, rng)
            projected.append(self.fusion.project(enriched, m))
        z = self.fusion.gate_batch(projected, rel_ids)
        return self.fusion.fuse_batch(projected, z)

    def fused_all_entities(self, features, rel_id: int,
                           training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """(|E|, d) fused table under one relation; the per-relation cache unit."""
        ids = np.arange(self.n_entities, dtype=np.int64)
        rels = np.full(self.n_entities, rel_id, dtype=np.int64)
        return self.fused_batch(features, ids, rels, training, rng)

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for m in MODALITY_ORDER:
            out.update(self.mixtures[m].parameters(f"mixture.{m}"))
        out.update(self.fusion.parameters("fusion"))
        out.update(self.scorer.parameters("scorer"))
        if self.structural_param is not None:
            out["structural.features"] = self.structural_param
        return out


# --- single-example wrappers ---------------------------------------------------


def gate_weights(gate: NoisyTopKGate, x: np.ndarray, training: bool,
                 rng: np.random.Generator | None = None):
    """Weights over all K experts plus the top-kappa selection (ties: lower index)."""
    w, mask = gate.weights_batch(Tensor(np.asarray(x)[None, :]), training, rng)
    weights = w.data[0]
    order = np.argsort(-weights, kind="stable")
    return weights, [int(i) for i in order[:gate.kappa]]


def simple_expert_forward(expert: LinearWhitenExpert, x: np.ndarray) -> np.ndarray:
    return expert.forward(Tensor(np.asarray(x)[None, :])).data[0]


def phm_expert_forward(expert: BlockHypercomplexExpert, x: np.ndarray) -> np.ndarray:
    return expert.forward(Tensor(np.asarray(x)[None, :])).data[0]


def mixture_forward(mixture: ExpertMixture, x: np.ndarray, training: bool,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    return mixture.forward(Tensor(np.asarray(x)[None, :]), training, rng).data[0]


def fusion_project(fusion: RelationGatedFusion, x: np.ndarray, modality: str) -> np.ndarray:
    return fusion.project(Tensor(np.asarray(x)[None, :]), modality).data[0]


def fusion_gate(fusion: RelationGatedFusion, projected: list[np.ndarray], relation: int) -> np.ndarray:
    tensors = [Tensor(np.asarray(h)[None, :]) for h in projected]
    return fusion.gate_batch(tensors, np.array([relation])).data[0]


def fuse_projected(projected: list[np.ndarray], z: np.ndarray) -> np.ndarray:
    stacked = np.stack([np.asarray(h) for h in projected])
    return (np.asarray(z) * stacked).sum(axis=0)


def fused_entity_embedding(model: RetrieverModel, features, entity: int, relation: int,
                           training: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
    return model.fused_batch(features, np.array([entity]), np.array([relation]),
                             training, rng).data[0]


def tucker_score(scorer: TuckerScorer, h: np.ndarray, relation: int, t: np.ndarray) -> float:
    if not (0 <= relation < scorer.n_relations):
        raise UsageError(f"relation id {relation} out of range 0..{scorer.n_relations - 1}")
    s = mode_n_product(scorer.core, Tensor(np.asarray(h)), 1)
    s = mode_n_product(s, Tensor(scorer.relations.data[relation]), 2)
    s = mode_n_product(s, Tensor(np.asarray(t)), 3)
    return float(s.data)

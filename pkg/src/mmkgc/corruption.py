"""Seeded input corruptions for robustness experiments.

Three transforms over the inputs of a trained pipeline: Gaussian noise on a
fraction of one modality's feature rows, whole-row masking of a fraction of
one modality's feature rows, and removal of a fraction of training triples.
All three are pure functions of (input, spec): the seed fixes the selection
and the noise draws, so corrupted runs are reproducible.
"""
import warnings
from dataclasses import dataclass

import numpy as np

from .data import TripleStore
from .errors import ConfigError, UsageError

KINDS = ("gaussian-noise", "embedding-mask", "triple-removal")
FEATURE_KINDS = ("gaussian-noise", "embedding-mask")


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    p: float                     # fraction of rows / triples hit
    seed: int
    modality: str | None = None  # required for the feature corruptions
    scale: float = 1.0           # noise sigma multiplier

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown corruption kind '{self.kind}', "
                              f"expected one of {KINDS}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"corruption fraction must be in [0, 1], got {self.p}")
        if self.scale < 0.0:
            raise ConfigError(f"noise scale must be >= 0, got {self.scale}")
        if self.kind in FEATURE_KINDS and self.modality is None:
            raise ConfigError(f"{self.kind} needs a target modality")


def _require_kind(spec: CorruptionSpec, kind: str) -> None:
    if spec.kind != kind:
        raise UsageError(f"spec has kind '{spec.kind}', expected '{kind}'")


def _pick_rows(n: int, spec: CorruptionSpec) -> np.ndarray:
    count = int(np.floor(spec.p * n))
    rng = np.random.default_rng(spec.seed)
    return rng.choice(n, size=count, replace=False)


def inject_gaussian_noise(matrix: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    """Add N(0, sigma^2) to floor(p*n) seeded rows, sigma = scale * column std."""
    _require_kind(spec, "gaussian-noise")
    out = matrix.copy()
    rng = np.random.default_rng(spec.seed)
    rows = rng.choice(len(matrix), size=int(np.floor(spec.p * len(matrix))),
                      replace=False)
    if len(rows) == 0 or spec.scale == 0.0:
        return out
    sigma = spec.scale * matrix.std(axis=0)
    out[rows] += rng.normal(0.0, 1.0, size=(len(rows), matrix.shape[1])) * sigma
    return out


def mask_embeddings(matrix: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    """Zero out floor(p*n) seeded rows: missing multimodal information."""
    _require_kind(spec, "embedding-mask")
    out = matrix.copy()
    out[_pick_rows(len(matrix), spec)] = 0.0
    return out


def corrupt_features(features: dict, spec: CorruptionSpec) -> dict:
    """New features dict with the target modality's matrix corrupted."""
    if spec.kind not in FEATURE_KINDS:
        raise UsageError(f"'{spec.kind}' does not apply to feature matrices")
    if spec.modality not in features:
        raise UsageError(f"no '{spec.modality}' features loaded; have "
                         f"{sorted(features)}")
    op = inject_gaussian_noise if spec.kind == "gaussian-noise" else mask_embeddings
    out = dict(features)
    out[spec.modality] = op(features[spec.modality], spec)
    return out


def drop_triples(store: TripleStore, spec: CorruptionSpec) -> TripleStore:
    """Remove floor(p*|train|) seeded training triples; valid/test untouched."""
    _require_kind(spec, "triple-removal")
    n = len(store.train)
    removed = set(map(int, _pick_rows(n, spec)))
    kept = [t for i, t in enumerate(store.train) if i not in removed]
    survivors = {e for h, _, t in kept for e in (h, t)}
    orphaned = {e for h, _, t in store.train for e in (h, t)} - survivors
    if orphaned:
        warnings.warn(f"{len(orphaned)} entities lost every training triple; "
                      "the transductive assumption no longer holds")
    return TripleStore(train=kept, valid=list(store.valid), test=list(store.test))

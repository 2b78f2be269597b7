"""Dense per-entity feature matrices and their on-disk container.

Binary layout: magic "MMFT" | version u32 LE | rows u32 LE | cols u32 LE |
rows*cols float32 LE, row-major. A companion `<file>.ids` text file carries
one entity label per line; line i labels row i. The loader reorders rows into
vocab id order, so writers are free to emit rows in any order.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .data import Vocab
from .errors import DataError

MMFT_MAGIC = b"MMFT"
MMFT_VERSION = 1
MODALITIES = ("visual", "textual", "structural")


@dataclass
class ModalityFeatures:
    modality: str
    matrix: np.ndarray  # (|E|, d_m) float32, row i = entity id i

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise DataError(f"unknown modality '{self.modality}', expected one of {MODALITIES}")
        if self.matrix.ndim != 2 or self.matrix.shape[1] < 1:
            raise DataError(f"feature matrix must be 2-D with at least one column, got {self.matrix.shape}")

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])


def write_feature_matrix(matrix: np.ndarray, labels: list[str], path: str,
                         allow_nan: bool = False) -> None:
    """Write matrix + labels as MMFT and `<path>.ids`."""
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {matrix.shape}")
    if len(labels) != matrix.shape[0]:
        raise DataError(f"{len(labels)} labels for {matrix.shape[0]} rows")
    if not allow_nan and not np.all(np.isfinite(matrix)):
        raise DataError("feature matrix contains NaN/Inf")
    rows, cols = matrix.shape
    with open(path, "wb") as fh:
        fh.write(MMFT_MAGIC)
        fh.write(struct.pack("<III", MMFT_VERSION, rows, cols))
        fh.write(matrix.tobytes(order="C"))
    with open(path + ".ids", "w", encoding="utf-8") as fh:
        for label in labels:
            fh.write(label + "\n")


def read_feature_matrix(path: str, vocab: Vocab, modality: str,
                        expected_cols: int | None = None) -> ModalityFeatures:
    """Load an MMFT file, validate it against the vocab, reorder to id order."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != MMFT_MAGIC:
        raise DataError(f"{path}: bad magic, not an MMFT file")
    version, rows, cols = struct.unpack("<III", raw[4:16])
    if version != MMFT_VERSION:
        raise DataError(f"{path}: unsupported MMFT version {version}")
    expected_len = 16 + rows * cols * 4
    if len(raw) != expected_len:
        kind = "truncated" if len(raw) < expected_len else "oversized"
        raise DataError(f"{path}: {kind} payload, expected {expected_len} bytes, found {len(raw)}")
    if rows != vocab.n_entities:
        raise DataError(f"{path}: row count {rows} != vocab entity count {vocab.n_entities}")
    if expected_cols is not None and cols != expected_cols:
        raise DataError(f"{path}: expected {expected_cols} columns, found {cols}")

    ids_path = path + ".ids"
    if not os.path.exists(ids_path):
        raise DataError(f"{path}: companion ids file '{ids_path}' missing")
    with open(ids_path, "r", encoding="utf-8") as fh:
        labels = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
    if len(labels) != rows:
        raise DataError(f"{ids_path}: {len(labels)} labels for {rows} rows")

    matrix = np.frombuffer(raw, dtype="<f4", offset=16).reshape(rows, cols)
    order = np.empty(rows, dtype=np.int64)
    seen = set()
    for row, label in enumerate(labels):
        if label in seen:
            raise DataError(f"{ids_path}: duplicate entity '{label}'")
        seen.add(label)
        ent = vocab.entity_to_id.get(label)
        if ent is None:
            raise DataError(f"{ids_path}: entity '{label}' not in vocab")
        order[ent] = row
    reordered = np.ascontiguousarray(matrix[order])
    if not np.all(np.isfinite(reordered)):
        raise DataError(f"{path}: feature matrix contains NaN/Inf")
    return ModalityFeatures(modality=modality, matrix=reordered)

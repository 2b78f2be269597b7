"""Synthetic dataset builders shared by the test modules."""
from __future__ import annotations

import os

import numpy as np


def entity_label(i: int) -> str:
    return f"e{i:05d}"


def relation_label(j: int) -> str:
    return f"r{j:03d}"


def make_synthetic_triples(n_entities: int, n_relations: int, n_train: int,
                           n_valid: int, n_test: int, seed: int):
    """Random id triples with exact split sizes.

    Every entity and relation appears in the train split (transductive), the
    three splits are disjoint sets, and no split contains duplicates.
    Requires n_train >= max(n_entities, n_relations).
    """
    assert n_train >= n_entities and n_train >= n_relations
    rng = np.random.default_rng(seed)
    seen = set()
    train = []
    # cycle cover: guarantees every entity and relation occurs in train
    for i in range(n_entities):
        t = (i, i % n_relations, (i + 1) % n_entities)
        if t not in seen:
            seen.add(t)
            train.append(t)
    for j in range(n_relations):
        t = (j % n_entities, j, (j + 2) % n_entities)
        if t not in seen:
            seen.add(t)
            train.append(t)

    def draw():
        while True:
            t = (int(rng.integers(n_entities)), int(rng.integers(n_relations)),
                 int(rng.integers(n_entities)))
            if t not in seen:
                seen.add(t)
                return t

    while len(train) < n_train:
        train.append(draw())
    valid = [draw() for _ in range(n_valid)]
    test = [draw() for _ in range(n_test)]
    return train, valid, test


def write_split(path: str, triples, ent=entity_label, rel=relation_label) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in triples:
            fh.write(f"{ent(h)}\t{rel(r)}\t{ent(t)}\n")


def make_dataset_dir(root: str, n_entities: int, n_relations: int, n_train: int,
                     n_valid: int, n_test: int, seed: int = 0) -> str:
    """Write train/valid/test TSVs under root and return root."""
    os.makedirs(root, exist_ok=True)
    train, valid, test = make_synthetic_triples(
        n_entities, n_relations, n_train, n_valid, n_test, seed)
    write_split(os.path.join(root, "train.tsv"), train)
    write_split(os.path.join(root, "valid.tsv"), valid)
    write_split(os.path.join(root, "test.tsv"), test)
    return root


def make_feature_files(root: str, vocab, dims: dict[str, int], seed: int = 0) -> dict[str, str]:
    """Random MMFT feature files for the given vocab, one per modality tag."""
    from mmkgc.features import write_feature_matrix

    rng = np.random.default_rng(seed)
    paths = {}
    for modality, d in dims.items():
        matrix = rng.normal(size=(vocab.n_entities, d)).astype(np.float32)
        path = os.path.join(root, f"{modality}.mmft")
        write_feature_matrix(matrix, list(vocab.id_to_entity), path)
        paths[modality] = path
    return paths

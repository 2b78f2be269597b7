"""Knowledge-graph storage: vocabularies, triple splits, and the filter index.

Triples live on disk as UTF-8 TSV rows `head<TAB>relation<TAB>tail`. Ids are
dense, assigned in first-appearance order over the train split (head, then
tail, line by line); valid/test files must not introduce new labels
(transductive setting).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import DataError, UsageError

SPLIT_NAMES = ("train", "valid", "test")


@dataclass
class Vocab:
    entity_to_id: dict[str, int]
    relation_to_id: dict[str, int]
    id_to_entity: list[str]
    id_to_relation: list[str]
    descriptions: dict[str, str] = field(default_factory=dict)

    @property
    def n_entities(self) -> int:
        return len(self.id_to_entity)

    @property
    def n_relations(self) -> int:
        return len(self.id_to_relation)


@dataclass
class TripleStore:
    train: list[tuple[int, int, int]]
    valid: list[tuple[int, int, int]]
    test: list[tuple[int, int, int]]

    def split(self, name: str) -> list[tuple[int, int, int]]:
        if name not in SPLIT_NAMES:
            raise UsageError(f"unknown split '{name}'")
        return getattr(self, name)


def _parse_rows(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path} line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
            yield lineno, parts


def load_triples(path: str, vocab: Vocab | None = None, vocab_mode: str = "build"):
    """Load one TSV split. Returns (triples, vocab).

    build mode assigns fresh dense ids in first-appearance order; reuse mode
    requires every label to exist in the given vocab and reports the first
    offending line.
    """
    if vocab_mode not in ("build", "reuse"):
        raise UsageError(f"vocab_mode must be 'build' or 'reuse', got '{vocab_mode}'")
    if vocab_mode == "build":
        if vocab is not None:
            raise UsageError("build mode constructs its own vocab; do not pass one")
        vocab = Vocab({}, {}, [], [])
    elif vocab is None:
        raise UsageError("reuse mode needs a vocab")

    triples: list[tuple[int, int, int]] = []
    for lineno, (h, r, t) in _parse_rows(path):
        if vocab_mode == "build":
            for label in (h, t):
                if label not in vocab.entity_to_id:
                    vocab.entity_to_id[label] = len(vocab.id_to_entity)
                    vocab.id_to_entity.append(label)
            if r not in vocab.relation_to_id:
                vocab.relation_to_id[r] = len(vocab.id_to_relation)
                vocab.id_to_relation.append(r)
        else:
            for label in (h, t):
                if label not in vocab.entity_to_id:
                    raise DataError(f"{path} line {lineno}: unknown entity '{label}' "
                                    "(train split does not contain it)")
            if r not in vocab.relation_to_id:
                raise DataError(f"{path} line {lineno}: unknown relation '{r}'")
        triples.append((vocab.entity_to_id[h], vocab.relation_to_id[r], vocab.entity_to_id[t]))
    return triples, vocab


def load_dataset(directory: str):
    """Load train/valid/test TSVs from a dataset directory.

    Vocab is built from train; valid/test reuse it. Splits must be disjoint
    as sets.
    """
    import os

    train, vocab = load_triples(os.path.join(directory, "train.tsv"), vocab_mode="build")
    valid, _ = load_triples(os.path.join(directory, "valid.tsv"), vocab=vocab, vocab_mode="reuse")
    test, _ = load_triples(os.path.join(directory, "test.tsv"), vocab=vocab, vocab_mode="reuse")

    train_set = set(train)
    for name, split in (("valid", valid), ("test", test)):
        overlap = train_set.intersection(split)
        if overlap:
            h, r, t = next(iter(overlap))
            raise DataError(f"{name} split repeats train triple "
                            f"({vocab.id_to_entity[h]}, {vocab.id_to_relation[r]}, {vocab.id_to_entity[t]})")
    overlap = set(valid).intersection(test)
    if overlap:
        h, r, t = next(iter(overlap))
        raise DataError(f"test split repeats valid triple "
                        f"({vocab.id_to_entity[h]}, {vocab.id_to_relation[r]}, {vocab.id_to_entity[t]})")

    desc_path = os.path.join(directory, "descriptions.tsv")
    if os.path.exists(desc_path):
        vocab.descriptions = load_descriptions(desc_path, vocab)
    return TripleStore(train=train, valid=valid, test=test), vocab


def load_descriptions(path: str, vocab: Vocab) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise DataError(f"{path} line {lineno}: expected `label<TAB>text`")
            label, text = parts
            if label not in vocab.entity_to_id:
                raise DataError(f"{path} line {lineno}: unknown entity '{label}'")
            out[label] = text
    return out


def save_triples(triples: Iterable[tuple[int, int, int]], vocab: Vocab, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in triples:
            fh.write(f"{vocab.id_to_entity[h]}\t{vocab.id_to_relation[r]}\t{vocab.id_to_entity[t]}\n")


def write_vocab_tsv(labels: Sequence[str], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, label in enumerate(labels):
            fh.write(f"{i}\t{label}\n")


class FilterIndex:
    """Known-completion lookup: (h, r) -> tails and (r, t) -> heads."""

    def __init__(self, splits: Iterable[str]):
        self.splits = tuple(splits)
        self._tails: dict[tuple[int, int], set[int]] = {}
        self._heads: dict[tuple[int, int], set[int]] = {}

    def add(self, h: int, r: int, t: int) -> None:
        self._tails.setdefault((h, r), set()).add(t)
        self._heads.setdefault((r, t), set()).add(h)

    def tails_of(self, h: int, r: int) -> set[int]:
        return self._tails.get((h, r), set())

    def heads_of(self, r: int, t: int) -> set[int]:
        return self._heads.get((r, t), set())

    def contains(self, h: int, r: int, t: int) -> bool:
        return t in self._tails.get((h, r), ())


def build_filter_index(store: TripleStore, splits: Sequence[str]) -> FilterIndex:
    """Index exactly the requested splits for filtered evaluation."""
    if not splits:
        raise UsageError("filter index needs at least one split")
    for name in splits:
        if name not in SPLIT_NAMES:
            raise UsageError(f"unknown split '{name}', expected subset of {SPLIT_NAMES}")
    index = FilterIndex(splits)
    for name in splits:
        for h, r, t in store.split(name):
            index.add(h, r, t)
    return index

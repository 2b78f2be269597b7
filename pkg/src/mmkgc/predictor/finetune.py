"""Fine-tune dataset export for the generative predictor.

Validation triples become instruction-tuning records: every triple yields a
tail query and a head query, each rendered through the prompt template with
its retrieved candidate list and the gold label as the target output. The
shuffled records split 9:1 into train/valid jsonl files, and a manifest
records the counts plus the adapter hyperparameters the external fine-tune
should use. Candidate retrieval filters against the train split only, with
the gold exempted, so the supervised answer stays reachable.
"""
import json
import os

import numpy as np

from ..data import TripleStore, Vocab, build_filter_index
from ..errors import ConfigError, DataError
from ..retrieval import candidate_lists, queries_for_split

from .prompts import render_prompt

LORA_HYPERPARAMS = {"r": 64, "alpha": 16, "dropout": 0.1, "lr": 0.0002}
VALID_FRACTION = 0.1


def _write_jsonl(path: str, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def export_finetune_dataset(store: TripleStore, vocab: Vocab, model, features,
                            out_dir: str, k: int = 20, seed: int = 0,
                            sample_size: int | None = None) -> dict:
    """Write train.jsonl, valid.jsonl, and manifest.json under out_dir.

    `sample_size`, when given, first draws that many validation triples
    without replacement (large datasets cap the export this way). Returns
    the manifest dict.
    """
    triples = list(store.valid)
    if not triples:
        raise DataError("fine-tune export needs a non-empty validation split")
    if sample_size is not None:
        if sample_size < 1:
            raise ConfigError(f"sample_size must be >= 1, got {sample_size}")
        if sample_size > len(triples):
            raise DataError(
                f"sample_size {sample_size} exceeds the "
                f"{len(triples)}-triple validation split")
    rng = np.random.default_rng(seed)
    if sample_size is not None:
        chosen = rng.choice(len(triples), size=sample_size, replace=False)
        triples = [triples[i] for i in chosen]

    filt = build_filter_index(store, splits=("train",))
    queries = queries_for_split(triples)
    lists = candidate_lists(model, features, queries, filt, k, exempt_gold=True)

    records = []
    for query, cands in zip(queries, lists):
        labels = [vocab.id_to_entity[e] for e in cands.entity_ids]
        if query.gold not in cands.entity_ids:
            # gold scored below the cut: swap it in for the weakest candidate
            labels[-1] = vocab.id_to_entity[query.gold]
        text = render_prompt(vocab.id_to_entity[query.entity],
                             vocab.id_to_relation[query.relation],
                             labels, query.direction)
        instruction, rest = text.split("\n", 1)
        records.append({"instruction": instruction, "input": rest,
                        "output": vocab.id_to_entity[query.gold]})

    order = rng.permutation(len(records))
    records = [records[i] for i in order]
    n_valid = int(len(records) * VALID_FRACTION)
    train_records = records[:len(records) - n_valid]
    valid_records = records[len(records) - n_valid:]

    os.makedirs(out_dir, exist_ok=True)
    _write_jsonl(os.path.join(out_dir, "train.jsonl"), train_records)
    _write_jsonl(os.path.join(out_dir, "valid.jsonl"), valid_records)
    manifest = {
        "n_records": len(records),
        "n_train": len(train_records),
        "n_valid": len(valid_records),
        "source_triples": len(triples),
        "k": k,
        "seed": seed,
        "sample_size": sample_size,
        "lora": dict(LORA_HYPERPARAMS),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest

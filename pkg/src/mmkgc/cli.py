"""Command-line front end: one subcommand per pipeline stage.

Every command resolves settings the same way (defaults <- config file <-
flags), writes its artifacts into the --out directory, and drops a
config_used.ini snapshot there so a run can be reproduced from the
directory alone.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .config import RunConfig, load_config
from .corruption import FEATURE_KINDS, corrupt_features, drop_triples
from .data import Vocab, build_filter_index, load_dataset, save_triples
from .errors import ConfigError, MmkgcError
from .evaluation import evaluate_rankings, evaluate_split, sweep_to_csv
from .features import read_feature_matrix, write_feature_matrix
from .model import MODALITY_ORDER, RetrieverModel
from .predictor.client import LlmClient, load_mock_oracle
from .predictor.finetune import export_finetune_dataset
from .predictor.rerank import predict_queries
from .retrieval import candidate_lists, queries_for_split, write_candidates_jsonl
from .structure import train_structure_embeddings
from .training import fit, load_checkpoint

SPLITS = ("train", "valid", "test")


# ---------------------------------------------------------------- plumbing

def _overrides(args, extra=()) -> dict:
    """Map parsed flags onto dotted config keys; None values are skipped."""
    pairs = {
        "run.out": getattr(args, "out", None),
        "run.seed": getattr(args, "seed", None),
        "run.workers": getattr(args, "workers", None),
        "run.checkpoint": getattr(args, "model_prefix", None),
        "data.dataset": getattr(args, "dataset", None),
        "data.visual": getattr(args, "visual", None),
        "data.textual": getattr(args, "textual", None),
        "data.structural": getattr(args, "structural", None),
    }
    for dotted, attr in extra:
        pairs[dotted] = getattr(args, attr, None)
    return pairs


def _workdir(cfg: RunConfig) -> str:
    out = cfg.get("run", "out")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config_used.ini"), "w", encoding="utf-8") as fh:
        fh.write(cfg.echo_text())
    return out


def _load_data(cfg: RunConfig):
    directory = cfg.get("data", "dataset")
    if not directory:
        raise ConfigError("data.dataset is required (pass --dataset or set [data] dataset)")
    return load_dataset(directory)


def _load_features(cfg: RunConfig, vocab: Vocab) -> dict:
    mats = {}
    for modality in MODALITY_ORDER:
        path = cfg.get("data", modality)
        if not path:
            raise ConfigError(f"data.{modality} is required "
                              f"(pass --{modality} or set [data] {modality})")
        if not os.path.exists(path):
            raise ConfigError(f"feature file not found: {path}")
        mats[modality] = read_feature_matrix(path, vocab, modality).matrix
    return mats


def _checkpoint_prefix(cfg: RunConfig) -> str:
    explicit = cfg.get("run", "checkpoint")
    return explicit if explicit else os.path.join(cfg.get("run", "out"), "model")


def _load_model(cfg: RunConfig, mats: dict) -> RetrieverModel:
    model, _ = load_checkpoint(_checkpoint_prefix(cfg))
    for modality, mat in mats.items():
        want = model.modal_dims[modality]
        if mat.shape[1] != want:
            raise ConfigError(f"{modality} features are {mat.shape[1]}-dim "
                              f"but the checkpoint expects {want}")
    return model


def _build_client(cfg: RunConfig) -> LlmClient:
    oracle_path = cfg.get("predictor", "oracle")
    answers = load_mock_oracle(oracle_path) if oracle_path else None
    return LlmClient(mode=cfg.get("predictor", "mode"),
                     endpoint=cfg.get("predictor", "endpoint") or None,
                     answers=answers,
                     constant=cfg.get("predictor", "constant") or None)


def _write_report(report, out: str, stem: str) -> None:
    with open(os.path.join(out, stem + ".json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    with open(os.path.join(out, stem + ".txt"), "w", encoding="utf-8") as fh:
        fh.write(report.to_text() + "\n")
    print(report.to_text())


# ---------------------------------------------------------------- commands

def cmd_train_structure(args) -> int:
    cfg = load_config(args.config, _overrides(args, [
        ("structure.epochs", "epochs"), ("structure.lr", "lr"),
        ("structure.dim", "dim"), ("structure.batch_size", "batch_size")]))
    sconf = cfg.structure_config()
    sconf.validate()
    store, vocab = _load_data(cfg)
    out = _workdir(cfg)
    result = train_structure_embeddings(store, vocab.n_entities,
                                        vocab.n_relations, sconf)
    path = os.path.join(out, "structural.mmft")
    write_feature_matrix(result.matrix, vocab.id_to_entity, path)
    log = {"losses": result.losses, "epochs_run": result.epochs_run,
           "diverged": result.diverged, "best_valid_mrr": result.best_valid_mrr}
    with open(os.path.join(out, "structure_log.json"), "w", encoding="utf-8") as fh:
        json.dump(log, fh, indent=2)
        fh.write("\n")
    print(f"wrote {path} ({vocab.n_entities} x {sconf.dim}, "
          f"{result.epochs_run} epochs)")
    return 0


def cmd_train_herr(args) -> int:
    cfg = load_config(args.config, _overrides(args, [
        ("train.epochs", "epochs"), ("train.lr", "lr"),
        ("train.batch_size", "batch_size"), ("train.mode", "mode")]))
    tconf = cfg.train_config()
    tconf.validate()
    store, vocab = _load_data(cfg)
    mats = _load_features(cfg, vocab)
    out = _workdir(cfg)
    mconf = cfg.model_config()
    dims = {m: mats[m].shape[1] for m in MODALITY_ORDER}
    model = RetrieverModel(
        mconf, vocab.n_entities, vocab.n_relations, dims,
        seed=cfg.get("run", "seed"),
        structural_matrix=mats["structural"] if mconf.trainable_structural else None)
    result = fit(model, mats, store, tconf, out)
    best = "n/a" if result.best_valid_mrr is None else f"{result.best_valid_mrr:.4f}"
    print(f"trained {result.epochs_run} epochs, best valid MRR {best}, "
          f"checkpoint at {os.path.join(out, 'model')}")
    return 0


def cmd_retrieve(args) -> int:
    cfg = load_config(args.config, _overrides(args, [("retrieval.k", "k")]))
    store, vocab = _load_data(cfg)
    mats = _load_features(cfg, vocab)
    model = _load_model(cfg, mats)
    out = _workdir(cfg)
    k = cfg.get("retrieval", "k")
    queries = queries_for_split(store.split(args.split))
    filt = build_filter_index(store, ("train", "valid"))
    lists = candidate_lists(model, mats, queries, filt, k)
    path = os.path.join(out, "candidates.jsonl")
    write_candidates_jsonl(path, lists, vocab)
    print(f"wrote {path} ({len(lists)} queries, k={k})")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    store, vocab = _load_data(cfg)
    mats = _load_features(cfg, vocab)
    model = _load_model(cfg, mats)
    out = _workdir(cfg)
    filt = build_filter_index(store, ("train", "valid", "test"))
    report = evaluate_split(model, mats, store.split(args.split), filt,
                            config={"split": args.split,
                                    "checkpoint": _checkpoint_prefix(cfg)})
    _write_report(report, out, "report")
    return 0


def cmd_export_finetune(args) -> int:
    cfg = load_config(args.config, _overrides(args, [("retrieval.k", "k")]))
    store, vocab = _load_data(cfg)
    mats = _load_features(cfg, vocab)
    model = _load_model(cfg, mats)
    out = _workdir(cfg)
    manifest = export_finetune_dataset(store, vocab, model, mats, out,
                                       k=cfg.get("retrieval", "k"),
                                       seed=cfg.get("run", "seed"),
                                       sample_size=args.sample_size)
    print(f"wrote {manifest['n_train']} train / {manifest['n_valid']} valid "
          f"records to {out}")
    return 0


def cmd_predict(args) -> int:
    cfg = load_config(args.config, _overrides(args, [
        ("retrieval.k", "k"), ("predictor.mode", "mode"),
        ("predictor.endpoint", "endpoint"), ("predictor.oracle", "oracle"),
        ("predictor.constant", "constant"), ("predictor.max_tokens", "max_tokens"),
        ("predictor.temperature", "temperature")]))
    store, vocab = _load_data(cfg)
    mats = _load_features(cfg, vocab)
    model = _load_model(cfg, mats)
    out = _workdir(cfg)
    queries = queries_for_split(store.split(args.split))
    eval_filt = build_filter_index(store, ("train", "valid", "test"))
    cand_filt = build_filter_index(store, ("train", "valid"))
    client = _build_client(cfg)
    outcomes, stats = predict_queries(model, mats, queries, eval_filt,
                                      cand_filt, client, vocab,
                                      k=cfg.get("retrieval", "k"),
                                      max_tokens=cfg.get("predictor", "max_tokens"),
                                      temperature=cfg.get("predictor", "temperature"))
    report = evaluate_rankings([o.result for o in outcomes],
                               config={"split": args.split,
                                       "mode": cfg.get("predictor", "mode"),
                                       "stats": dataclasses.asdict(stats)})
    _write_report(report, out, "predict_report")
    with open(os.path.join(out, "outcomes.jsonl"), "w", encoding="utf-8") as fh:
        for o in outcomes:
            row = {"direction": o.query.direction,
                   "entity": vocab.id_to_entity[o.query.entity],
                   "relation": vocab.id_to_relation[o.query.relation],
                   "gold": vocab.id_to_entity[o.query.gold],
                   "retriever_rank": o.retriever_rank,
                   "final_rank": o.result.rank,
                   "answer_index": o.answer_index,
                   "response_text": o.response_text,
                   "fallback": o.fallback}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    print(f"answered {stats.n_answered}/{stats.n_queries}, "
          f"{stats.n_fallbacks} fallbacks, {stats.n_parse_failures} parse failures")
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, _overrides(args, [
        ("corruption.kind", "corruption"), ("corruption.fraction", "fraction"),
        ("corruption.modality", "modality"), ("corruption.scale", "scale")]))
    spec = cfg.corruption_spec()
    if spec is None:
        raise ConfigError("corruption.kind is required (pass --corruption)")
    store, vocab = _load_data(cfg)
    mats = _load_features(cfg, vocab)
    model = _load_model(cfg, mats)
    out = _workdir(cfg)
    if spec.kind in FEATURE_KINDS:
        mats = corrupt_features(mats, spec)
        path = os.path.join(out, f"corrupted_{spec.modality}.mmft")
        write_feature_matrix(mats[spec.modality], vocab.id_to_entity, path)
        eval_store = store
    else:
        eval_store = drop_triples(store, spec)
        path = os.path.join(out, "corrupted_train.tsv")
        save_triples(eval_store.train, vocab, path)
    filt = build_filter_index(eval_store, ("train", "valid", "test"))
    report = evaluate_split(model, mats, eval_store.split(args.split), filt,
                            config={"split": args.split,
                                    "corruption": {"kind": spec.kind,
                                                   "fraction": spec.p,
                                                   "modality": spec.modality,
                                                   "scale": spec.scale,
                                                   "seed": spec.seed}})
    _write_report(report, out, "simulate_report")
    print(f"corrupted input written to {path}")
    return 0


def cmd_export_embeddings(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    if not args.relation:
        raise ConfigError("--relation is required (label of the gating relation)")
    store, vocab = _load_data(cfg)
    mats = _load_features(cfg, vocab)
    model = _load_model(cfg, mats)
    out = _workdir(cfg)
    if args.relation not in vocab.relation_to_id:
        raise ConfigError(f"unknown relation '{args.relation}'")
    table = model.fused_all_entities(mats, vocab.relation_to_id[args.relation])
    path = os.path.join(out, "embeddings.mmft")
    write_feature_matrix(np.asarray(table.data, dtype=np.float32),
                         vocab.id_to_entity, path)
    print(f"wrote {path} ({vocab.n_entities} x {model.config.dim}, "
          f"gated by '{args.relation}')")
    return 0


def cmd_sweep_k(args) -> int:
    cfg = load_config(args.config, _overrides(args, [
        ("retrieval.sweep", "sweep"), ("predictor.mode", "mode"),
        ("predictor.endpoint", "endpoint"), ("predictor.oracle", "oracle"),
        ("predictor.constant", "constant"), ("predictor.max_tokens", "max_tokens"),
        ("predictor.temperature", "temperature")]))
    ks = cfg.sweep_ks()
    store, vocab = _load_data(cfg)
    mats = _load_features(cfg, vocab)
    model = _load_model(cfg, mats)
    out = _workdir(cfg)
    queries = queries_for_split(store.split(args.split))
    eval_filt = build_filter_index(store, ("train", "valid", "test"))
    cand_filt = build_filter_index(store, ("train", "valid"))
    client = _build_client(cfg)
    rows = []
    for k in ks:
        outcomes, _ = predict_queries(model, mats, queries, eval_filt,
                                      cand_filt, client, vocab, k=k,
                                      max_tokens=cfg.get("predictor", "max_tokens"),
                                      temperature=cfg.get("predictor", "temperature"))
        report = evaluate_rankings([o.result for o in outcomes],
                                   config={"k": k, "split": args.split})
        rows.append((k, report))
        print(f"k={k}: MRR {report.mrr:.4f}")
    path = os.path.join(out, "sweep.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(sweep_to_csv(rows))
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------- parser

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--out", help="output directory (run.out)")
    common.add_argument("--seed", type=int, help="seed for all stochastic steps (run.seed)")
    common.add_argument("--workers", type=int, help="reserved for parallel scoring (run.workers)")
    common.add_argument("--dataset", help="dataset directory (data.dataset)")
    for m in MODALITY_ORDER:
        common.add_argument(f"--{m}", help=f"{m} feature file (data.{m})")
    common.add_argument("--model", dest="model_prefix",
                        help="checkpoint prefix (run.checkpoint, default <out>/model)")

    parser = argparse.ArgumentParser(
        prog="mmkgc",
        description="multimodal KG link prediction: retriever + generative reranker")
    subs = parser.add_subparsers(dest="command", required=True, metavar="command")

    def sub(name, handler, help_):
        p = subs.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=handler)
        return p

    def split_flag(p):
        p.add_argument("--split", default="test", choices=SPLITS,
                       help="which triples to query (default test)")

    def predictor_flags(p):
        p.add_argument("--mode", help="answer source: mock or http (predictor.mode)")
        p.add_argument("--endpoint", help="HTTP completion URL (predictor.endpoint)")
        p.add_argument("--oracle", help="JSONL mock answer map (predictor.oracle)")
        p.add_argument("--constant", help="fixed mock answer (predictor.constant)")
        p.add_argument("--max-tokens", dest="max_tokens", type=int,
                       help="completion budget (predictor.max_tokens)")
        p.add_argument("--temperature", type=float, help="sampling temperature (predictor.temperature)")

    p = sub("train-structure", cmd_train_structure,
            "train graph-only entity embeddings and export them as features")
    p.add_argument("--epochs", type=int, help="structure.epochs")
    p.add_argument("--lr", type=float, help="structure.lr")
    p.add_argument("--dim", type=int, help="structure.dim")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="structure.batch_size")

    p = sub("train-herr", cmd_train_herr, "train the multimodal retriever")
    p.add_argument("--epochs", type=int, help="train.epochs")
    p.add_argument("--lr", type=float, help="train.lr")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="train.batch_size")
    p.add_argument("--mode", help="loss mode: one-vs-all or negative (train.mode)")

    p = sub("retrieve", cmd_retrieve, "dump top-k candidate lists for a split")
    p.add_argument("--k", type=int, help="candidates per query (retrieval.k)")
    split_flag(p)

    p = sub("evaluate", cmd_evaluate, "filtered MRR / Hits@k for a split")
    split_flag(p)

    p = sub("export-finetune", cmd_export_finetune,
            "write instruction-tuning JSONL from validation queries")
    p.add_argument("--k", type=int, help="candidates per prompt (retrieval.k)")
    p.add_argument("--sample-size", dest="sample_size", type=int,
                   help="subsample this many validation triples first")

    p = sub("predict", cmd_predict, "retrieve, query the answer model, rerank")
    p.add_argument("--k", type=int, help="candidates per prompt (retrieval.k)")
    split_flag(p)
    predictor_flags(p)

    p = sub("simulate", cmd_simulate, "evaluate under corrupted inputs")
    p.add_argument("--corruption", help="gaussian-noise, embedding-mask or triple-removal")
    p.add_argument("--fraction", type=float, help="share of rows/triples hit (corruption.fraction)")
    p.add_argument("--modality", help="feature block to corrupt (corruption.modality)")
    p.add_argument("--scale", type=float, help="noise scale in column stds (corruption.scale)")
    split_flag(p)

    p = sub("export-embeddings", cmd_export_embeddings,
            "dump the fused entity table under one gating relation")
    p.add_argument("--relation", help="relation label that gates the fusion")

    p = sub("sweep-k", cmd_sweep_k, "metrics across candidate-list sizes")
    p.add_argument("--sweep", help="comma-separated k values (retrieval.sweep)")
    split_flag(p)
    predictor_flags(p)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except MmkgcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

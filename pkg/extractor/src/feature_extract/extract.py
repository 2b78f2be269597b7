"""Command-line feature extraction: dataset directory -> one MMFT file.

    extract.py --dataset <dir> --modality {text,image} --out <file>

Every entity in the dataset vocabulary gets exactly one output row, in
vocabulary order. Entities with no usable input for the modality (no
description, no decodable image) still get a row: empty text encodes the
empty sequence, absent images produce an all-zero row recorded in the
run manifest. Alongside <out> the tool writes <out>.ids (row labels) and
<out>.manifest.json (run provenance and anomaly lists).
"""

import argparse
import json
import logging
import sys

import numpy as np

from .assets import scan_dataset
from .encoders import ImageEncoder, TextEncoder

log = logging.getLogger("feature_extract")


def extract_text_features(assets, encoder, batch_size=8):
    """Encode every entity description. Returns (matrix, failed_labels)."""
    matrix = np.zeros((len(assets), encoder.dim), dtype=np.float32)
    failed = []
    rows, token_lists = [], []
    for i, asset in enumerate(assets):
        try:
            ids = encoder.tokenize(asset.description)
        except Exception as exc:  # bad input text must not kill the run
            log.warning("tokenization failed for %s: %s", asset.label, exc)
            failed.append(asset.label)
            continue
        rows.append(i)
        token_lists.append(ids)
    for start in range(0, len(token_lists), batch_size):
        out = encoder.encode(token_lists[start : start + batch_size])
        for row, vec in zip(rows[start : start + batch_size], out):
            matrix[row] = vec
    return matrix, failed


def extract_image_features(assets, encoder):
    """Encode and mean-pool each entity's images.

    Returns (matrix, missing_labels, failed_paths). Entities with no
    decodable image keep an all-zero row and are listed as missing.
    """
    matrix = np.zeros((len(assets), encoder.dim), dtype=np.float32)
    missing, failed_paths = [], []
    for i, asset in enumerate(assets):
        tensors = []
        for path in asset.image_paths:
            try:
                tensors.append(encoder.load(path))
            except Exception as exc:
                log.warning("skipping undecodable image %s: %s", path, exc)
                failed_paths.append(path)
        if not tensors:
            missing.append(asset.label)
            continue
        vectors = encoder.encode(tensors)
        matrix[i] = vectors.mean(axis=0)
    return matrix, missing, failed_paths


def build_parser():
    parser = argparse.ArgumentParser(
        prog="extract-features",
        description="Extract per-entity text or image features into an "
                    "MMFT file plus .ids and manifest sidecars.")
    parser.add_argument("--dataset", required=True,
                        help="dataset directory containing train.tsv")
    parser.add_argument("--modality", required=True, choices=("text", "image"))
    parser.add_argument("--out", required=True, help="output MMFT path")
    parser.add_argument("--random-weights", action="store_true",
                        help="seeded random encoder weights instead of "
                             "pretrained ones (offline smoke runs)")
    parser.add_argument("--seed", type=int, default=0,
                        help="init seed for --random-weights")
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--max-length", type=int, default=128,
                        help="token truncation length for text")
    return parser


def run(args):
    from .mmft import write_mmft

    assets = scan_dataset(args.dataset)
    labels = [a.label for a in assets]
    mode = "random" if args.random_weights else "pretrained"
    manifest = {
        "modality": args.modality,
        "mode": mode,
        "seed": args.seed if args.random_weights else None,
        "entities": len(assets),
    }
    if args.modality == "text":
        encoder = TextEncoder(mode=mode, seed=args.seed,
                              max_length=args.max_length)
        manifest["encoder"] = "bert-base-uncased [CLS]"
        manifest["max_length"] = args.max_length
        matrix, failed = extract_text_features(
            assets, encoder, batch_size=args.batch_size)
        manifest["failed"] = failed
    else:
        encoder = ImageEncoder(mode=mode, seed=args.seed)
        manifest["encoder"] = "vgg16 fc7"
        matrix, missing, failed_paths = extract_image_features(assets, encoder)
        manifest["missing"] = missing
        manifest["failed_images"] = failed_paths
    manifest["dim"] = encoder.dim

    write_mmft(args.out, matrix, labels)
    with open(str(args.out) + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    log.info("wrote %dx%d %s features to %s",
             matrix.shape[0], matrix.shape[1], args.modality, args.out)
    return 0


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

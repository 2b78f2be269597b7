"""Discovery of per-entity raw assets inside a dataset directory.

Expected layout:

    <dataset>/train.tsv            head \t relation \t tail (defines the entity set)
    <dataset>/descriptions.tsv     entity \t free text           (optional)
    <dataset>/images/<entity>/     any number of image files     (optional)

Entities are collected from the head and tail columns of train.tsv in
first-appearance order, which matches how downstream consumers build
their vocabulary. Image file names may be arbitrary; they are visited
in sorted order so runs are reproducible.
"""

import os
from dataclasses import dataclass, field


@dataclass
class EntityAssets:
    label: str
    description: str = ""
    image_paths: list = field(default_factory=list)


def _entity_labels(train_path):
    labels = []
    seen = set()
    with open(train_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(
                    f"{train_path}:{lineno}: expected 3 tab-separated fields, "
                    f"got {len(parts)}")
            for label in (parts[0], parts[2]):
                if label not in seen:
                    seen.add(label)
                    labels.append(label)
    if not labels:
        raise ValueError(f"no triples found in {train_path}")
    return labels


def _descriptions(path, known):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            label, _, text = line.partition("\t")
            if label not in known:
                raise ValueError(
                    f"{path}:{lineno}: unknown entity {label!r}")
            out[label] = text
    return out


def scan_dataset(directory):
    """Return one EntityAssets per entity, in vocabulary order."""
    train_path = os.path.join(directory, "train.tsv")
    if not os.path.isfile(train_path):
        raise FileNotFoundError(f"missing {train_path}")
    labels = _entity_labels(train_path)

    descriptions = {}
    desc_path = os.path.join(directory, "descriptions.tsv")
    if os.path.isfile(desc_path):
        descriptions = _descriptions(desc_path, set(labels))

    images_root = os.path.join(directory, "images")
    assets = []
    for label in labels:
        entity_dir = os.path.join(images_root, label)
        paths = []
        if os.path.isdir(entity_dir):
            paths = [os.path.join(entity_dir, name)
                     for name in sorted(os.listdir(entity_dir))
                     if os.path.isfile(os.path.join(entity_dir, name))]
        assets.append(EntityAssets(
            label=label,
            description=descriptions.get(label, ""),
            image_paths=paths,
        ))
    return assets

"""Prompt construction for the generative predictor.

The rendered text follows the published four-line template: instruction with
the answer-constraint list, an embeddings reference line, the direction-
specific question, and a bare "Answer:". Embedding values travel out of band
as named vectors; the text marks each slot with [Placeholder]. The query
entity's vector is always named by the literal key "query entity".
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import UsageError

PLACEHOLDER = "[Placeholder]"
QUERY_KEY = "query entity"

_INSTRUCTION_HEAD = (
    "You are an excellent linguist. The task is to predict the head or tail "
    "based on the given incomplete triple, and you only need to answer one "
    "entity. The answer must be in (")


@dataclass
class PromptInstance:
    instruction: str
    question: str
    candidates: list[str]
    embeddings: dict[str, np.ndarray]
    text: str


def _quote(label: str) -> str:
    return "'" + label.replace("'", "\\'") + "'"


def _instruction_line(candidate_labels) -> str:
    return _INSTRUCTION_HEAD + ", ".join(_quote(c) for c in candidate_labels) + ")."


def _embedding_line(candidate_labels) -> str:
    names = [QUERY_KEY] + list(candidate_labels)
    slots = ", ".join(f"{_quote(n)}: {PLACEHOLDER}" for n in names)
    return f"You can refer to the entity embeddings: {slots}."


def _question_line(entity_label: str, relation_label: str, direction: str) -> str:
    e, r = _quote(entity_label), _quote(relation_label)
    if direction == "tail":
        return f"Question: What is the tail in ({e}, {r}, tail)?"
    return f"Question: What is the head in (head, {r}, {e})?"


def render_prompt(entity_label: str, relation_label: str, candidate_labels,
                  direction: str) -> str:
    """The full four-line prompt text with placeholder markers."""
    if direction not in ("head", "tail"):
        raise UsageError(f"direction must be head or tail, got '{direction}'")
    if not candidate_labels:
        raise UsageError("prompt needs at least one candidate")
    return "\n".join([
        _instruction_line(candidate_labels),
        _embedding_line(candidate_labels),
        _question_line(entity_label, relation_label, direction),
        "Answer:",
    ])


def build_prompt(query, candidates, model, features, vocab) -> PromptInstance:
    """Render the template for a query and attach fused embedding vectors.

    Vectors are fused under the query relation for the query entity and every
    candidate; the query entity's key in the payload is the fixed string
    "query entity" while candidates are keyed by their labels.
    """
    if not candidates.entity_ids:
        raise UsageError("prompt needs at least one candidate")
    labels = [vocab.id_to_entity[e] for e in candidates.entity_ids]
    entity_label = vocab.id_to_entity[query.entity]
    relation_label = vocab.id_to_relation[query.relation]
    text = render_prompt(entity_label, relation_label, labels, query.direction)

    ids = np.array([query.entity] + list(candidates.entity_ids), dtype=np.int64)
    rels = np.full(len(ids), query.relation, dtype=np.int64)
    fused = model.fused_batch(features, ids, rels, training=False).data
    if not np.isfinite(fused).all():
        raise UsageError("non-finite fused embedding in prompt payload")
    embeddings = {QUERY_KEY: fused[0].copy()}
    for i, label in enumerate(labels):
        embeddings[label] = fused[i + 1].copy()
    return PromptInstance(
        instruction=text.split("\n", 1)[0],
        question=_question_line(entity_label, relation_label, query.direction),
        candidates=labels,
        embeddings=embeddings,
        text=text,
    )


def textualize_vector(vec: np.ndarray, components: int = 16, decimals: int = 3) -> str:
    """Render a vector's leading components as text for plain-text endpoints."""
    head = np.asarray(vec).ravel()[:components]
    return "[" + ", ".join(f"{v:.{decimals}f}" for v in head) + "]"


def render_text_only(instance: PromptInstance, components: int = 16,
                     decimals: int = 3) -> str:
    """Replace each [Placeholder] with its vector text, in payload order."""
    parts = instance.text.split(PLACEHOLDER)
    names = [QUERY_KEY] + list(instance.candidates)
    if len(parts) != len(names) + 1:
        raise UsageError(
            f"prompt has {len(parts) - 1} placeholders but {len(names)} vectors")
    out = [parts[0]]
    for name, tail in zip(names, parts[1:]):
        out.append(textualize_vector(instance.embeddings[name], components, decimals))
        out.append(tail)
    return "".join(out)

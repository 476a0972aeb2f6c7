"""Triplet mining over extracted caption relationships.

Training samples pair a reference relationship with a target sharing its
subject but differing in object and image; the condition is the target's
predicate and object. Mining is rejection sampling with a seeded RNG and a
bounded retry budget, so short corpora yield partial results with a warning
rather than an error.
"""
from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .captions import Relationship
from .errors import SchemaError

logger = logging.getLogger(__name__)

RETRY_FACTOR = 100


@dataclass(frozen=True)
class MinedTriplet:
    """One (reference image, target image, condition text) training sample."""

    reference_image_id: str
    target_image_id: str
    condition_text: str
    subject: str
    reference_object: str
    target_predicate: str
    target_object: str


@dataclass(frozen=True)
class SubjectIndex:
    """Relationships bucketed by shared subject, input order preserved."""

    relationships: tuple[Relationship, ...]
    by_subject: dict[str, tuple[int, ...]]


def build_subject_index(rels: Sequence[Relationship]) -> SubjectIndex:
    buckets: dict[str, list[int]] = {}
    for i, rel in enumerate(rels):
        buckets.setdefault(rel.subject, []).append(i)
    return SubjectIndex(
        relationships=tuple(rels),
        by_subject={s: tuple(ix) for s, ix in buckets.items()},
    )


def mine_triplets(
    index: SubjectIndex,
    n: int,
    seed: int,
    retry_budget: int | None = None,
) -> list[MinedTriplet]:
    """Draw up to n unique triplets; deterministic for a given (index, seed).

    Each draw picks a reference uniformly, then a target uniformly among
    same-subject relationships with a different object and a different image.
    Duplicates on (reference image, target image, condition) are rejected.
    """
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    rels = index.relationships
    if n == 0 or not rels:
        if n > 0:
            logger.warning("mining requested %d triplets from an empty corpus", n)
        return []

    budget = retry_budget if retry_budget is not None else RETRY_FACTOR * n
    rng = random.Random(seed)
    out: list[MinedTriplet] = []
    seen: set[tuple[str, str, str]] = set()
    draws = 0
    while len(out) < n and draws < budget:
        draws += 1
        ref = rels[rng.randrange(len(rels))]
        bucket = index.by_subject[ref.subject]
        pool = [
            i for i in bucket
            if rels[i].object != ref.object and rels[i].image_id != ref.image_id
        ]
        if not pool:
            continue
        tgt = rels[pool[rng.randrange(len(pool))]]
        triplet = MinedTriplet(
            reference_image_id=ref.image_id,
            target_image_id=tgt.image_id,
            condition_text=f"{tgt.predicate} {tgt.object}",
            subject=ref.subject,
            reference_object=ref.object,
            target_predicate=tgt.predicate,
            target_object=tgt.object,
        )
        key = (triplet.reference_image_id, triplet.target_image_id, triplet.condition_text)
        if key in seen:
            continue
        seen.add(key)
        out.append(triplet)

    if len(out) < n:
        logger.warning(
            "mining exhausted after %d draws: %d of %d triplets", draws, len(out), n)
    return out


def write_triplets(triplets: Iterable[MinedTriplet], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(json.dumps({
                "ref": t.reference_image_id,
                "target": t.target_image_id,
                "condition": t.condition_text,
                "subject": t.subject,
                "ref_object": t.reference_object,
                "tgt_predicate": t.target_predicate,
                "tgt_object": t.target_object,
            }) + "\n")


def read_triplets(path: str | Path) -> list[MinedTriplet]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", str(path), lineno) from exc
            try:
                out.append(MinedTriplet(
                    reference_image_id=obj["ref"],
                    target_image_id=obj["target"],
                    condition_text=obj["condition"],
                    subject=obj["subject"],
                    reference_object=obj["ref_object"],
                    target_predicate=obj["tgt_predicate"],
                    target_object=obj["tgt_object"],
                ))
            except KeyError as exc:
                raise SchemaError(f"missing field {exc.args[0]!r}", str(path), lineno) from exc
    return out

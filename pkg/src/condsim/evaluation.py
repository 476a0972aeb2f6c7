"""Scorers and Recall@K evaluation over curated and global galleries."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .benchmark import RetrievalTemplate
from .combiner import CombinerParams, combiner_forward
from .embeddings import EmbeddingTable
from .errors import EmptyTemplateSet, MissingEmbedding

DEFAULT_KS = (1, 2, 3)
GLOBAL_KS = (1, 5, 10)


class Scorer:
    """Maps a (reference, condition) pair to a query vector for cosine ranking."""

    name = "base"

    def query_vector(self, ref: np.ndarray, cond: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def score_gallery(
        self, template: RetrievalTemplate, table: EmbeddingTable
    ) -> np.ndarray:
        ref = table.vector(template.reference.key).astype(np.float64)
        cond = table.vector(template.condition).astype(np.float64)
        query = self.query_vector(ref, cond)
        gallery = table.batch([t.key for t in template.gallery]).astype(np.float64)
        return gallery @ query


class ImageOnlyScorer(Scorer):
    """Rank purely by similarity to the reference image."""

    name = "image-only"

    def query_vector(self, ref: np.ndarray, cond: np.ndarray) -> np.ndarray:
        return ref


class TextOnlyScorer(Scorer):
    """Rank purely by similarity to the condition text."""

    name = "text-only"

    def query_vector(self, ref: np.ndarray, cond: np.ndarray) -> np.ndarray:
        return cond


class ImagePlusTextScorer(Scorer):
    """Rank by the renormalized mean of reference and condition embeddings."""

    name = "image-plus-text"

    def query_vector(self, ref: np.ndarray, cond: np.ndarray) -> np.ndarray:
        mean = (ref + cond) / 2.0
        return mean / np.linalg.norm(mean)


class CombinerScorer(Scorer):
    """Rank by the trained combination network's fused query."""

    name = "combiner"

    def __init__(self, params: CombinerParams):
        self.params = params

    def query_vector(self, ref: np.ndarray, cond: np.ndarray) -> np.ndarray:
        return combiner_forward(ref, cond, self.params)


SCORER_NAMES = ("image-only", "text-only", "image-plus-text", "combiner")


def make_scorer(name: str, params: CombinerParams | None = None) -> Scorer:
    if name == "image-only":
        return ImageOnlyScorer()
    if name == "text-only":
        return TextOnlyScorer()
    if name == "image-plus-text":
        return ImagePlusTextScorer()
    if name == "combiner":
        if params is None:
            raise ValueError("combiner scorer requires trained parameters")
        return CombinerScorer(params)
    raise ValueError(f"unknown scorer {name!r}; choose from {SCORER_NAMES}")


def score_gallery(
    scorer: Scorer, template: RetrievalTemplate, table: EmbeddingTable
) -> np.ndarray:
    """Cosine score of every gallery member, in gallery order."""
    return scorer.score_gallery(template, table)


def _rank_of_positive(scores: np.ndarray, positive_index: int) -> int:
    """Descending-score rank with ties broken by gallery index ascending."""
    target = scores[positive_index]
    ahead = int(np.sum(scores > target))
    ahead += int(np.sum(scores[:positive_index] == target))
    return ahead


@dataclass
class TaskResult:
    count: int
    skipped: int
    recalls: dict[int, float]


@dataclass
class EvalReport:
    """Per-task Recall@K percentages plus their unweighted R@1 average."""

    scorer: str
    ks: tuple[int, ...]
    tasks: dict[str, TaskResult]
    average_r1: float

    def to_json(self) -> dict:
        return {
            "scorer": self.scorer,
            "ks": list(self.ks),
            "average_r1": self.average_r1,
            "tasks": {
                task: {
                    "count": res.count,
                    "skipped": res.skipped,
                    "recalls": {str(k): v for k, v in res.recalls.items()},
                }
                for task, res in self.tasks.items()
            },
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "EvalReport":
        tasks = {
            task: TaskResult(
                count=res["count"],
                skipped=res["skipped"],
                recalls={int(k): float(v) for k, v in res["recalls"].items()},
            )
            for task, res in obj["tasks"].items()
        }
        return cls(
            scorer=obj["scorer"],
            ks=tuple(obj["ks"]),
            tasks=tasks,
            average_r1=float(obj["average_r1"]),
        )

    def format_table(self) -> str:
        header = ["task", "n"] + [f"R@{k}" for k in self.ks]
        rows = [header]
        for task in sorted(self.tasks):
            res = self.tasks[task]
            rows.append(
                [task, str(res.count)]
                + [f"{res.recalls.get(k, float('nan')):.1f}" for k in self.ks])
        rows.append(["average", "", f"{self.average_r1:.1f}"]
                    + [""] * (len(self.ks) - 1))
        widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
        lines = []
        for i, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        return f"scorer: {self.scorer}\n" + "\n".join(lines)


def _check_ks(ks: Sequence[int]) -> tuple[int, ...]:
    out = tuple(sorted(set(int(k) for k in ks)))
    if not out or out[0] < 1:
        raise ValueError(f"ks must be positive integers, got {ks}")
    return out


def recall_at_k(
    templates: Sequence[RetrievalTemplate],
    scorer: Scorer,
    table: EmbeddingTable,
    ks: Sequence[int] = DEFAULT_KS,
    skip_missing: bool = False,
) -> EvalReport:
    """Curated-gallery protocol: rank each template's gallery independently.

    A template counts as a hit at K when its positive lands in the top K by
    score (ties resolved toward earlier gallery positions). Templates with
    missing embeddings raise, or are counted as skipped when skip_missing is
    set.
    """
    ks = _check_ks(ks)
    if not templates:
        raise EmptyTemplateSet("no templates to evaluate")
    hits: dict[str, dict[int, int]] = {}
    hits1: dict[str, int] = {}
    counts: dict[str, int] = {}
    skipped: dict[str, int] = {}
    for template in templates:
        task = template.task
        counts.setdefault(task, 0)
        skipped.setdefault(task, 0)
        hits1.setdefault(task, 0)
        hits.setdefault(task, {k: 0 for k in ks})
        try:
            scores = scorer.score_gallery(template, table)
        except MissingEmbedding:
            if not skip_missing:
                raise
            skipped[task] += 1
            continue
        rank = _rank_of_positive(scores, template.positive_index)
        counts[task] += 1
        if rank < 1:
            hits1[task] += 1
        for k in ks:
            if rank < k:
                hits[task][k] += 1
    if all(c == 0 for c in counts.values()):
        raise EmptyTemplateSet("every template was skipped")
    tasks: dict[str, TaskResult] = {}
    r1_values = []
    for task in sorted(counts):
        n = counts[task]
        recalls = {k: (100.0 * hits[task][k] / n if n else 0.0) for k in ks}
        tasks[task] = TaskResult(count=n, skipped=skipped[task], recalls=recalls)
        if n:
            r1_values.append(100.0 * hits1[task] / n)
    average = float(np.mean(r1_values))
    return EvalReport(scorer=scorer.name, ks=ks, tasks=tasks, average_r1=average)


def evaluate_global(
    queries: Sequence[tuple[str, str, str]],
    gallery_ids: Sequence[str],
    scorer: Scorer,
    table: EmbeddingTable,
    ks: Sequence[int] = GLOBAL_KS,
) -> dict[int, float]:
    """Global-gallery protocol: every query ranks the entire shared gallery.

    queries are (reference id, condition id, positive id) with positives drawn
    from gallery_ids.
    """
    ks = _check_ks(ks)
    if not queries:
        raise EmptyTemplateSet("no queries to evaluate")
    gallery_ids = list(gallery_ids)
    if len(set(gallery_ids)) != len(gallery_ids):
        raise ValueError("gallery ids must be unique")
    if len(gallery_ids) < ks[-1]:
        raise ValueError(
            f"gallery of {len(gallery_ids)} cannot support R@{ks[-1]}")
    position = {gid: i for i, gid in enumerate(gallery_ids)}
    gallery = table.batch(gallery_ids).astype(np.float64)
    hits = {k: 0 for k in ks}
    for ref_id, cond_id, positive_id in queries:
        if positive_id not in position:
            raise ValueError(f"positive {positive_id!r} is not in the gallery")
        ref = table.vector(ref_id).astype(np.float64)
        cond = table.vector(cond_id).astype(np.float64)
        scores = gallery @ scorer.query_vector(ref, cond)
        rank = _rank_of_positive(scores, position[positive_id])
        for k in ks:
            if rank < k:
                hits[k] += 1
    return {k: 100.0 * hits[k] / len(queries) for k in ks}

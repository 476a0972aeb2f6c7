"""Training loop: Adam over hand-computed gradients with cosine decay.

Triplets supply (reference image, condition text, target image) id keys into
an embedding table; the combiner parameters are the only trainable state. The
checkpoint returned is the one with the best validation Recall@1 seen during
the run.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .benchmark import RetrievalTemplate
from .combiner import (
    CombinerGrads,
    CombinerParams,
    combine_batch,
    iter_grad_arrays,
    iter_param_arrays,
    loss_and_grads,
)
from .embeddings import EmbeddingTable
from .errors import MissingEmbedding
from .evaluation import CombinerScorer, recall_at_k
from .mining import MinedTriplet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    temperature: float = 0.01
    batch_size: int = 256
    steps: int = 2000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    val_fraction: float = 0.1
    eval_interval: int = 100

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.batch_size < 2:
            raise ValueError(f"batch size must be >= 2, got {self.batch_size}")
        if self.steps < 0:
            raise ValueError(f"steps must be nonnegative, got {self.steps}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            val = getattr(self, name)
            if not 0.0 <= val < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {val}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.eval_interval < 1:
            raise ValueError(f"eval_interval must be >= 1, got {self.eval_interval}")


@dataclass(frozen=True)
class TrainLogRow:
    step: int
    loss: float
    lr: float
    val_r1: float | None = None


@dataclass
class TrainResult:
    params: CombinerParams
    log: list[TrainLogRow] = field(default_factory=list)
    best_val_r1: float | None = None
    best_step: int | None = None


def cosine_lr(base: float, step: int, total: int) -> float:
    """Cosine decay from base toward zero over the run."""
    if total <= 0:
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * step / total))


class AdamState:
    """First/second moment accumulators aligned with the parameter order."""

    def __init__(self, params: CombinerParams):
        self.moment1 = [np.zeros_like(arr) for _, arr in iter_param_arrays(params)]
        self.moment2 = [np.zeros_like(arr) for _, arr in iter_param_arrays(params)]
        self.t = 0

    def update(
        self,
        params: CombinerParams,
        grads: CombinerGrads,
        lr: float,
        config: TrainConfig,
    ) -> None:
        self.t += 1
        correct1 = 1.0 - config.beta1 ** self.t
        correct2 = 1.0 - config.beta2 ** self.t
        param_arrays = [arr for _, arr in iter_param_arrays(params)]
        grad_arrays = [arr for _, arr in iter_grad_arrays(grads)]
        for arr, grad, m1, m2 in zip(param_arrays, grad_arrays,
                                     self.moment1, self.moment2):
            m1 *= config.beta1
            m1 += (1.0 - config.beta1) * grad
            m2 *= config.beta2
            m2 += (1.0 - config.beta2) * grad * grad
            step = lr * (m1 / correct1) / (np.sqrt(m2 / correct2) + config.eps)
            arr -= step


def _check_triplet_keys(triplets: Sequence[MinedTriplet], table: EmbeddingTable) -> None:
    for t in triplets:
        for key in (t.reference_image_id, t.target_image_id, t.condition_text):
            if key not in table:
                raise MissingEmbedding(f"triplet references unembedded id {key!r}")


def _gather(
    triplets: Sequence[MinedTriplet], table: EmbeddingTable
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    refs = table.batch([t.reference_image_id for t in triplets]).astype(np.float64)
    conds = table.batch([t.condition_text for t in triplets]).astype(np.float64)
    tgts = table.batch([t.target_image_id for t in triplets]).astype(np.float64)
    return refs, conds, tgts


def _validation_r1(
    params: CombinerParams,
    val_triplets: Sequence[MinedTriplet],
    val_templates: Sequence[RetrievalTemplate] | None,
    table: EmbeddingTable,
) -> float | None:
    """R@1 on templates when given, else in-split ranking over val targets."""
    if val_templates:
        report = recall_at_k(val_templates, CombinerScorer(params), table, ks=(1,))
        return report.average_r1 / 100.0
    if not val_triplets:
        return None
    target_ids = sorted({t.target_image_id for t in val_triplets})
    gallery = table.batch(target_ids).astype(np.float64)
    refs, conds, _ = _gather(val_triplets, table)
    queries, _ = combine_batch(params, refs, conds)
    scores = queries @ gallery.T
    best = np.argmax(scores, axis=1)
    wanted = np.array([target_ids.index(t.target_image_id) for t in val_triplets])
    return float(np.mean(best == wanted))


def train(
    triplets: Sequence[MinedTriplet],
    table: EmbeddingTable,
    config: TrainConfig = TrainConfig(),
    val_templates: Sequence[RetrievalTemplate] | None = None,
    init_params: CombinerParams | None = None,
) -> TrainResult:
    """Optimize the combiner on mined triplets; returns the best checkpoint.

    Without explicit validation templates, a seeded val_fraction split of the
    triplets is held out and validated by ranking each held-out query against
    all held-out targets.
    """
    params = (init_params or CombinerParams.init(table.dim, seed=config.seed)).copy()
    if config.steps == 0:
        return TrainResult(params=params)
    if not triplets:
        raise ValueError("cannot train on zero triplets")
    _check_triplet_keys(triplets, table)
    if val_templates:
        for tmpl in val_templates:
            for key in (tmpl.reference.key, tmpl.condition,
                        *(t.key for t in tmpl.gallery)):
                if key not in table:
                    raise MissingEmbedding(
                        f"validation template references unembedded id {key!r}")

    rng = np.random.default_rng(config.seed)
    triplets = list(triplets)
    if val_templates:
        train_triplets = triplets
        val_triplets: list[MinedTriplet] = []
    else:
        n_val = int(round(config.val_fraction * len(triplets)))
        order = rng.permutation(len(triplets))
        val_triplets = [triplets[i] for i in order[:n_val]]
        train_triplets = [triplets[i] for i in order[n_val:]]
        if not train_triplets:
            train_triplets, val_triplets = triplets, []
    refs, conds, tgts = _gather(train_triplets, table)
    n = len(train_triplets)
    batch_size = min(config.batch_size, n)
    if batch_size < 2:
        raise ValueError("need at least 2 training triplets per batch")

    best_params = params.copy()
    best_r1: float | None = None
    best_step: int | None = None
    adam = AdamState(params)
    log: list[TrainLogRow] = []
    order = np.array([], dtype=np.int64)
    cursor = 0
    for step in range(config.steps):
        if cursor + batch_size > len(order):
            order = rng.permutation(n)
            cursor = 0
        batch = order[cursor:cursor + batch_size]
        cursor += batch_size
        lr = cosine_lr(config.learning_rate, step, config.steps)
        loss, grads = loss_and_grads(
            params, refs[batch], conds[batch], tgts[batch], config.temperature)
        adam.update(params, grads, lr, config)
        val_r1: float | None = None
        if (step + 1) % config.eval_interval == 0 or step + 1 == config.steps:
            val_r1 = _validation_r1(params, val_triplets, val_templates, table)
            if val_r1 is not None and (best_r1 is None or val_r1 > best_r1):
                best_r1, best_step = val_r1, step + 1
                best_params = params.copy()
        log.append(TrainLogRow(step=step + 1, loss=loss, lr=lr, val_r1=val_r1))
        if val_r1 is not None:
            logger.info("step %d: loss %.4f, lr %.2e, val R@1 %.3f",
                        step + 1, loss, lr, val_r1)
    if best_r1 is None:
        best_params, best_step = params.copy(), config.steps
    return TrainResult(
        params=best_params, log=log, best_val_r1=best_r1, best_step=best_step)


def write_train_log(rows: Sequence[TrainLogRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr", "val_r1"])
        for row in rows:
            writer.writerow([
                row.step,
                f"{row.loss:.10g}",
                f"{row.lr:.10g}",
                "" if row.val_r1 is None else f"{row.val_r1:.6f}",
            ])

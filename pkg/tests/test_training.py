"""Tests for the Adam training loop and its logging."""
from __future__ import annotations

import numpy as np
import pytest

from condsim.combiner import CombinerParams, iter_param_arrays
from condsim.embeddings import KIND_IMAGE, KIND_TEXT, EmbeddingTable, stub_embed
from condsim.errors import MissingEmbedding
from condsim.mining import MinedTriplet
from condsim.training import (
    TrainConfig,
    cosine_lr,
    train,
    write_train_log,
)


def _toy_problem(n: int = 48, dim: int = 8):
    """Targets are deterministic rotations of the reference by condition."""
    table = EmbeddingTable(dim=dim)
    triplets = []
    for i in range(n):
        ref = stub_embed(f"ref-{i}", dim, salt="toy")
        cond_id = f"cond-{i % 4}"
        shift = 1 + i % 4
        tgt = np.roll(ref, shift)
        table.add(f"ref-{i}", ref, KIND_IMAGE)
        table.add(f"tgt-{i}", tgt, KIND_IMAGE)
        if cond_id not in table:
            table.add(cond_id, stub_embed(cond_id, dim, salt="toy-cond"), KIND_TEXT)
        triplets.append(MinedTriplet(
            reference_image_id=f"ref-{i}",
            target_image_id=f"tgt-{i}",
            condition_text=cond_id,
            subject="s", reference_object="a", target_predicate="p",
            target_object="b",
        ))
    return table, triplets


def _params_equal(a: CombinerParams, b: CombinerParams) -> bool:
    pairs = zip(iter_param_arrays(a), iter_param_arrays(b))
    return all(na == nb and np.array_equal(x, y) for (na, x), (nb, y) in pairs)


class TestCosineSchedule:
    def test_starts_at_base(self):
        assert cosine_lr(0.5, 0, 100) == 0.5

    def test_ends_near_zero(self):
        assert cosine_lr(0.5, 100, 100) == pytest.approx(0.0, abs=1e-12)

    def test_halfway_is_half(self):
        assert cosine_lr(0.5, 50, 100) == pytest.approx(0.25)

    def test_monotone_decreasing(self):
        values = [cosine_lr(1.0, s, 64) for s in range(65)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestTrain:
    def test_zero_steps_returns_initial_params(self):
        table, triplets = _toy_problem()
        init = CombinerParams.init(dim=8, seed=5)
        result = train(triplets, table,
                       TrainConfig(steps=0, batch_size=8, seed=5),
                       init_params=init)
        assert result.params is not init
        assert _params_equal(result.params, init)
        assert result.log == []

    def test_deterministic(self):
        table, triplets = _toy_problem()
        config = TrainConfig(steps=30, batch_size=8, eval_interval=10)
        first = train(triplets, table, config)
        second = train(triplets, table, config)
        assert _params_equal(first.params, second.params)
        assert first.log == second.log

    def test_seed_changes_run(self):
        table, triplets = _toy_problem()
        a = train(triplets, table, TrainConfig(steps=10, batch_size=8, seed=0))
        b = train(triplets, table, TrainConfig(steps=10, batch_size=8, seed=1))
        assert not _params_equal(a.params, b.params)

    def test_loss_decreases(self):
        table, triplets = _toy_problem()
        result = train(triplets, table,
                       TrainConfig(steps=150, batch_size=16, eval_interval=50))
        assert result.log[-1].loss < result.log[0].loss

    def test_validation_tracked_and_best_kept(self):
        table, triplets = _toy_problem()
        result = train(triplets, table,
                       TrainConfig(steps=60, batch_size=8, eval_interval=20,
                                   val_fraction=0.25))
        vals = [row.val_r1 for row in result.log if row.val_r1 is not None]
        assert vals
        assert result.best_val_r1 == max(vals)
        best_rows = [row.step for row in result.log
                     if row.val_r1 == result.best_val_r1]
        assert result.best_step == best_rows[0]

    def test_empty_triplets_rejected(self):
        table, _ = _toy_problem()
        with pytest.raises(ValueError):
            train([], table, TrainConfig(steps=5, batch_size=4))

    def test_unembedded_triplet_rejected(self):
        table, triplets = _toy_problem()
        ghost = MinedTriplet(
            reference_image_id="ghost", target_image_id="tgt-0",
            condition_text="cond-0", subject="s", reference_object="a",
            target_predicate="p", target_object="b")
        with pytest.raises(MissingEmbedding):
            train(triplets + [ghost], table, TrainConfig(steps=5, batch_size=4))

    def test_log_covers_every_step_and_evals_on_interval(self):
        table, triplets = _toy_problem()
        result = train(triplets, table,
                       TrainConfig(steps=45, batch_size=8, eval_interval=20))
        assert [row.step for row in result.log] == list(range(1, 46))
        evaluated = [row.step for row in result.log if row.val_r1 is not None]
        assert evaluated == [20, 40, 45]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(temperature=0.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=1)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(val_fraction=1.0)


class TestTrainLog:
    def test_csv_layout(self, tmp_path):
        table, triplets = _toy_problem()
        result = train(triplets, table,
                       TrainConfig(steps=20, batch_size=8, eval_interval=10,
                                   val_fraction=0.25))
        path = tmp_path / "log.csv"
        write_train_log(result.log, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "step,loss,lr,val_r1"
        assert len(lines) == len(result.log) + 1
        first = lines[1].split(",")
        assert int(first[0]) == result.log[0].step

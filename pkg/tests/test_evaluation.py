"""Tests for scorers, ranking rules, and the Recall@K harness."""
from __future__ import annotations

import numpy as np
import pytest

from condsim.benchmark import RetrievalTemplate, TargetSpec
from condsim.combiner import CombinerParams, combiner_forward, conditional_score
from condsim.embeddings import KIND_IMAGE, KIND_TEXT, EmbeddingTable, StubEmbedder
from condsim.errors import EmptyTemplateSet, MissingEmbedding
from condsim.evaluation import (
    DEFAULT_KS,
    CombinerScorer,
    EvalReport,
    ImageOnlyScorer,
    ImagePlusTextScorer,
    Scorer,
    TextOnlyScorer,
    evaluate_global,
    make_scorer,
    recall_at_k,
    score_gallery,
)

DIM = 16


def _table(n_images: int = 40, n_conds: int = 6) -> EmbeddingTable:
    entries = [(f"img-{i}", KIND_IMAGE) for i in range(n_images)]
    entries += [(f"cond-{i}", KIND_TEXT) for i in range(n_conds)]
    return StubEmbedder(dim=DIM, salt="eval").build_table(entries)


def _template(ref: int, cond: int, gallery: list[int], positive: int,
              task: str = "focus_object") -> RetrievalTemplate:
    return RetrievalTemplate(
        task=task,
        reference=TargetSpec(image_id=f"img-{ref}"),
        condition=f"cond-{cond}",
        gallery=tuple(TargetSpec(image_id=f"img-{g}") for g in gallery),
        positive_index=positive,
    )


class TestScorers:
    def test_image_only_query_is_reference(self):
        table = _table()
        tmpl = _template(0, 0, [1, 2, 3], 0)
        scores = score_gallery(ImageOnlyScorer(), tmpl, table)
        ref = table.vector("img-0").astype(np.float64)
        expected = [float(table.vector(f"img-{g}") @ ref) for g in (1, 2, 3)]
        assert np.allclose(scores, expected, atol=1e-12)

    def test_text_only_query_is_condition(self):
        table = _table()
        tmpl = _template(0, 2, [1, 2], 1)
        scores = score_gallery(TextOnlyScorer(), tmpl, table)
        cond = table.vector("cond-2").astype(np.float64)
        assert scores[0] == pytest.approx(float(table.vector("img-1") @ cond))

    def test_image_plus_text_uses_normalized_mean(self):
        table = _table()
        tmpl = _template(3, 1, [4, 5], 0)
        scores = score_gallery(ImagePlusTextScorer(), tmpl, table)
        mean = (table.vector("img-3").astype(np.float64)
                + table.vector("cond-1").astype(np.float64)) / 2
        query = mean / np.linalg.norm(mean)
        assert scores[1] == pytest.approx(float(table.vector("img-5") @ query))

    def test_combiner_scorer_matches_direct_composition(self):
        table = _table()
        params = CombinerParams.init(dim=DIM, seed=2)
        scorer = CombinerScorer(params)
        rng = np.random.default_rng(0)
        for _ in range(100):
            ids = rng.choice(40, size=6, replace=False)
            tmpl = _template(int(ids[0]), int(rng.integers(6)),
                             [int(i) for i in ids[1:]], int(rng.integers(5)))
            scores = score_gallery(scorer, tmpl, table)
            ref = table.vector(tmpl.reference.key).astype(np.float64)
            cond = table.vector(tmpl.condition).astype(np.float64)
            query = combiner_forward(ref, cond, params)
            for j, spec in enumerate(tmpl.gallery):
                direct = conditional_score(
                    table.vector(spec.key).astype(np.float64), query)
                assert abs(scores[j] - direct) <= 1e-10

    def test_make_scorer_names(self):
        assert make_scorer("image-only").name == "image-only"
        assert make_scorer("text-only").name == "text-only"
        assert make_scorer("image-plus-text").name == "image-plus-text"
        params = CombinerParams.init(dim=DIM)
        assert make_scorer("combiner", params).name == "combiner"

    def test_make_scorer_rejects_unknown(self):
        with pytest.raises(ValueError):
            make_scorer("oracle")
        with pytest.raises(ValueError):
            make_scorer("combiner")


class _FixedScorer(Scorer):
    """Scores each gallery member by a preset mapping."""

    name = "fixed"

    def __init__(self, scores: dict[str, float]):
        self.scores = scores

    def query_vector(self, ref, cond):
        raise NotImplementedError

    def score_gallery(self, template, table):
        return np.array([self.scores[t.key] for t in template.gallery])


class TestRecallAtK:
    def test_hand_computed_recalls(self):
        table = _table()
        templates = [
            _template(0, 0, [1, 2, 3], 0),
            _template(0, 0, [4, 5, 6], 1),
            _template(0, 0, [7, 8, 9], 2),
        ]
        scorer = _FixedScorer({
            "img-1": 3.0, "img-2": 2.0, "img-3": 1.0,   # positive ranked 1st
            "img-4": 3.0, "img-5": 2.0, "img-6": 1.0,   # positive ranked 2nd
            "img-7": 3.0, "img-8": 2.0, "img-9": 1.0,   # positive ranked 3rd
        })
        report = recall_at_k(templates, scorer, table, ks=(1, 2, 3))
        recalls = report.tasks["focus_object"].recalls
        assert recalls[1] == pytest.approx(100 / 3)
        assert recalls[2] == pytest.approx(200 / 3)
        assert recalls[3] == pytest.approx(100.0)
        assert report.average_r1 == pytest.approx(100 / 3)

    def test_ties_resolve_by_gallery_index(self):
        table = _table()
        # positive shares the top score but sits later in the gallery
        tmpl = _template(0, 0, [1, 2], 1)
        scorer = _FixedScorer({"img-1": 1.0, "img-2": 1.0})
        report = recall_at_k([tmpl], scorer, table, ks=(1, 2))
        assert report.tasks["focus_object"].recalls[1] == 0.0
        assert report.tasks["focus_object"].recalls[2] == 100.0

    def test_monotone_in_k(self, random_scorer):
        table = _table()
        rng = np.random.default_rng(3)
        templates = []
        for _ in range(60):
            ids = rng.choice(40, size=8, replace=False)
            templates.append(_template(
                int(ids[0]), int(rng.integers(6)),
                [int(i) for i in ids[1:]], int(rng.integers(7))))
        for scorer in (ImageOnlyScorer(), TextOnlyScorer(), random_scorer):
            report = recall_at_k(templates, scorer, table, ks=(1, 2, 3, 5, 7))
            recalls = report.tasks["focus_object"].recalls
            values = [recalls[k] for k in sorted(recalls)]
            assert values == sorted(values)
            assert values[-1] == 100.0  # K = gallery size always hits

    def test_invariant_under_increasing_transform(self):
        table = _table()
        rng = np.random.default_rng(4)
        templates = []
        for _ in range(40):
            ids = rng.choice(40, size=6, replace=False)
            templates.append(_template(
                int(ids[0]), int(rng.integers(6)),
                [int(i) for i in ids[1:]], int(rng.integers(5))))
        base = ImagePlusTextScorer()

        class Warped(Scorer):
            name = "warped"

            def query_vector(self, ref, cond):
                raise NotImplementedError

            def score_gallery(self, template, tbl):
                return 3.0 * base.score_gallery(template, tbl) + 7.0

        plain = recall_at_k(templates, base, table)
        warped = recall_at_k(templates, Warped(), table)
        assert plain.tasks["focus_object"].recalls == \
            warped.tasks["focus_object"].recalls

    def test_invariant_under_template_order(self):
        table = _table()
        rng = np.random.default_rng(5)
        templates = []
        for _ in range(30):
            ids = rng.choice(40, size=6, replace=False)
            templates.append(_template(
                int(ids[0]), int(rng.integers(6)),
                [int(i) for i in ids[1:]], int(rng.integers(5))))
        scorer = ImageOnlyScorer()
        forward = recall_at_k(templates, scorer, table)
        backward = recall_at_k(templates[::-1], scorer, table)
        assert forward.tasks == backward.tasks

    def test_empty_templates_rejected(self):
        with pytest.raises(EmptyTemplateSet):
            recall_at_k([], ImageOnlyScorer(), _table())

    def test_missing_embedding_raises_by_default(self):
        table = _table(n_images=3)
        tmpl = _template(0, 0, [1, 2, 99], 0)
        with pytest.raises(MissingEmbedding):
            recall_at_k([tmpl], ImageOnlyScorer(), table)

    def test_skip_missing_counts_skips(self):
        table = _table(n_images=10)
        good = _template(0, 0, [1, 2], 0)
        bad = _template(0, 0, [1, 99], 0)
        report = recall_at_k([good, bad], ImageOnlyScorer(), table,
                             skip_missing=True)
        res = report.tasks["focus_object"]
        assert (res.count, res.skipped) == (1, 1)

    def test_all_skipped_rejected(self):
        table = _table(n_images=3)
        bad = _template(0, 0, [1, 99], 0)
        with pytest.raises(EmptyTemplateSet):
            recall_at_k([bad], ImageOnlyScorer(), table, skip_missing=True)

    def test_average_over_tasks_unweighted(self):
        table = _table()
        hit = _FixedScorer({f"img-{i}": float(-i) for i in range(40)})
        # positive first in one task (hit), last in the other (miss)
        templates = [
            _template(0, 0, [1, 2, 3], 0, task="focus_object"),
            _template(0, 0, [1, 2, 3], 2, task="change_object"),
            _template(0, 0, [4, 5, 6], 0, task="change_object"),
        ]
        report = recall_at_k(templates, hit, table, ks=(1,))
        # 100% on focus_object, 50% on change_object -> unweighted mean 75%
        assert report.average_r1 == pytest.approx(75.0)


class TestGlobalRetrieval:
    def test_hand_case(self):
        table = _table()
        scorer = ImageOnlyScorer()
        gallery_ids = [f"img-{i}" for i in range(1, 31)]
        queries = [("img-1", "cond-0", "img-1")]
        # img-1 scores 1.0 against itself, so rank 0
        result = evaluate_global(queries, gallery_ids, scorer, table,
                                 ks=(1, 5, 10))
        assert result[1] == 100.0

    def test_positive_absent_rejected(self):
        table = _table()
        with pytest.raises(ValueError):
            evaluate_global([("img-0", "cond-0", "img-39")],
                            [f"img-{i}" for i in range(1, 11)],
                            ImageOnlyScorer(), table, ks=(1,))

    def test_small_gallery_rejected(self):
        table = _table()
        with pytest.raises(ValueError):
            evaluate_global([("img-0", "cond-0", "img-1")],
                            ["img-1", "img-2"], ImageOnlyScorer(), table,
                            ks=(1, 5, 10))


class TestEvalReport:
    def test_json_round_trip(self):
        table = _table()
        templates = [_template(0, 0, [1, 2, 3], 0)]
        report = recall_at_k(templates, ImageOnlyScorer(), table)
        assert EvalReport.from_json(report.to_json()) == report

    def test_format_table_lists_tasks_and_average(self):
        table = _table()
        templates = [_template(0, 0, [1, 2, 3], 0)]
        report = recall_at_k(templates, ImageOnlyScorer(), table,
                             ks=DEFAULT_KS)
        text = report.format_table()
        assert "focus_object" in text
        assert "average" in text
        assert "R@1" in text

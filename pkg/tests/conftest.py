"""Shared fixtures: the bundled synthetic corpus and deterministic scorers."""
from __future__ import annotations

import hashlib

import numpy as np
import pytest

from condsim import benchmark, synthetic
from condsim.evaluation import Scorer


class HashRandomScorer(Scorer):
    """Uniform-random gallery scores, reproducible per template."""

    name = "hash-random"

    def __init__(self, salt: str = ""):
        self.salt = salt

    def query_vector(self, ref, cond):
        raise NotImplementedError("scores are drawn per gallery, not per query")

    def score_gallery(self, template, table):
        label = "|".join(
            [self.salt, template.reference.key, template.condition]
            + [t.key for t in template.gallery])
        seed = int.from_bytes(hashlib.sha256(label.encode()).digest()[:8], "little")
        rng = np.random.default_rng(seed)
        return rng.standard_normal(len(template.gallery))


@pytest.fixture(scope="session")
def store():
    return synthetic.build_store(seed=0)


@pytest.fixture(scope="session")
def all_templates(store):
    return benchmark.build_all_tasks(store, seed=0)


@pytest.fixture(scope="session")
def block_world():
    return synthetic.build_block_world(seed=0)


@pytest.fixture
def random_scorer():
    return HashRandomScorer()

"""Frozen deterministic encoders with a name registry."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ModelLoadError


@dataclass(frozen=True)
class ModelSpec:
    """Registry entry: embedding width and input grid of one frozen model."""

    name: str
    dim: int
    image_size: int


MODELS = {
    spec.name: spec
    for spec in (
        ModelSpec(name="gray-proj-64", dim=64, image_size=32),
        ModelSpec(name="gray-proj-32", dim=32, image_size=16),
    )
}


def _seeded_rng(*labels: str) -> np.random.Generator:
    tag = "|".join(labels).encode("utf-8")
    seed = int.from_bytes(hashlib.sha256(tag).digest()[:8], "little")
    return np.random.default_rng(seed)


class FrozenEncoder:
    """Fixed random projection for images, salted hash draws for texts.

    Weights are a pure function of the model name, so outputs are stable
    across processes and machines.
    """

    def __init__(self, spec: ModelSpec):
        self.name = spec.name
        self.dim = spec.dim
        self.image_size = spec.image_size
        features = spec.image_size * spec.image_size + 1
        rng = _seeded_rng("embed-exporter", spec.name, "image")
        self._projection = rng.standard_normal((spec.dim, features))
        self._projection /= np.sqrt(features)

    def encode_images(self, batch: np.ndarray) -> np.ndarray:
        """Embed (n, S, S) pixel grids into unit rows."""
        if batch.ndim != 3 or batch.shape[1:] != (self.image_size, self.image_size):
            raise ValueError(
                f"expected (n, {self.image_size}, {self.image_size}) batch, "
                f"got {batch.shape}")
        flat = batch.reshape(batch.shape[0], -1).astype(np.float64)
        # constant coordinate keeps the projection away from the zero vector
        ones = np.ones((batch.shape[0], 1))
        feats = np.concatenate([flat, ones], axis=1) @ self._projection.T
        norms = np.linalg.norm(feats, axis=1, keepdims=True)
        if not np.all(norms > 0):
            raise ValueError("projection collapsed an input to zero")
        return feats / norms

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        """Embed raw strings into unit rows, one seeded draw per string."""
        rows = np.empty((len(texts), self.dim))
        for i, text in enumerate(texts):
            rng = _seeded_rng("embed-exporter", self.name, "text", text)
            vec = rng.standard_normal(self.dim)
            rows[i] = vec / np.linalg.norm(vec)
        return rows


def load_model(name: str) -> FrozenEncoder:
    """Instantiate a registered encoder; the name fixes every weight."""
    spec = MODELS.get(name)
    if spec is None:
        available = ", ".join(sorted(MODELS))
        raise ModelLoadError(f"unknown model {name!r}; available: {available}")
    return FrozenEncoder(spec)

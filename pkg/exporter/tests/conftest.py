"""Shared fixtures: tiny PNG files and manifest writers."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image


def make_png(path: Path, width: int, height: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    Image.fromarray(pixels, mode="RGB").save(path)


def write_manifest(path: Path, rows: list[dict]) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


@pytest.fixture
def image_dir(tmp_path):
    root = tmp_path / "imgs"
    root.mkdir()
    for i, (w, h) in enumerate([(64, 48), (40, 40), (32, 80), (100, 60)]):
        make_png(root / f"img{i}.png", w, h, seed=i)
    (root / "broken.png").write_bytes(b"this is not an image")
    return root

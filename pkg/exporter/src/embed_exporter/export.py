"""Export orchestration: manifest rows -> unit embeddings -> GCEB file."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ImageDecodeError
from .gceb import write_gceb
from .imaging import load_image, preprocess
from .manifest import KIND_IMAGE, ManifestRow
from .models import FrozenEncoder

UNIT_NORM_TOL = 1e-4


@dataclass(frozen=True)
class ExportResult:
    """What ended up in the file and what had to be skipped."""

    written: tuple[str, ...]
    skipped: tuple[tuple[str, str], ...]
    dim: int

    @property
    def ok(self) -> bool:
        return not self.skipped


def _batched(values: list, size: int):
    for start in range(0, len(values), size):
        yield start, values[start:start + size]


def export_embeddings(
    rows: list[ManifestRow],
    encoder: FrozenEncoder,
    out_path: str | Path,
    sidecar: str | Path | None = None,
    batch_size: int = 32,
) -> ExportResult:
    """Embed every manifest row in order; undecodable images are skipped."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    kept: list[ManifestRow] = []
    grids: dict[str, np.ndarray] = {}
    skipped: list[tuple[str, str]] = []
    for row in rows:
        if row.kind == KIND_IMAGE:
            try:
                img = load_image(row.path, row.id)
                grids[row.id] = preprocess(img, row.crop, encoder.image_size)
            except ImageDecodeError as exc:
                skipped.append((row.id, str(exc)))
                continue
        kept.append(row)

    matrix = np.zeros((len(kept), encoder.dim))
    image_slots = [i for i, row in enumerate(kept) if row.kind == KIND_IMAGE]
    text_slots = [i for i, row in enumerate(kept) if row.kind != KIND_IMAGE]
    for _, chunk in _batched(image_slots, batch_size):
        batch = np.stack([grids[kept[i].id] for i in chunk])
        matrix[chunk] = encoder.encode_images(batch)
    for _, chunk in _batched(text_slots, batch_size):
        matrix[chunk] = encoder.encode_texts([kept[i].text for i in chunk])

    rows32 = matrix.astype(np.float32)
    if len(kept):
        norms = np.linalg.norm(rows32.astype(np.float64), axis=1)
        worst = float(np.abs(norms - 1.0).max())
        if worst > UNIT_NORM_TOL:
            raise ValueError(f"row norm off unit by {worst:.2e}")
    write_gceb(rows32, [(row.id, row.kind) for row in kept], out_path, sidecar)
    return ExportResult(
        written=tuple(row.id for row in kept),
        skipped=tuple(skipped),
        dim=encoder.dim,
    )

"""GCEB embedding file writer: binary matrix plus a row-id sidecar."""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

GCEB_MAGIC = b"GCEB"
GCEB_VERSION = 1


def default_sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".ids.jsonl")


def write_gceb(
    rows: np.ndarray,
    entries: Sequence[tuple[str, str]],
    path: str | Path,
    sidecar: str | Path | None = None,
) -> None:
    """Write float32 rows and their (id, kind) sidecar in row order."""
    path = Path(path)
    sidecar = default_sidecar_path(path) if sidecar is None else Path(sidecar)
    if rows.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {rows.shape}")
    if rows.shape[0] != len(entries):
        raise ValueError(
            f"{rows.shape[0]} rows but {len(entries)} sidecar entries")
    data = np.ascontiguousarray(rows, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(GCEB_MAGIC)
        fh.write(struct.pack("<IIQ", GCEB_VERSION, rows.shape[1], rows.shape[0]))
        fh.write(data.tobytes(order="C"))
    with open(sidecar, "w", encoding="utf-8") as fh:
        for row, (key, kind) in enumerate(entries):
            fh.write(json.dumps({"row": row, "id": key, "kind": kind}) + "\n")

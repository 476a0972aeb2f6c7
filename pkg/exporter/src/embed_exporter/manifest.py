"""Manifest parsing: one JSON row per item to embed, image or text."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .errors import ManifestError

KIND_IMAGE = "image"
KIND_TEXT = "text"
KINDS = (KIND_IMAGE, KIND_TEXT)

_CROP_KEYS = ("x", "y", "w", "h", "pad_left", "pad_right", "pad_top", "pad_bottom")


@dataclass(frozen=True)
class CropWindow:
    """Dilated object box plus the zero padding that squares it, in pixels."""

    x: float
    y: float
    w: float
    h: float
    pad_left: float
    pad_right: float
    pad_top: float
    pad_bottom: float

    def side(self) -> float:
        return self.w + self.pad_left + self.pad_right

    @classmethod
    def from_json(cls, obj: Mapping) -> "CropWindow":
        values = {}
        for key in _CROP_KEYS:
            value = obj.get(key)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ManifestError(f"crop field {key!r} must be a number")
            values[key] = float(value)
        window = cls(**values)
        if window.w <= 0 or window.h <= 0:
            raise ManifestError("crop box must have positive width and height")
        if min(window.pad_left, window.pad_right,
               window.pad_top, window.pad_bottom) < 0:
            raise ManifestError("crop padding must be non-negative")
        height = window.h + window.pad_top + window.pad_bottom
        if abs(window.side() - height) > 0.5:
            raise ManifestError(
                f"crop is not square after padding: {window.side()} x {height}")
        return window


@dataclass(frozen=True)
class ManifestRow:
    """One item to embed: an image path (optionally cropped) or a text."""

    id: str
    kind: str
    path: Path | None = None
    crop: CropWindow | None = None
    text: str | None = None


def _parse_row(obj: Mapping, base: Path) -> ManifestRow:
    row_id = obj.get("id")
    if not isinstance(row_id, str) or not row_id:
        raise ManifestError("row needs a non-empty string 'id'")
    kind = obj.get("kind")
    if kind not in KINDS:
        raise ManifestError(f"kind must be one of {KINDS}, got {kind!r}")
    if kind == KIND_TEXT:
        text = obj.get("text")
        if not isinstance(text, str):
            raise ManifestError("text row needs a string 'text'")
        if "crop" in obj or "path" in obj:
            raise ManifestError("text row cannot carry 'path' or 'crop'")
        return ManifestRow(id=row_id, kind=kind, text=text)
    path = obj.get("path")
    if not isinstance(path, str) or not path:
        raise ManifestError("image row needs a non-empty string 'path'")
    crop = obj.get("crop")
    window = None
    if crop is not None:
        if not isinstance(crop, Mapping):
            raise ManifestError("crop must be an object")
        window = CropWindow.from_json(crop)
    # relative paths resolve against the manifest location
    resolved = Path(path)
    if not resolved.is_absolute():
        resolved = base / resolved
    return ManifestRow(id=row_id, kind=kind, path=resolved, crop=window)


def read_manifest(path: str | Path) -> list[ManifestRow]:
    """Load manifest rows in file order; ids must be unique."""
    path = Path(path)
    rows: list[ManifestRow] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON ({exc.msg})",
                                    str(path), lineno) from exc
            if not isinstance(obj, dict):
                raise ManifestError("row must be a JSON object", str(path), lineno)
            try:
                row = _parse_row(obj, path.parent)
            except ManifestError as exc:
                raise ManifestError(str(exc), str(path), lineno) from exc
            if row.id in seen:
                raise ManifestError(f"duplicate id {row.id!r}", str(path), lineno)
            seen.add(row.id)
            rows.append(row)
    if not rows:
        raise ManifestError("manifest has no rows", str(path))
    return rows

"""Manifest schema: row shapes, id uniqueness, crop validation."""
from __future__ import annotations

import pytest

from embed_exporter import CropWindow, ManifestError, read_manifest

from conftest import write_manifest


def _square_crop(x=4, y=6, w=10, h=8):
    return {"x": x, "y": y, "w": w, "h": h,
            "pad_left": 0, "pad_right": 0, "pad_top": 1, "pad_bottom": 1}


class TestReadManifest:
    def test_rows_in_file_order(self, tmp_path):
        path = write_manifest(tmp_path / "m.jsonl", [
            {"id": "a", "kind": "image", "path": "a.png"},
            {"id": "b", "kind": "text", "text": "wearing a hat"},
            {"id": "c", "kind": "image", "path": "c.png",
             "crop": _square_crop()},
        ])
        rows = read_manifest(path)
        assert [r.id for r in rows] == ["a", "b", "c"]
        assert [r.kind for r in rows] == ["image", "text", "image"]
        assert rows[1].text == "wearing a hat"
        assert rows[2].crop == CropWindow(4, 6, 10, 8, 0, 0, 1, 1)

    def test_relative_paths_resolve_against_manifest(self, tmp_path):
        nested = tmp_path / "sub"
        nested.mkdir()
        path = write_manifest(nested / "m.jsonl", [
            {"id": "a", "kind": "image", "path": "pics/a.png"},
        ])
        assert read_manifest(path)[0].path == nested / "pics" / "a.png"

    def test_absolute_path_kept(self, tmp_path):
        path = write_manifest(tmp_path / "m.jsonl", [
            {"id": "a", "kind": "image", "path": "/data/a.png"},
        ])
        assert str(read_manifest(path)[0].path) == "/data/a.png"

    def test_duplicate_id_rejected(self, tmp_path):
        path = write_manifest(tmp_path / "m.jsonl", [
            {"id": "a", "kind": "text", "text": "x"},
            {"id": "a", "kind": "text", "text": "y"},
        ])
        with pytest.raises(ManifestError, match="m.jsonl:2"):
            read_manifest(path)

    def test_unknown_kind_rejected(self, tmp_path):
        path = write_manifest(tmp_path / "m.jsonl", [
            {"id": "a", "kind": "audio", "text": "x"},
        ])
        with pytest.raises(ManifestError, match="kind"):
            read_manifest(path)

    def test_image_row_needs_path(self, tmp_path):
        path = write_manifest(tmp_path / "m.jsonl", [
            {"id": "a", "kind": "image"},
        ])
        with pytest.raises(ManifestError, match="path"):
            read_manifest(path)

    def test_text_row_rejects_crop(self, tmp_path):
        path = write_manifest(tmp_path / "m.jsonl", [
            {"id": "a", "kind": "text", "text": "x", "crop": _square_crop()},
        ])
        with pytest.raises(ManifestError, match="crop"):
            read_manifest(path)

    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"id": "a", "kind": "text", "text": "x"}\nnot json\n')
        with pytest.raises(ManifestError, match="m.jsonl:2"):
            read_manifest(path)

    def test_empty_manifest_rejected(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("\n")
        with pytest.raises(ManifestError, match="no rows"):
            read_manifest(path)

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_manifest(tmp_path / "absent.jsonl")


class TestCropWindow:
    def test_side_includes_padding(self):
        window = CropWindow(0, 0, 10, 8, 1, 1, 2, 2)
        assert window.side() == 12.0

    def test_zero_width_rejected(self):
        with pytest.raises(ManifestError, match="positive"):
            CropWindow.from_json({**_square_crop(), "w": 0})

    def test_negative_padding_rejected(self):
        with pytest.raises(ManifestError, match="non-negative"):
            CropWindow.from_json({**_square_crop(), "pad_top": -1})

    def test_non_square_rejected(self):
        bad = {**_square_crop(), "pad_bottom": 5}
        with pytest.raises(ManifestError, match="square"):
            CropWindow.from_json(bad)

    def test_boolean_field_rejected(self):
        with pytest.raises(ManifestError, match="number"):
            CropWindow.from_json({**_square_crop(), "x": True})

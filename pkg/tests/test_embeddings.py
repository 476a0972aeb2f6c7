"""Tests for stub embeddings, the table, and the binary file format."""
from __future__ import annotations

import struct

import numpy as np
import pytest

from condsim.embeddings import (
    GCEB_MAGIC,
    KIND_IMAGE,
    KIND_TEXT,
    EmbeddingTable,
    StubEmbedder,
    default_sidecar_path,
    read_gceb,
    stub_embed,
    write_gceb,
)
from condsim.errors import (
    DimensionMismatch,
    IntegrityError,
    MissingEmbedding,
    SchemaError,
)


class TestStubEmbed:
    def test_unit_norm(self):
        vec = stub_embed("anything", 64)
        assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-12)

    def test_deterministic(self):
        assert np.array_equal(stub_embed("key", 32), stub_embed("key", 32))

    def test_salt_changes_vector(self):
        assert not np.array_equal(
            stub_embed("key", 32, salt="a"), stub_embed("key", 32, salt="b"))

    def test_key_changes_vector(self):
        assert not np.array_equal(stub_embed("a", 32), stub_embed("b", 32))

    def test_tiny_dim_rejected(self):
        with pytest.raises(DimensionMismatch):
            stub_embed("key", 1)

    def test_near_orthogonality_sweep(self):
        # frozen sweep: 10k keys at D=64 measured max|cos| = 0.645262
        dim, n, salt = 64, 10_000, "acceptance"
        mat = np.empty((n, dim))
        for i in range(n):
            mat[i] = stub_embed(f"key-{i}", dim, salt=salt)
        worst = 0.0
        block = 1000
        for a in range(0, n, block):
            sims = np.abs(mat[a:a + block] @ mat.T)
            for r in range(sims.shape[0]):
                sims[r, a + r] = 0.0
            worst = max(worst, float(sims.max()))
        assert worst == pytest.approx(0.645262, abs=1e-3)
        assert worst < 0.66


class TestEmbeddingTable:
    def test_add_and_fetch(self):
        table = EmbeddingTable(dim=8)
        vec = stub_embed("img-1", 8)
        table.add("img-1", vec, KIND_IMAGE)
        # rows are held in the file format's native 32-bit precision
        assert np.array_equal(table.vector("img-1"), vec.astype(np.float32))
        assert table.kind("img-1") == KIND_IMAGE

    def test_duplicate_id_rejected(self):
        table = EmbeddingTable(dim=8)
        table.add("x", stub_embed("x", 8), KIND_IMAGE)
        with pytest.raises(IntegrityError):
            table.add("x", stub_embed("x2", 8), KIND_IMAGE)

    def test_unknown_kind_rejected(self):
        table = EmbeddingTable(dim=8)
        with pytest.raises(ValueError):
            table.add("x", stub_embed("x", 8), "audio")

    def test_non_unit_rejected(self):
        table = EmbeddingTable(dim=8)
        with pytest.raises(IntegrityError):
            table.add("x", stub_embed("x", 8) * 1.01, KIND_IMAGE)

    def test_wrong_dim_rejected(self):
        table = EmbeddingTable(dim=8)
        with pytest.raises(DimensionMismatch):
            table.add("x", stub_embed("x", 16), KIND_IMAGE)

    def test_missing_id(self):
        table = EmbeddingTable(dim=8)
        with pytest.raises(MissingEmbedding):
            table.vector("ghost")

    def test_batch_in_order(self):
        table = StubEmbedder(dim=8).build_table(
            [("a", KIND_IMAGE), ("b", KIND_IMAGE), ("c", KIND_TEXT)])
        batch = table.batch(["c", "a"])
        assert np.array_equal(batch[0], table.vector("c"))
        assert np.array_equal(batch[1], table.vector("a"))
        assert table.batch([]).shape == (0, 8)

    def test_contains_and_len(self):
        table = StubEmbedder(dim=8).build_table([("a", KIND_IMAGE)])
        assert "a" in table and "b" not in table
        assert len(table) == 1


class TestGcebFormat:
    def _table(self, n=17, dim=12):
        entries = [(f"img-{i}", KIND_IMAGE) for i in range(n - 3)]
        entries += [(f"cond {i}", KIND_TEXT) for i in range(3)]
        return StubEmbedder(dim=dim, salt="fmt").build_table(entries)

    def test_round_trip_values_exact(self, tmp_path):
        table = self._table()
        path = tmp_path / "emb.gceb"
        write_gceb(table, path)
        again = read_gceb(path)
        assert len(again) == len(table)
        expected = table.matrix().astype("<f4").astype(np.float64)
        assert np.array_equal(again.matrix(), expected)
        for i in range(len(table)):
            key = f"img-{i}" if i < 14 else f"cond {i - 14}"
            assert again.kind(key) == table.kind(key)

    def test_rewrite_byte_identical(self, tmp_path):
        table = self._table()
        first = tmp_path / "a.gceb"
        second = tmp_path / "b.gceb"
        write_gceb(table, first)
        write_gceb(read_gceb(first), second)
        assert first.read_bytes() == second.read_bytes()
        assert (default_sidecar_path(first).read_bytes()
                == default_sidecar_path(second).read_bytes())

    def test_header_layout(self, tmp_path):
        table = self._table(n=5, dim=12)
        path = tmp_path / "emb.gceb"
        write_gceb(table, path)
        blob = path.read_bytes()
        assert blob[:4] == GCEB_MAGIC
        version, dim, count = struct.unpack_from("<IIQ", blob, 4)
        assert (version, dim, count) == (1, 12, 5)
        assert len(blob) == 4 + struct.calcsize("<IIQ") + 5 * 12 * 4

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "emb.gceb"
        write_gceb(self._table(), path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(SchemaError):
            read_gceb(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "emb.gceb"
        write_gceb(self._table(), path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-7])
        with pytest.raises(SchemaError):
            read_gceb(path)

    def test_sidecar_row_out_of_range(self, tmp_path):
        path = tmp_path / "emb.gceb"
        write_gceb(self._table(n=4), path)
        sidecar = default_sidecar_path(path)
        lines = sidecar.read_text().splitlines()
        lines[0] = lines[0].replace('"row": 0', '"row": 99')
        sidecar.write_text("\n".join(lines) + "\n")
        with pytest.raises(SchemaError):
            read_gceb(path)

    def test_missing_sidecar(self, tmp_path):
        path = tmp_path / "emb.gceb"
        write_gceb(self._table(), path)
        default_sidecar_path(path).unlink()
        with pytest.raises(FileNotFoundError):
            read_gceb(path)

"""Unit-vector embedding storage, binary file IO, and the stub embedder.

Embeddings are float32 rows keyed by string ids, each tagged as an image or
text embedding. The on-disk format is a small versioned binary (magic "GCEB")
with a JSONL sidecar mapping rows to ids.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, IntegrityError, MissingEmbedding, SchemaError

GCEB_MAGIC = b"GCEB"
GCEB_VERSION = 1
UNIT_NORM_TOL = 1e-4

KIND_IMAGE = "image"
KIND_TEXT = "text"
_KINDS = (KIND_IMAGE, KIND_TEXT)


@dataclass
class EmbeddingTable:
    """id -> unit float32 vector with an image/text kind tag."""

    dim: int
    _rows: list[np.ndarray] = field(default_factory=list, repr=False)
    _ids: list[str] = field(default_factory=list, repr=False)
    _kinds: list[str] = field(default_factory=list, repr=False)
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise DimensionMismatch(f"dim must be positive, got {self.dim}")

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def ids(self) -> list[str]:
        return list(self._ids)

    def add(self, key: str, vector: np.ndarray, kind: str) -> None:
        if key in self._index:
            raise IntegrityError(f"duplicate embedding id {key!r}")
        if kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}, got {kind!r}")
        vec = np.asarray(vector, dtype=np.float32).reshape(-1)
        if vec.shape != (self.dim,):
            raise DimensionMismatch(
                f"vector for {key!r} has shape {np.asarray(vector).shape}, "
                f"expected ({self.dim},)")
        norm = float(np.linalg.norm(vec.astype(np.float64)))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise IntegrityError(f"vector for {key!r} has norm {norm:.6f}, not unit")
        self._index[key] = len(self._rows)
        self._rows.append(vec)
        self._ids.append(key)
        self._kinds.append(kind)

    def vector(self, key: str) -> np.ndarray:
        row = self._index.get(key)
        if row is None:
            raise MissingEmbedding(f"no embedding stored for id {key!r}")
        return self._rows[row]

    def kind(self, key: str) -> str:
        row = self._index.get(key)
        if row is None:
            raise MissingEmbedding(f"no embedding stored for id {key!r}")
        return self._kinds[row]

    def batch(self, keys: Sequence[str]) -> np.ndarray:
        """Stack vectors for the given keys into a (n, dim) float32 array."""
        if not keys:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack([self.vector(k) for k in keys])

    def matrix(self) -> np.ndarray:
        return self.batch(self._ids)


def stub_embed(key: str, dim: int, salt: str = "") -> np.ndarray:
    """Deterministic pseudorandom unit direction for (key, dim, salt)."""
    if dim < 2:
        raise DimensionMismatch(f"stub embeddings need dim >= 2, got {dim}")
    digest = hashlib.sha256(f"{salt}|{key}".encode("utf-8")).digest()
    seed = int.from_bytes(digest[:16], "little")
    vec = np.random.default_rng(seed).standard_normal(dim)
    return vec / np.linalg.norm(vec)


@dataclass(frozen=True)
class StubEmbedder:
    """Convenience wrapper fixing (dim, salt) for repeated stub lookups."""

    dim: int
    salt: str = ""

    def embed(self, key: str) -> np.ndarray:
        return stub_embed(key, self.dim, self.salt)

    def build_table(self, entries: Iterable[tuple[str, str]]) -> EmbeddingTable:
        """Fill a table from (id, kind) pairs."""
        table = EmbeddingTable(dim=self.dim)
        for key, kind in entries:
            table.add(key, self.embed(key), kind)
        return table


def default_sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".ids.jsonl")


def write_gceb(
    table: EmbeddingTable,
    path: str | Path,
    sidecar: str | Path | None = None,
) -> None:
    """Write the binary embedding file and its row-id sidecar."""
    path = Path(path)
    sidecar = default_sidecar_path(path) if sidecar is None else Path(sidecar)
    data = table.matrix().astype("<f4", copy=False)
    with open(path, "wb") as fh:
        fh.write(GCEB_MAGIC)
        fh.write(struct.pack("<IIQ", GCEB_VERSION, table.dim, len(table)))
        fh.write(data.tobytes(order="C"))
    ids = table.ids()
    with open(sidecar, "w", encoding="utf-8") as fh:
        for row, key in enumerate(ids):
            fh.write(json.dumps(
                {"row": row, "id": key, "kind": table.kind(key)}) + "\n")


def _read_sidecar(path: Path, count: int) -> list[tuple[str, str]]:
    entries: list[tuple[str, str] | None] = [None] * count
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", str(path), lineno) from exc
            row = obj.get("row")
            key = obj.get("id")
            kind = obj.get("kind")
            if not isinstance(row, int) or isinstance(row, bool) \
                    or not isinstance(key, str) or kind not in _KINDS:
                raise SchemaError("expected {row, id, kind}", str(path), lineno)
            if not 0 <= row < count:
                raise SchemaError(f"row {row} out of range for count {count}",
                                  str(path), lineno)
            if entries[row] is not None:
                raise SchemaError(f"duplicate row {row}", str(path), lineno)
            entries[row] = (key, kind)
    missing = [i for i, e in enumerate(entries) if e is None]
    if missing:
        raise SchemaError(f"sidecar covers {count - len(missing)} of {count} rows",
                          str(path))
    return entries  # type: ignore[return-value]


def read_gceb(path: str | Path, sidecar: str | Path | None = None) -> EmbeddingTable:
    """Read a GCEB file; all stored invariants are re-checked."""
    path = Path(path)
    sidecar = default_sidecar_path(path) if sidecar is None else Path(sidecar)
    blob = path.read_bytes()
    header = struct.calcsize("<IIQ") + len(GCEB_MAGIC)
    if len(blob) < header or blob[:4] != GCEB_MAGIC:
        raise SchemaError("not a GCEB embedding file", str(path))
    version, dim, count = struct.unpack_from("<IIQ", blob, 4)
    if version != GCEB_VERSION:
        raise SchemaError(f"unsupported GCEB version {version}", str(path))
    if dim < 1:
        raise SchemaError(f"invalid dimension {dim}", str(path))
    expected = header + count * dim * 4
    if len(blob) != expected:
        raise SchemaError(
            f"payload is {len(blob) - header} bytes, expected {expected - header}",
            str(path))
    data = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=header)
    data = data.reshape(count, dim)
    table = EmbeddingTable(dim=dim)
    for row, (key, kind) in enumerate(_read_sidecar(sidecar, count)):
        table.add(key, data[row], kind)
    return table

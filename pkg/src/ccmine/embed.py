"""Embedding tables, cosine similarity, and nearest-neighbor lookup.

Vectors are stored as float32 and accumulated in float64, and every vector
is unit-normalized on construction, which makes cosine similarity a plain
dot product.  The binary table format::

    magic  b"CCEMB1"
    u32    dimension            (little-endian)
    u32    entry count
    per entry: u16 name length, UTF-8 name bytes, dim * f32 vector

Entries are sorted by name ascending; loaders reject unsorted or duplicate
names so a table file has exactly one valid byte representation.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import FormatError, MissingEmbeddingError, ValidationError
from .ioutil import atomic_write_bytes

_MAGIC = b"CCEMB1"
_NORM_TOLERANCE = 1e-4


def _as_unit(vec: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    """Return (raw float32, unit float64) forms of a vector."""
    v64 = np.asarray(vec, dtype=np.float64).reshape(-1)
    norm = float(np.linalg.norm(v64))
    if norm == 0.0 or not np.isfinite(norm):
        raise ValidationError(f"{what} has zero or non-finite norm")
    unit = v64 / norm
    return unit.astype("<f4"), unit


class EmbeddingTable:
    """Named unit vectors of a common dimension."""

    def __init__(self, names: list[str], vectors) -> None:
        if len(names) != len(set(names)):
            raise ValidationError("embedding table names must be unique")
        arr = np.asarray(vectors, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != len(names):
            raise ValidationError("vectors must be a (len(names), dim) array")
        if arr.shape[1] == 0:
            raise ValidationError("embedding dimension must be positive")
        self.names: list[str] = list(names)
        self.dim: int = int(arr.shape[1])
        raw_rows = []
        unit_rows = []
        for name, row in zip(self.names, arr):
            raw, unit = _as_unit(row, f"embedding for {name!r}")
            raw_rows.append(raw)
            unit_rows.append(unit)
        # float32 form is what serialization writes; float64 form is what
        # similarity math uses
        self._raw = np.vstack(raw_rows) if raw_rows else np.zeros((0, self.dim), "<f4")
        self._unit = np.vstack(unit_rows) if unit_rows else np.zeros((0, self.dim))
        self._index = {name: k for k, name in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def vector(self, name: str) -> np.ndarray:
        try:
            return self._unit[self._index[name]]
        except KeyError:
            raise MissingEmbeddingError(name) from None

    # ---- serialization ----

    def dumps(self) -> bytes:
        order = sorted(range(len(self.names)), key=self.names.__getitem__)
        out = bytearray()
        out += _MAGIC
        out += struct.pack("<II", self.dim, len(self.names))
        for k in order:
            name_bytes = self.names[k].encode("utf-8")
            if len(name_bytes) > 0xFFFF:
                raise ValidationError(f"embedding name too long: {self.names[k][:40]!r}...")
            out += struct.pack("<H", len(name_bytes))
            out += name_bytes
            out += self._raw[k].tobytes()
        return bytes(out)

    def save(self, path: str | Path) -> None:
        atomic_write_bytes(path, self.dumps())

    @classmethod
    def loads(cls, data: bytes) -> "EmbeddingTable":
        if data[: len(_MAGIC)] != _MAGIC:
            raise FormatError("not a CCEMB1 embedding table")
        offset = len(_MAGIC)
        if len(data) < offset + 8:
            raise FormatError("truncated embedding table header")
        dim, count = struct.unpack_from("<II", data, offset)
        offset += 8
        if dim == 0:
            raise FormatError("embedding table dimension is zero")
        names: list[str] = []
        vectors = np.zeros((count, dim), dtype="<f4")
        for k in range(count):
            if len(data) < offset + 2:
                raise FormatError("truncated embedding table entry")
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            end = offset + name_len + 4 * dim
            if len(data) < end:
                raise FormatError("truncated embedding table entry")
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
            offset += 4 * dim
            norm = float(np.linalg.norm(vec.astype(np.float64)))
            if abs(norm - 1.0) > _NORM_TOLERANCE:
                raise FormatError(f"embedding for {name!r} is not unit norm ({norm:.6f})")
            names.append(name)
            vectors[k] = vec
        if offset != len(data):
            raise FormatError("trailing bytes after embedding table entries")
        if names != sorted(names):
            raise FormatError("embedding table names are not sorted ascending")
        if len(names) != len(set(names)):
            raise FormatError("embedding table contains duplicate names")
        return cls(names, vectors)

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingTable":
        return cls.loads(Path(path).read_bytes())

    def export_text(self, path: str | Path) -> None:
        """Debug-friendly dump: one ``name<TAB>v0,v1,...`` line per entry."""
        lines = []
        for k in sorted(range(len(self.names)), key=self.names.__getitem__):
            floats = ",".join(repr(float(x)) for x in self._raw[k])
            lines.append(f"{self.names[k]}\t{floats}\n")
        Path(path).write_text("".join(lines), encoding="utf-8")


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors, clamped into [-1, 1]."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValidationError(f"vector dimensions differ: {a.shape[0]} vs {b.shape[0]}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine is undefined for zero vectors")
    return float(np.clip(np.dot(a / na, b / nb), -1.0, 1.0))


def nearest_neighbor(query: np.ndarray, table: EmbeddingTable) -> tuple[str, float]:
    """Name and similarity of the table entry closest to the query.

    The query is renormalized internally, so any positive scaling of it
    selects the same entry.  Exact similarity ties resolve to the
    lexicographically smallest name.
    """
    if len(table) == 0:
        raise ValidationError("nearest_neighbor requires a non-empty table")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != table.dim:
        raise ValidationError(f"query dimension {q.shape[0]} != table dimension {table.dim}")
    norm = float(np.linalg.norm(q))
    if norm == 0.0:
        raise ValidationError("cannot search with a zero query vector")
    sims = table._unit @ (q / norm)
    best = float(sims.max())
    tied = np.nonzero(sims == best)[0]
    name = min(table.names[int(k)] for k in tied)
    return name, float(np.clip(best, -1.0, 1.0))


class EmbeddingProvider(Protocol):
    """Anything that can map a concept string to a vector."""

    def embed(self, text: str) -> np.ndarray: ...


class TableProvider:
    """Provider backed by a fixed table; unknown names raise."""

    def __init__(self, table: EmbeddingTable):
        self.table = table

    def embed(self, text: str) -> np.ndarray:
        return self.table.vector(text)


class ToyEmbeddingProvider:
    """Deterministic hash-based unit vectors for tests and demos.

    Coordinates come from SHA-256 in counter mode mapped to [-1, 1), then
    the vector is unit-normalized.  No RNG library is involved, so the same
    (seed, text) pair yields the same vector on every run; across platforms
    results agree to floating-point rounding.
    """

    def __init__(self, seed: int = 0, dim: int = 16):
        if dim < 1:
            raise ValidationError("toy provider dimension must be >= 1")
        self.seed = seed
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        for attempt in range(64):
            coords = self._uniform_coords(text, attempt)
            norm = float(np.linalg.norm(coords))
            if norm > 1e-6:
                return coords / norm
        raise ValidationError(f"could not derive a unit vector for {text!r}")

    def _uniform_coords(self, text: str, attempt: int) -> np.ndarray:
        out: list[float] = []
        block = 0
        while len(out) < self.dim:
            payload = f"{self.seed}:{attempt}:{text}:{block}".encode("utf-8")
            digest = hashlib.sha256(payload).digest()
            for k in range(0, 32, 8):
                u = int.from_bytes(digest[k : k + 8], "little")
                out.append(u / 2.0**63 - 1.0)
            block += 1
        return np.array(out[: self.dim], dtype=np.float64)

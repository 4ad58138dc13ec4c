"""Language-embedding plumbing: providers, similarity, and the on-disk table.

Two provider kinds are supported: a deterministic hashed bag-of-words
provider (tests, synthetic corpora) and externally exported tables (real
sentence encoders) loaded from the binary format below.

On-disk table format (little-endian):

    magic  b"EMB1"
    u32    d             embedding dimension
    u64    count         number of rows
    index  count entries of (u32 byte-length, UTF-8 id bytes)
    data   count * d float32, row-major

Rows are stored as float32 to match common encoder export precision;
all in-memory math is done in float64 via :attr:`EmbeddingTable.matrix`.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

MAGIC = b"EMB1"


class EmbeddingError(ValueError):
    """Embedding provider or table failure."""


class EmbeddingProvider(Protocol):
    """Deterministic text-to-vector map: identical text -> identical vector."""

    name: str
    d: int

    def embed(self, texts: Sequence[str]) -> np.ndarray:  # (n, d) float64
        ...


@dataclass(frozen=True)
class HashEmbeddingProvider:
    """Hashed bag-of-words embeddings with signed buckets.

    Each whitespace token is hashed (keyed by the seed) to a bucket in
    ``range(d)`` and a sign in {-1, +1}; token vectors are summed and the
    result L2-normalized. Texts sharing tokens therefore get higher dot
    products, and a text with no tokens maps to the zero vector.
    """

    d: int
    seed: int = 0
    name: str = field(init=False, default="hash")

    def __post_init__(self):
        if self.d < 1:
            raise EmbeddingError("dimension must be >= 1")
        object.__setattr__(self, "name", f"hash-d{self.d}-s{self.seed}")

    def _token_bucket(self, token: str) -> tuple[int, float]:
        digest = hashlib.blake2b(
            token.encode("utf-8"), key=str(self.seed).encode("ascii"), digest_size=9
        ).digest()
        bucket = int.from_bytes(digest[:8], "little") % self.d
        sign = 1.0 if digest[8] & 1 else -1.0
        return bucket, sign

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.d), dtype=np.float64)
        for i, text in enumerate(texts):
            for token in text.split():
                bucket, sign = self._token_bucket(token)
                out[i, bucket] += sign
            norm = np.linalg.norm(out[i])
            if norm > 0:
                out[i] /= norm
        return out


def hash_provider(d: int, seed: int = 0) -> HashEmbeddingProvider:
    return HashEmbeddingProvider(d=d, seed=seed)


class EmbeddingTable:
    """Id-indexed store of d-dimensional vectors.

    Values are quantized to float32 on construction (the export precision of
    the on-disk format) so that save/load round trips are bit-exact; the
    ``matrix`` property exposes a float64 view for numerics.
    """

    def __init__(self, ids: Sequence[str], values: np.ndarray):
        values = np.asarray(values)
        if values.ndim != 2:
            raise EmbeddingError("values must be a 2-D array")
        if len(ids) != values.shape[0]:
            raise EmbeddingError(
                f"id count {len(ids)} != row count {values.shape[0]}"
            )
        self.ids: tuple[str, ...] = tuple(str(i) for i in ids)
        if len(set(self.ids)) != len(self.ids):
            raise EmbeddingError("ids must be unique")
        self.values32: np.ndarray = np.ascontiguousarray(values, dtype=np.float32)
        if not np.isfinite(self.values32).all():
            bad = int(np.argwhere(~np.isfinite(self.values32).all(axis=1))[0, 0])
            raise EmbeddingError(f"non-finite embedding at row {bad} (id {self.ids[bad]!r})")
        self._index = {i: r for r, i in enumerate(self.ids)}
        self._matrix64: np.ndarray | None = None

    @property
    def d(self) -> int:
        return self.values32.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        """Float64 view used for all in-memory math."""
        if self._matrix64 is None:
            self._matrix64 = self.values32.astype(np.float64)
        return self._matrix64

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, key: str | int) -> bool:
        return str(key) in self._index

    def row_index(self, key: str | int) -> int:
        try:
            return self._index[str(key)]
        except KeyError:
            raise EmbeddingError(f"unknown embedding id {key!r}") from None

    def row(self, key: str | int) -> np.ndarray:
        return self.matrix[self.row_index(key)]

    def subset(self, keys: Sequence[str | int]) -> np.ndarray:
        rows = [self.row_index(k) for k in keys]
        return self.matrix[rows]


def embed_texts(
    provider: EmbeddingProvider,
    texts: Sequence[str],
    ids: Sequence[str] | None = None,
) -> EmbeddingTable:
    """Embed texts in order; ids default to the row index."""
    if ids is None:
        ids = [str(i) for i in range(len(texts))]
    if len(ids) != len(texts):
        raise EmbeddingError("ids and texts must have equal length")
    try:
        values = provider.embed(texts)
    except EmbeddingError:
        raise
    except Exception as exc:  # provider contract: surface which text failed
        raise EmbeddingError(f"provider {provider.name!r} failed: {exc}") from exc
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (len(texts), provider.d):
        raise EmbeddingError(
            f"provider returned shape {values.shape}, expected {(len(texts), provider.d)}"
        )
    bad = np.argwhere(~np.isfinite(values).all(axis=1))
    if bad.size:
        raise EmbeddingError(f"provider produced non-finite vector at index {int(bad[0, 0])}")
    return EmbeddingTable(ids, values)


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Plain dot product between two embedding vectors (no normalization)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise EmbeddingError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(a @ b)


def table_to_bytes(table: EmbeddingTable) -> bytes:
    parts = [MAGIC, struct.pack("<IQ", table.d, len(table))]
    for i in table.ids:
        raw = i.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    parts.append(table.values32.astype("<f4").tobytes(order="C"))
    return b"".join(parts)


def table_from_bytes(raw: bytes, name: str = "<bytes>") -> EmbeddingTable:
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise EmbeddingError(f"{name}: not an embedding table (bad magic)")
    d, count = struct.unpack_from("<IQ", raw, 4)
    offset = 16
    ids = []
    for _ in range(count):
        if offset + 4 > len(raw):
            raise EmbeddingError(f"{name}: truncated id index")
        (n,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if offset + n > len(raw):
            raise EmbeddingError(f"{name}: truncated id index")
        ids.append(raw[offset : offset + n].decode("utf-8"))
        offset += n
    expected = count * d * 4
    actual = len(raw) - offset
    if actual != expected:
        raise EmbeddingError(f"{name}: matrix payload is {actual} bytes, expected {expected}")
    values = np.frombuffer(raw, dtype="<f4", count=count * d, offset=offset)
    return EmbeddingTable(ids, values.reshape(count, d))


def save_table(table: EmbeddingTable, path: str | Path) -> None:
    Path(path).write_bytes(table_to_bytes(table))


def load_table(path: str | Path) -> EmbeddingTable:
    path = Path(path)
    return table_from_bytes(path.read_bytes(), name=str(path))


def load_texts_jsonl(path: str | Path) -> tuple[list[str], list[str]]:
    """Read {"id", "text"} records; returns (ids, texts) preserving order."""
    ids, texts = [], []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EmbeddingError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if "id" not in rec or "text" not in rec:
                raise EmbeddingError(f"{path}:{lineno}: record needs id and text")
            ids.append(str(rec["id"]))
            texts.append(str(rec["text"]))
    return ids, texts

#!/usr/bin/env python3
"""Export sentence-encoder embeddings for knowledge-base steps and ASR lines.

Reads {"id", "text"} JSONL, encodes every text with the requested model, and
writes the binary embedding-table format consumed by the training toolkit
(magic "EMB1", u32 dim, u64 count, length-prefixed UTF-8 id index, float32
row-major payload), plus a JSON manifest alongside.

Model ids:
  fixture:<d>   deterministic offline encoder (tests, CI); any dimension
  <other>       resolved through sentence-transformers, e.g. the MPNet
                paraphrase checkpoint used for 768-d step/narration matching

Batching uses a fixed batch size with no length bucketing so row order always
matches input order.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import struct
import sys
from pathlib import Path

import numpy as np

MAGIC = b"EMB1"
DEFAULT_BATCH = 32


class ExportError(RuntimeError):
    pass


@dataclasses.dataclass(frozen=True)
class ExportManifest:
    model: str
    d: int
    normalize: bool
    input_digest: str
    rows: int

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2)


class FixtureEncoder:
    """Deterministic stand-in encoder: per-token seeded Gaussian, mean-pooled.

    Exists so exports can be exercised (and digest-pinned) without network
    access or model downloads; not a meaningful embedding space.
    """

    def __init__(self, d: int):
        if d < 1:
            raise ExportError("fixture dimension must be >= 1")
        self.d = d

    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.sha256(f"fixture:{self.d}:{token}".encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        return np.random.default_rng(seed).standard_normal(self.d)

    def encode(self, texts: list[str], batch_size: int) -> np.ndarray:
        out = np.zeros((len(texts), self.d), dtype=np.float64)
        for i, text in enumerate(texts):
            tokens = text.split()
            if tokens:
                out[i] = np.mean([self._token_vector(t) for t in tokens], axis=0)
        return out


class SentenceTransformerEncoder:
    def __init__(self, model_id: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise ExportError(
                "sentence-transformers is not installed; use a fixture:<d> model "
                "or install the 'models' extra"
            ) from exc
        try:
            self.model = SentenceTransformer(model_id)
        except Exception as exc:
            raise ExportError(f"could not load model {model_id!r}: {exc}") from exc
        self.d = int(self.model.get_sentence_embedding_dimension())

    def encode(self, texts: list[str], batch_size: int) -> np.ndarray:
        # order preservation: encode in fixed-size input-order slices
        chunks = []
        for start in range(0, len(texts), batch_size):
            chunk = self.model.encode(
                texts[start : start + batch_size],
                batch_size=batch_size,
                convert_to_numpy=True,
                normalize_embeddings=False,
                show_progress_bar=False,
            )
            chunks.append(np.asarray(chunk, dtype=np.float64))
        return np.concatenate(chunks, axis=0)


def resolve_encoder(model_id: str):
    if model_id.startswith("fixture:"):
        return FixtureEncoder(int(model_id.split(":", 1)[1]))
    return SentenceTransformerEncoder(model_id)


def read_texts(path: Path) -> tuple[list[str], list[str]]:
    ids, texts = [], []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ExportError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if "id" not in rec or "text" not in rec:
                raise ExportError(f"{path}:{lineno}: record needs id and text")
            ids.append(str(rec["id"]))
            texts.append(str(rec["text"]))
    if not ids:
        raise ExportError(f"{path}: no input records")
    if len(set(ids)) != len(ids):
        raise ExportError(f"{path}: duplicate ids")
    return ids, texts


def write_table(ids: list[str], matrix: np.ndarray, path: Path) -> None:
    rows, d = matrix.shape
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", d, rows))
        for i in ids:
            raw = i.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(matrix.astype("<f4").tobytes(order="C"))


def export_embeddings(
    texts_path: str | Path,
    model_id: str,
    out_path: str | Path,
    normalize: bool = False,
    declared_d: int | None = None,
    batch_size: int = DEFAULT_BATCH,
) -> ExportManifest:
    texts_path = Path(texts_path)
    out_path = Path(out_path)
    ids, texts = read_texts(texts_path)
    encoder = resolve_encoder(model_id)
    if declared_d is not None and declared_d != encoder.d:
        raise ExportError(
            f"declared dimension {declared_d} != model dimension {encoder.d}"
        )
    matrix = encoder.encode(texts, batch_size=batch_size)
    if matrix.shape != (len(texts), encoder.d):
        raise ExportError(
            f"encoder returned {matrix.shape}, expected {(len(texts), encoder.d)}"
        )
    if not np.isfinite(matrix).all():
        raise ExportError("encoder produced non-finite values")
    if normalize:
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        matrix = np.where(norms > 0, matrix / np.where(norms > 0, norms, 1.0), matrix)
    write_table(ids, matrix, out_path)
    manifest = ExportManifest(
        model=model_id,
        d=encoder.d,
        normalize=normalize,
        input_digest=hashlib.sha256(texts_path.read_bytes()).hexdigest(),
        rows=len(ids),
    )
    manifest_path = out_path.with_suffix(out_path.suffix + ".manifest.json")
    manifest_path.write_text(manifest.to_json() + "\n", encoding="utf-8")
    return manifest


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", required=True, help="model id or fixture:<d>")
    parser.add_argument("--in", dest="infile", required=True, help='JSONL of {"id","text"}')
    parser.add_argument("--out", required=True, help="output table path")
    parser.add_argument("--normalize", action="store_true", help="L2-normalize rows")
    parser.add_argument("--d", type=int, default=None, help="assert the model dimension")
    parser.add_argument("--batch-size", type=int, default=DEFAULT_BATCH)
    args = parser.parse_args(argv)
    try:
        manifest = export_embeddings(
            args.infile,
            args.model,
            args.out,
            normalize=args.normalize,
            declared_d=args.d,
            batch_size=args.batch_size,
        )
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {manifest.rows} x {manifest.d} rows to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

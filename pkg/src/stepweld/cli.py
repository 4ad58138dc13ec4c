"""Command-line interface: ingest, embed, assign, train, run, report."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .assignment import (
    AssignmentConfig,
    assign_corpus,
    load_labels_jsonl,
)
from .corpus import (
    load_knowledge_base,
    load_segments_jsonl,
    load_transcript,
    save_knowledge_base,
    save_segments_jsonl,
)
from .embedding import (
    EmbeddingTable,
    embed_texts,
    hash_provider,
    load_table,
    load_texts_jsonl,
    save_table,
)
from .harness import load_report, merge_config, render_report, render_table, run_pipeline
from .longterm import (
    LongTermTrainConfig,
    SequenceSample,
    StepEmbeddingSequence,
    build_forecast_samples,
    build_input,
    preset,
    save_transformer,
    train_longterm,
)
from .segment_model import (
    OptimizerConfig,
    SegmentModelConfig,
    TrainConfig,
    save_model,
    targets_from_distributions,
    train,
)

_MODE_ALIASES = {
    "full": "full",
    "task-restricted": "task_restricted",
    "task-id": "task_id_label",
    "kmeans": "asr_kmeans",
}


def _cmd_ingest_kb(args) -> int:
    kb = load_knowledge_base(args.infile)
    save_knowledge_base(kb, args.out)
    print(f"wrote {kb.num_tasks} tasks / {kb.num_steps} steps to {args.out}")
    return 0


def _cmd_ingest_asr(args) -> int:
    src = Path(args.infile)
    paths = sorted(src.glob(f"*.{args.format}")) if src.is_dir() else [src]
    if not paths:
        print(f"no .{args.format} files under {src}", file=sys.stderr)
        return 1
    videos = [load_transcript(p, args.format) for p in paths]
    save_segments_jsonl(videos, args.out)
    total = sum(len(v.segments) for v in videos)
    print(f"wrote {total} segments from {len(videos)} video(s) to {args.out}")
    return 0


def _cmd_embed(args) -> int:
    ids, texts = load_texts_jsonl(args.infile)
    if args.provider == "hash":
        provider = hash_provider(d=args.d, seed=args.seed)
        table = embed_texts(provider, texts, ids=ids)
    else:  # file: re-key an existing table by the ids in the input
        source = load_table(args.vectors)
        table = EmbeddingTable(ids, source.subset(ids))
    if args.l2_normalize:
        matrix = table.matrix.copy()
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        matrix = np.where(norms > 0, matrix / np.where(norms > 0, norms, 1.0), matrix)
        table = EmbeddingTable(table.ids, matrix)
    save_table(table, args.out)
    print(f"wrote {len(table)} x {table.d} table to {args.out}")
    return 0


def _cmd_assign(args) -> int:
    kb = load_knowledge_base(args.kb)
    videos = load_segments_jsonl(args.segments)
    steps = load_table(args.steps) if args.steps else None
    narrs = load_table(args.narrs) if args.narrs else None
    config = AssignmentConfig(
        k=args.k,
        mode=_MODE_ALIASES[args.mode],
        kmeans_k=args.kmeans_k,
        kmeans_iters=args.kmeans_iters,
        seed=args.seed,
    )
    result = assign_corpus(videos, narrs, steps, kb, config)
    result.save_jsonl(args.out, kb=kb)
    print(
        f"labeled {result.processed} segments "
        f"({result.skipped_empty} empty skipped) -> {args.out}"
    )
    return 0


def _parse_objective(token: str) -> tuple[str, int | None]:
    if token == "ce":
        return "step_ce", None
    if token == "nce":
        return "step_nce", None
    if token.startswith("kl"):
        k = int(token[2:]) if token[2:] else 3
        return "dist_match", k
    raise SystemExit(f"unknown objective {token!r} (expected ce, kl<K>, or nce)")


def _cmd_train_segment(args) -> int:
    dists = load_labels_jsonl(args.labels)
    feats = load_table(args.features)
    keys = [f"{d.video_id}:{d.segment_index}" for d in dists]
    x = feats.subset(keys)
    targets = targets_from_distributions(dists)
    objective, _ = _parse_objective(args.objective)
    num_classes = args.num_classes or int(max(d.best for d in dists)) + 1
    step_matrix = None
    if objective == "step_nce":
        if not args.steps:
            raise SystemExit("--steps table is required for the nce objective")
        table = load_table(args.steps)
        step_matrix = table.subset([str(g) for g in range(len(table))])
        num_classes = None
    model_cfg = SegmentModelConfig(
        d_in=feats.d,
        d=args.d,
        num_classes=num_classes,
        arch=args.arch,
        hidden=args.hidden,
        head="regressor" if objective == "step_nce" else "classifier",
        seed=args.seed,
    )
    train_cfg = TrainConfig(
        objective=objective,
        optimizer=OptimizerConfig(name=args.optimizer, lr=args.lr),
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
    )
    result = train(x, targets, model_cfg, train_cfg, step_matrix=step_matrix)
    save_model(result.model, args.out)
    print(f"final loss {result.loss_curve[-1]:.6f}; model -> {args.out}")
    return 0


def _load_longterm_labels(path: Path):
    per_video: dict[str, int] = {}
    per_segment: dict[tuple[str, int], int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            vid = str(rec["video_id"])
            label = int(rec.get("label", rec.get("gid", -1)))
            if "segment_index" in rec:
                per_segment[(vid, int(rec["segment_index"]))] = label
            else:
                per_video[vid] = label
    return per_video, per_segment


def _cmd_train_longterm(args) -> int:
    feats = load_table(args.seqs)
    kb_vecs = load_table(args.kb_vecs) if args.kb_vecs else None
    per_video, per_segment = _load_longterm_labels(Path(args.labels))

    by_video: dict[str, list[int]] = {}
    for key in feats.ids:
        vid, _, idx = key.rpartition(":")
        by_video.setdefault(vid, []).append(int(idx))
    sequences: dict[str, np.ndarray] = {}
    kb_sequences: dict[str, np.ndarray] = {}
    for vid, idxs in sorted(by_video.items()):
        keys = [f"{vid}:{i}" for i in sorted(idxs)]
        sequences[vid] = feats.subset(keys)
        if kb_vecs is not None:
            kb_sequences[vid] = kb_vecs.subset(keys)

    mode = {"basic": "basic", "kb": "kb_transfer", "forecast": "forecast_kb"}[args.mode]
    samples: list[SequenceSample] = []
    if args.mode == "forecast":
        seqs, targets = [], []
        for vid, f in sorted(sequences.items()):
            idxs = sorted(by_video[vid])
            row_labels = [per_segment.get((vid, i), -1) for i in idxs]
            if any(l < 0 for l in row_labels):
                raise SystemExit(f"forecast mode needs per-segment labels for {vid}")
            seqs.append(
                StepEmbeddingSequence(video_id=vid, f_vectors=f, kb_vectors=kb_sequences.get(vid))
            )
            targets.append(row_labels)
        raw = build_forecast_samples(
            seqs, targets, mode="kb_transfer" if kb_vecs is not None else "basic",
            max_history=args.window,
        )
        samples = [
            SequenceSample(tokens=s.tokens, label=s.target_gid, null_mask=s.null_mask)
            for s in raw
        ]
    else:
        for vid, f in sorted(sequences.items()):
            if vid not in per_video:
                raise SystemExit(f"no label for video {vid}")
            for start in range(0, max(1, f.shape[0] - args.window + 1), args.window):
                chunk = f[start : start + args.window]
                seq = StepEmbeddingSequence(
                    video_id=vid, f_vectors=chunk,
                    kb_vectors=None if kb_vecs is None else kb_sequences[vid][start : start + args.window],
                )
                tokens, null_mask = build_input(seq, mode)
                samples.append(SequenceSample(tokens=tokens, label=per_video[vid], null_mask=null_mask))

    num_classes = args.num_classes or max(s.label for s in samples) + 1
    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(samples))
    n_test = max(1, int(round(args.test_fraction * len(samples))))
    test = [samples[i] for i in order[:n_test]]
    train_set = [samples[i] for i in order[n_test:]]
    d_model = samples[0].tokens.shape[1]
    model_cfg = preset(
        args.preset, num_classes=num_classes, d_model=d_model,
        max_len=2 * args.window, seed=args.seed,
    )
    config = LongTermTrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        optimizer=OptimizerConfig(name="adamw", lr=args.lr),
    )
    result = train_longterm(train_set, model_cfg, config, eval_samples=test)
    save_transformer(result.model, args.out)
    metrics = {
        "accuracy": result.accuracy,
        "per_class": {str(k): v for k, v in result.per_class.items()},
        "n": result.n_eval,
    }
    print(json.dumps(metrics, sort_keys=True))
    return 0


def _cmd_run(args) -> int:
    overrides: dict = {}
    if args.config:
        with open(args.config, "rb") as fh:
            overrides = tomllib.load(fh)
    cli_layer: dict = {"experiment": {}}
    if args.seed is not None:
        cli_layer["experiment"]["seed"] = args.seed
    if args.modes:
        cli_layer["experiment"]["modes"] = args.modes.split(",")
    if args.no_cache:
        cli_layer["experiment"]["cache"] = False
    cfg = merge_config(overrides, cli_layer)
    report = run_pipeline(cfg, cache_dir=args.cache_dir)
    out = Path(args.out)
    out.write_text(report.to_json() + "\n", encoding="utf-8")
    metrics_path = out.with_name(out.stem + ".metrics.json")
    metrics_path.write_text(report.metrics_json() + "\n", encoding="utf-8")
    print(f"report -> {out}; metrics -> {metrics_path}")
    for name, value in sorted(report.metrics.items()):
        shown = "n/a" if value is None else f"{value:.4f}"
        print(f"  {name}: {shown}")
    return 0


def _cmd_report(args) -> int:
    report = load_report(args.infile)
    if args.format == "json":
        doc = {k: report.get(k) for k in ("config_digest", "seeds", "metrics", "modes", "ranking")}
        print(json.dumps(doc, sort_keys=True, indent=2))
        return 0
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.infile).parent
    written = render_report(report, out_dir, fmt="table")
    print(render_table(report), end="")
    for name, path in sorted(written.items()):
        print(f"{name}: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stepweld", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-kb", help="validate and canonicalize a knowledge base")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_ingest_kb)

    p = sub.add_parser("ingest-asr", help="parse transcripts into segment JSONL")
    p.add_argument("--in", dest="infile", required=True, help="file or directory")
    p.add_argument("--format", choices=("srt", "vtt", "jsonl"), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_ingest_asr)

    p = sub.add_parser("embed", help="embed texts into a binary table")
    p.add_argument("--provider", choices=("hash", "file"), default="hash")
    p.add_argument("--d", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="infile", required=True, help='JSONL of {"id","text"}')
    p.add_argument("--vectors", help="existing table (provider=file)")
    p.add_argument("--l2-normalize", action="store_true", help="unit-normalize rows (cosine similarity)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_embed)

    p = sub.add_parser("assign", help="pseudo-label segments against the knowledge base")
    p.add_argument("--kb", required=True)
    p.add_argument("--segments", required=True)
    p.add_argument("--steps", help="step embedding table")
    p.add_argument("--narrs", help="narration embedding table")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--mode", choices=tuple(_MODE_ALIASES), default="full")
    p.add_argument("--kmeans-k", type=int, default=None)
    p.add_argument("--kmeans-iters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_assign)

    p = sub.add_parser("train-segment", help="train the segment-level model")
    p.add_argument("--labels", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--objective", default="kl3", help="ce | kl<K> | nce")
    p.add_argument("--steps", help="step table (nce objective)")
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--arch", choices=("linear", "mlp"), default="mlp")
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--optimizer", choices=("sgd", "adamw"), default="adamw")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train_segment)

    p = sub.add_parser("train-longterm", help="train the long-term sequence model")
    p.add_argument("--mode", choices=("basic", "kb", "forecast"), default="basic")
    p.add_argument("--seqs", required=True, help="per-segment feature table")
    p.add_argument("--kb-vecs", help="per-segment KB embedding table (kb/forecast modes)")
    p.add_argument("--labels", required=True, help="JSONL labels (per video or per segment)")
    p.add_argument("--preset", choices=("paper", "small"), default="small")
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--window", type=int, default=8)
    p.add_argument("--test-fraction", type=float, default=0.3)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train_longterm)

    p = sub.add_parser("run", help="run the full experiment pipeline")
    p.add_argument("--config", help="TOML experiment config")
    p.add_argument("--out", default="report.json")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--modes", help="comma-separated supervision modes")
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--no-cache", action="store_true")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("report", help="render a report as a table plus figures")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())

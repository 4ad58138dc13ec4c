"""End-to-end experiment runner: ingest, embed, assign, train, evaluate.

Configuration is a layered dict (defaults < file < CLI overrides). Every
stage is cacheable: its key hashes the relevant config subtree plus the
byte digests of its input artifacts, so changing any input byte invalidates
all dependent stages. Reports are JSON with stable key order.
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dataclasses import asdict

from ..assignment import (
    AssignmentConfig,
    AssignmentResult,
    PseudoLabel,
    load_labels_jsonl,
)
from ..assignment import assign_corpus as assign_corpus_op
from ..corpus import load_knowledge_base, load_segments_jsonl
from ..embedding import (
    EmbeddingTable,
    embed_texts,
    hash_provider,
    table_from_bytes,
    table_to_bytes,
)
from ..longterm import (
    LongTermTrainConfig,
    SequenceSample,
    StepEmbeddingSequence,
    TransformerConfig,
    build_forecast_samples,
    linear_probe,
    train_longterm,
)
from ..longterm.probe import ProbeConfig
from ..segment_model import (
    OptimizerConfig,
    SegmentModel,
    SegmentModelConfig,
    TrainConfig,
    targets_from_result,
    train,
)
from .synthetic import GroundTruth, SyntheticCorpus, SyntheticSpec, generate_synthetic

CACHE_ENV = "STEPWELD_CACHE_DIR"

DEFAULT_CONFIG: dict = {
    "experiment": {"name": "default", "seed": 0, "modes": ["full"], "cache": True},
    "synthetic": {
        "tasks": 10,
        "steps_per_task": [5, 5],
        "vocab_size": 300,
        "distractor_tokens": 2,
        "drop_prob": 0.0,
        "videos_per_task": 6,
        "segments_per_video": 8,
        "feature_noise": 0.5,
        "task_id_corrupt_prob": 0.0,
        "seed": 0,
    },
    "embedding": {"d": 256, "seed": 7},
    "assignment": {"k": 3, "kmeans_iters": 25, "kmeans_k": 0},
    "segment": {
        "objective": "dist_match",
        "arch": "mlp",
        "hidden": 128,
        "d": 32,
        "epochs": 30,
        "batch_size": 64,
        "lr": 0.01,
        "optimizer": "adamw",
        "weight_decay": 0.0,
    },
    "probe": {"train_per_class": 4, "epochs": 300, "lr": 0.05, "l2": 1e-4},
    "longterm": {
        "heads": 4,
        "window": 8,
        "epochs": 60,
        "batch_size": 16,
        "lr": 3e-3,
        "test_fraction": 0.3,
    },
    "forecast": {"enabled": True, "epochs": 40, "batch_size": 32, "lr": 3e-3},
}


class PipelineError(RuntimeError):
    pass


def deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def merge_config(*layers: dict) -> dict:
    cfg = DEFAULT_CONFIG
    for layer in layers:
        if layer:
            cfg = deep_merge(cfg, layer)
    return cfg


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            h.update(part)
        else:
            h.update(json.dumps(part, sort_keys=True).encode())
        h.update(b"\x00")
    return h.hexdigest()


def config_digest(cfg: dict) -> str:
    return _digest("config", cfg)


def resolve_cache_dir(cfg: dict, override: str | Path | None = None) -> Path | None:
    if not cfg["experiment"].get("cache", True):
        return None
    if override:
        return Path(override)
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else None


class StageCache:
    """File-backed stage cache keyed by content digests."""

    def __init__(self, root: Path | None):
        self.root = root
        if root is not None:
            root.mkdir(parents=True, exist_ok=True)

    def _dir(self, key: str) -> Path:
        return self.root / key[:2] / key

    def load(self, key: str) -> Path | None:
        if self.root is None:
            return None
        d = self._dir(key)
        return d if (d / ".complete").exists() else None

    def store(self, key: str, files: dict[str, bytes]) -> Path | None:
        if self.root is None:
            return None
        d = self._dir(key)
        d.mkdir(parents=True, exist_ok=True)
        for name, payload in files.items():
            (d / name).write_bytes(payload)
        (d / ".complete").write_bytes(b"")
        return d


@dataclass
class _SegmentArtifacts:
    model: SegmentModel
    loss_curve: list[float]


@dataclass
class StageInfo:
    digest: str
    cached: bool
    seconds: float
    output_digest: str


@dataclass
class ExperimentReport:
    config_digest: str
    seeds: dict[str, int]
    metrics: dict[str, float | None]
    modes: dict[str, dict[str, float | None]]
    ranking: list[str]
    loss_curves: dict[str, list[float]]
    stages: dict[str, StageInfo] = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def metrics_doc(self) -> dict:
        """The run-invariant portion of the report (no timings)."""
        return {
            "config_digest": self.config_digest,
            "seeds": self.seeds,
            "metrics": self.metrics,
            "modes": self.modes,
            "ranking": self.ranking,
        }

    def metrics_json(self) -> str:
        return json.dumps(self.metrics_doc(), sort_keys=True, indent=2)

    def to_json(self) -> str:
        doc = self.metrics_doc()
        doc["loss_curves"] = self.loss_curves
        doc["stages"] = {
            name: {
                "digest": info.digest,
                "cached": info.cached,
                "seconds": info.seconds,
                "output_digest": info.output_digest,
            }
            for name, info in self.stages.items()
        }
        doc["wall_clock_s"] = self.wall_clock_s
        return json.dumps(doc, sort_keys=True, indent=2)


def load_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _files_digest(files: dict[str, bytes]) -> str:
    h = hashlib.sha256()
    for name in sorted(files):
        h.update(name.encode())
        h.update(b"\x00")
        h.update(files[name])
        h.update(b"\x00")
    return h.hexdigest()


class _Runner:
    def __init__(self, cache: StageCache):
        self.cache = cache
        self.stages: dict[str, StageInfo] = {}

    def run(self, name: str, key: str, compute, serialize, deserialize):
        """compute() -> value; serialize(value) -> files; deserialize(dir) -> value."""
        t0 = time.perf_counter()
        hit = self.cache.load(key)
        if hit is not None:
            value = deserialize(hit)
            files = {p.name: p.read_bytes() for p in hit.iterdir() if p.name != ".complete"}
            cached = True
        else:
            value = compute()
            files = serialize(value)
            self.cache.store(key, files)
            cached = False
        self.stages[name] = StageInfo(
            digest=key,
            cached=cached,
            seconds=time.perf_counter() - t0,
            output_digest=_files_digest(files),
        )
        return value, self.stages[name].output_digest


def _serialize_corpus(corpus: SyntheticCorpus) -> dict[str, bytes]:
    kb_buf = io.StringIO()
    for task in corpus.kb.tasks:
        kb_buf.write(
            json.dumps(
                {"task_id": task.task_id, "title": task.title, "steps": [s.text for s in task.steps]}
            )
            + "\n"
        )
    seg_buf = io.StringIO()
    for video in corpus.videos:
        for seg in video.segments:
            rec = {
                "video_id": seg.video_id,
                "segment_index": seg.segment_index,
                "start_ms": seg.start_ms,
                "end_ms": seg.end_ms,
                "text": seg.text,
                "task_id": video.task_id,
            }
            seg_buf.write(json.dumps(rec) + "\n")
    truth = {
        "steps": sorted(
            [f"{vid}:{idx}", gid] for (vid, idx), gid in corpus.truth.step_of_segment.items()
        ),
        "tasks": sorted(corpus.truth.task_of_video.items()),
    }
    return {
        "kb.jsonl": kb_buf.getvalue().encode(),
        "segments.jsonl": seg_buf.getvalue().encode(),
        "features.emb": table_to_bytes(corpus.features),
        "truth.json": json.dumps(truth, sort_keys=True).encode(),
        "spec.json": json.dumps(asdict(corpus.spec), sort_keys=True).encode(),
    }


def _deserialize_corpus(path: Path) -> SyntheticCorpus:
    spec_doc = json.loads((path / "spec.json").read_text())
    spec_doc["steps_per_task"] = tuple(spec_doc["steps_per_task"])
    truth_doc = json.loads((path / "truth.json").read_text())
    step_of_segment = {}
    for key, gid in truth_doc["steps"]:
        vid, _, idx = key.rpartition(":")
        step_of_segment[(vid, int(idx))] = int(gid)
    truth = GroundTruth(
        step_of_segment=step_of_segment,
        task_of_video={vid: int(t) for vid, t in truth_doc["tasks"]},
    )
    return SyntheticCorpus(
        spec=SyntheticSpec(**spec_doc),
        kb=load_knowledge_base(path / "kb.jsonl"),
        videos=load_segments_jsonl(path / "segments.jsonl"),
        features=table_from_bytes((path / "features.emb").read_bytes()),
        truth=truth,
    )


def _model_to_bytes(model: SegmentModel) -> bytes:
    buf = io.BytesIO()
    arch = json.dumps({"kind": "segment", "version": 1, "config": asdict(model.config)})
    np.savez(buf, __arch__=arch, **model.params)
    return buf.getvalue()


def _model_from_bytes(raw: bytes) -> SegmentModel:
    with np.load(io.BytesIO(raw), allow_pickle=False) as data:
        arch = json.loads(str(data["__arch__"]))
        model = SegmentModel(SegmentModelConfig(**arch["config"]))
        for name in model.params:
            model.params[name] = data[name].astype(np.float64)
    return model


def _segment_keys(corpus: SyntheticCorpus) -> list[str]:
    return [
        f"{video.video_id}:{seg.segment_index}"
        for video in corpus.videos
        for seg in video.segments
    ]


def _train_segment_model(
    corpus: SyntheticCorpus,
    result: AssignmentResult,
    step_table: EmbeddingTable,
    seg_cfg: dict,
    seed: int,
):
    keys = [f"{d.video_id}:{d.segment_index}" for d in result.distributions]
    x = corpus.features.subset(keys)
    targets = targets_from_result(result)
    objective = seg_cfg["objective"]
    head = "regressor" if objective == "step_nce" else "classifier"
    model_cfg = SegmentModelConfig(
        d_in=corpus.features.d,
        d=seg_cfg["d"],
        num_classes=None if head == "regressor" else result.num_classes,
        arch=seg_cfg["arch"],
        hidden=seg_cfg["hidden"],
        head=head,
        seed=seed,
    )
    train_cfg = TrainConfig(
        objective=objective,
        optimizer=OptimizerConfig(
            name=seg_cfg["optimizer"],
            lr=seg_cfg["lr"],
            weight_decay=seg_cfg.get("weight_decay", 0.0),
        ),
        batch_size=seg_cfg["batch_size"],
        epochs=seg_cfg["epochs"],
        seed=seed,
    )
    step_matrix = None
    if objective == "step_nce":
        step_matrix = step_table.subset([str(g) for g in range(len(step_table))])
    return train(x, targets, model_cfg, train_cfg, step_matrix=step_matrix)


def _split_videos(corpus: SyntheticCorpus, fraction: float, seed: int):
    """Per-task stratified train/test split over video ids."""
    rng = np.random.default_rng(seed)
    by_task: dict[int, list[str]] = {}
    for video in corpus.videos:
        true_task = corpus.truth.task_of_video[video.video_id]
        by_task.setdefault(true_task, []).append(video.video_id)
    train_ids, test_ids = [], []
    for task in sorted(by_task):
        vids = sorted(by_task[task])
        order = rng.permutation(len(vids))
        n_test = max(1, int(round(fraction * len(vids))))
        for pos, i in enumerate(order):
            (test_ids if pos < n_test else train_ids).append(vids[i])
    return sorted(train_ids), sorted(test_ids)


def _video_windows(
    feats: EmbeddingTable, corpus: SyntheticCorpus, video_id: str, window: int, rng=None
) -> list[np.ndarray]:
    video = next(v for v in corpus.videos if v.video_id == video_id)
    rows = feats.subset([f"{video_id}:{s.segment_index}" for s in video.segments])
    length = rows.shape[0]
    if length <= window:
        return [rows]
    if rng is None:  # evaluation: non-overlapping stride = window
        starts = list(range(0, length - window + 1, window))
    else:  # training: seeded random offsets, one window per stride position
        count = max(1, length // window)
        starts = [int(rng.integers(0, length - window + 1)) for _ in range(count)]
    return [rows[s : s + window] for s in starts]


def _task_classification_metric(
    corpus: SyntheticCorpus,
    feats: EmbeddingTable,
    lt_cfg: dict,
    seed: int,
) -> tuple[float, list[float]]:
    train_ids, test_ids = _split_videos(corpus, lt_cfg["test_fraction"], seed)
    window = lt_cfg["window"]
    rng = np.random.default_rng(seed + 1)
    train_samples = [
        SequenceSample(tokens=w, label=corpus.truth.task_of_video[vid])
        for vid in train_ids
        for w in _video_windows(feats, corpus, vid, window, rng)
    ]
    test_samples = [
        SequenceSample(tokens=w, label=corpus.truth.task_of_video[vid])
        for vid in test_ids
        for w in _video_windows(feats, corpus, vid, window)
    ]
    d_model = train_samples[0].tokens.shape[1]
    model_cfg = TransformerConfig(
        d_model=d_model,
        n_heads=lt_cfg["heads"],
        d_ff=2 * d_model,
        num_classes=corpus.kb.num_tasks,
        max_len=2 * window,
        seed=seed,
    )
    train_cfg = LongTermTrainConfig(
        epochs=lt_cfg["epochs"],
        batch_size=lt_cfg["batch_size"],
        seed=seed,
        optimizer=OptimizerConfig(name="adamw", lr=lt_cfg["lr"]),
    )
    result = train_longterm(train_samples, model_cfg, train_cfg, eval_samples=test_samples)
    return float(result.accuracy), result.loss_curve


def _forecast_metric(
    corpus: SyntheticCorpus,
    feats: EmbeddingTable,
    fc_cfg: dict,
    lt_cfg: dict,
    seed: int,
) -> float:
    train_ids, test_ids = _split_videos(corpus, lt_cfg["test_fraction"], seed)
    window = lt_cfg["window"]

    def samples_for(ids):
        seqs, targets = [], []
        for vid in ids:
            video = next(v for v in corpus.videos if v.video_id == vid)
            rows = feats.subset([f"{vid}:{s.segment_index}" for s in video.segments])
            seqs.append(StepEmbeddingSequence(video_id=vid, f_vectors=rows))
            targets.append(
                [corpus.truth.step_of_segment[(vid, s.segment_index)] for s in video.segments]
            )
        raw = build_forecast_samples(seqs, targets, mode="basic", max_history=window)
        return [
            SequenceSample(tokens=s.tokens, label=s.target_gid, null_mask=s.null_mask)
            for s in raw
        ]

    train_samples = samples_for(train_ids)
    test_samples = samples_for(test_ids)
    d_model = train_samples[0].tokens.shape[1]
    model_cfg = TransformerConfig(
        d_model=d_model,
        n_heads=lt_cfg["heads"],
        d_ff=2 * d_model,
        num_classes=corpus.kb.num_steps,
        max_len=2 * window,
        seed=seed,
    )
    train_cfg = LongTermTrainConfig(
        epochs=fc_cfg["epochs"],
        batch_size=fc_cfg["batch_size"],
        seed=seed,
        optimizer=OptimizerConfig(name="adamw", lr=fc_cfg["lr"]),
    )
    result = train_longterm(train_samples, model_cfg, train_cfg, eval_samples=test_samples)
    return float(result.accuracy)


def _load_task_metrics(path: Path) -> tuple[float, list[float]]:
    doc = json.loads((path / "metrics.json").read_text())
    return doc["task_accuracy"], doc["curve"]


def _probe_split(
    labels: np.ndarray, per_class: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    train_idx = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        take = min(per_class, max(1, len(members) // 2))
        train_idx.extend(rng.permutation(members)[:take])
    train_mask = np.zeros(len(labels), dtype=bool)
    train_mask[np.asarray(train_idx)] = True
    return train_mask, ~train_mask


def run_pipeline(
    config: dict | None = None, cache_dir: str | Path | None = None
) -> ExperimentReport:
    """Execute the full experiment described by the layered config."""
    cfg = merge_config(config or {})
    t_start = time.perf_counter()
    exp_seed = int(cfg["experiment"]["seed"])
    modes: list[str] = list(cfg["experiment"]["modes"])
    if not modes:
        raise PipelineError("experiment.modes must not be empty")

    cache = StageCache(resolve_cache_dir(cfg, cache_dir))
    runner = _Runner(cache)

    syn_cfg = dict(cfg["synthetic"])
    syn_cfg["seed"] = int(syn_cfg["seed"]) + exp_seed
    spec_kwargs = dict(syn_cfg)
    spec_kwargs["steps_per_task"] = tuple(spec_kwargs["steps_per_task"])
    corpus, corpus_digest = runner.run(
        "synthetic",
        _digest("synthetic", syn_cfg),
        lambda: generate_synthetic(SyntheticSpec(**spec_kwargs)),
        _serialize_corpus,
        _deserialize_corpus,
    )

    emb_cfg = cfg["embedding"]

    def compute_embeddings():
        provider = hash_provider(d=int(emb_cfg["d"]), seed=int(emb_cfg["seed"]))
        step_texts = [s.text for s in corpus.kb.steps()]
        step_ids = [str(s.global_id) for s in corpus.kb.steps()]
        narr_ids, narr_texts = [], []
        for video in corpus.videos:
            for seg in video.segments:
                narr_ids.append(f"{video.video_id}:{seg.segment_index}")
                narr_texts.append(seg.text)
        return (
            embed_texts(provider, step_texts, ids=step_ids),
            embed_texts(provider, narr_texts, ids=narr_ids),
        )

    (step_table, narr_table), emb_digest = runner.run(
        "embed",
        _digest("embed", emb_cfg, corpus_digest),
        compute_embeddings,
        lambda tables: {"steps.emb": table_to_bytes(tables[0]), "narrs.emb": table_to_bytes(tables[1])},
        lambda p: (
            table_from_bytes((p / "steps.emb").read_bytes()),
            table_from_bytes((p / "narrs.emb").read_bytes()),
        ),
    )

    truth_steps = corpus.truth.step_of_segment
    metrics: dict[str, float | None] = {}
    per_mode: dict[str, dict[str, float | None]] = {}
    loss_curves: dict[str, list[float]] = {}
    primary_feats: EmbeddingTable | None = None

    for mode in modes:
        asg_cfg = cfg["assignment"]
        assign_config = AssignmentConfig(
            k=int(asg_cfg["k"]),
            mode=mode,
            kmeans_k=int(asg_cfg["kmeans_k"]) or None,
            kmeans_iters=int(asg_cfg["kmeans_iters"]),
            seed=exp_seed,
        )

        def compute_assignment(assign_config=assign_config):
            return assign_corpus_op(
                corpus.videos, narr_table, step_table, corpus.kb, assign_config
            )

        def serialize_assignment(result: AssignmentResult) -> dict[str, bytes]:
            buf = io.StringIO()
            for dist in result.distributions:
                topk = [
                    {"gid": g, "task": -1, "step": -1, "p": p}
                    for g, p in zip(dist.global_ids, dist.probs)
                ]
                buf.write(
                    json.dumps(
                        {
                            "video_id": dist.video_id,
                            "segment_index": dist.segment_index,
                            "start_ms": dist.start_ms,
                            "end_ms": dist.end_ms,
                            "topk": topk,
                        }
                    )
                    + "\n"
                )
            meta = {
                "label_space": result.label_space,
                "num_classes": result.num_classes,
                "processed": result.processed,
                "skipped_empty": result.skipped_empty,
            }
            return {
                "labels.jsonl": buf.getvalue().encode(),
                "meta.json": json.dumps(meta, sort_keys=True).encode(),
            }

        def deserialize_assignment(path: Path, assign_config=assign_config) -> AssignmentResult:
            meta = json.loads((path / "meta.json").read_text())
            dists = load_labels_jsonl(path / "labels.jsonl")
            labels = []
            for dist in dists:
                if meta["label_space"] == "steps":
                    step = corpus.kb.step(dist.best)
                    task_id, step_index = step.task_id, step.step_index
                else:
                    task_id, step_index = -1, -1
                labels.append(
                    PseudoLabel(dist.video_id, dist.segment_index, dist.best, task_id, step_index)
                )
            return AssignmentResult(
                label_space=meta["label_space"],
                num_classes=meta["num_classes"],
                distributions=dists,
                labels=labels,
                processed=meta["processed"],
                skipped_empty=meta["skipped_empty"],
                config=assign_config,
            )

        assignment, assign_digest = runner.run(
            f"assign[{mode}]",
            _digest("assign", asg_cfg, mode, exp_seed, emb_digest),
            compute_assignment,
            serialize_assignment,
            deserialize_assignment,
        )

        recovery: float | None = None
        if assignment.label_space == "steps":
            hits = [
                int(lbl.global_id == truth_steps[(lbl.video_id, lbl.segment_index)])
                for lbl in assignment.labels
            ]
            recovery = float(np.mean(hits)) if hits else 0.0

        seg_cfg = cfg["segment"]
        seg_result, seg_digest = runner.run(
            f"segment[{mode}]",
            _digest("segment", seg_cfg, exp_seed, assign_digest, corpus_digest),
            lambda: _train_segment_model(corpus, assignment, step_table, seg_cfg, exp_seed),
            lambda r: {
                "model.npz": _model_to_bytes(r.model),
                "curve.json": json.dumps(r.loss_curve).encode(),
            },
            lambda p: _SegmentArtifacts(
                model=_model_from_bytes((p / "model.npz").read_bytes()),
                loss_curve=json.loads((p / "curve.json").read_text()),
            ),
        )
        loss_curves[f"segment[{mode}]"] = list(seg_result.loss_curve)

        def compute_features(seg_result=seg_result):
            keys = _segment_keys(corpus)
            f = seg_result.model.features(corpus.features.subset(keys))
            return EmbeddingTable(keys, f)

        feats, feats_digest = runner.run(
            f"features[{mode}]",
            _digest("features", seg_digest, corpus_digest),
            compute_features,
            lambda t: {"feats.emb": table_to_bytes(t)},
            lambda p: table_from_bytes((p / "feats.emb").read_bytes()),
        )

        lt_cfg = cfg["longterm"]
        task_metrics, _ = runner.run(
            f"longterm[{mode}]",
            _digest("longterm", lt_cfg, exp_seed, feats_digest),
            lambda: _task_classification_metric(corpus, feats, lt_cfg, exp_seed),
            lambda m: {"metrics.json": json.dumps({"task_accuracy": m[0], "curve": m[1]}).encode()},
            lambda p: _load_task_metrics(p),
        )
        task_accuracy, lt_curve = task_metrics
        loss_curves[f"longterm[{mode}]"] = list(lt_curve)

        per_mode[mode] = {"assignment_recovery": recovery, "task_accuracy": task_accuracy}
        if mode == modes[0]:
            primary_feats = feats
            metrics["assignment_recovery"] = recovery
            metrics["task_accuracy"] = task_accuracy

    # probes and forecasting run on the primary mode's features
    keys = _segment_keys(corpus)

    def _key_parts(key: str) -> tuple[str, int]:
        vid, _, idx = key.rpartition(":")
        return vid, int(idx)

    labels = np.array([truth_steps[_key_parts(k)] for k in keys])
    probe_cfg = cfg["probe"]

    def compute_probes():
        train_mask, test_mask = _probe_split(
            labels, int(probe_cfg["train_per_class"]), exp_seed
        )
        pc = ProbeConfig(
            epochs=int(probe_cfg["epochs"]),
            l2=float(probe_cfg["l2"]),
            seed=exp_seed,
            optimizer=OptimizerConfig(name="adamw", lr=float(probe_cfg["lr"])),
        )
        raw = corpus.features.subset(keys)
        learned = primary_feats.subset(keys)
        raw_acc = linear_probe(
            raw[train_mask], labels[train_mask], raw[test_mask], labels[test_mask],
            corpus.kb.num_steps, pc,
        ).accuracy
        feat_acc = linear_probe(
            learned[train_mask], labels[train_mask], learned[test_mask], labels[test_mask],
            corpus.kb.num_steps, pc,
        ).accuracy
        return {"probe_raw_accuracy": raw_acc, "probe_feature_accuracy": feat_acc}

    probe_metrics, _ = runner.run(
        "probe",
        _digest("probe", probe_cfg, exp_seed, corpus_digest,
                runner.stages[f"features[{modes[0]}]"].output_digest),
        compute_probes,
        lambda m: {"metrics.json": json.dumps(m, sort_keys=True).encode()},
        lambda p: json.loads((p / "metrics.json").read_text()),
    )
    metrics.update(probe_metrics)

    fc_cfg = cfg["forecast"]
    if fc_cfg.get("enabled", True):
        forecast_acc, _ = runner.run(
            "forecast",
            _digest("forecast", fc_cfg, cfg["longterm"], exp_seed,
                    runner.stages[f"features[{modes[0]}]"].output_digest),
            lambda: _forecast_metric(corpus, primary_feats, fc_cfg, cfg["longterm"], exp_seed),
            lambda m: {"metrics.json": json.dumps({"forecast_accuracy": m}).encode()},
            lambda p: json.loads((p / "metrics.json").read_text())["forecast_accuracy"],
        )
        metrics["forecast_accuracy"] = float(forecast_acc)
    else:
        metrics["forecast_accuracy"] = None

    ranking = sorted(
        modes,
        key=lambda m: -(per_mode[m]["task_accuracy"] if per_mode[m]["task_accuracy"] is not None else -1),
    )
    return ExperimentReport(
        config_digest=config_digest(cfg),
        seeds={"experiment": exp_seed, "synthetic": syn_cfg["seed"], "embedding": int(emb_cfg["seed"])},
        metrics=metrics,
        modes=per_mode,
        ranking=ranking,
        loss_curves=loss_curves,
        stages=runner.stages,
        wall_clock_s=time.perf_counter() - t_start,
    )

"""Distant supervision: match narration embeddings to knowledge-base steps.

For a narration embedding ``a`` and the table of step embeddings, the
conditional distribution over steps is the softmax of the dot-product
similarities. The distribution is truncated to the top-K steps (ties broken
toward the lowest global id) and the retained mass renormalized to sum to 1,
so downstream divergence-based objectives stay well defined. The argmax of
the distribution is the pseudo-label.

Besides the full matching mode, the baseline supervision modes are provided:
restricting candidates to the video's (unverified) task id, using the task id
itself as the label, and k-means clustering of the narration embeddings.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import KnowledgeBase, NarratedVideo
from .embedding import EmbeddingTable

MODES = ("full", "task_restricted", "task_id_label", "asr_kmeans")


class AssignmentError(ValueError):
    pass


@dataclass(frozen=True)
class StepDistribution:
    """Top-K truncated approximation of P(step | segment), renormalized."""

    video_id: str
    segment_index: int
    start_ms: int
    end_ms: int
    global_ids: tuple[int, ...]
    probs: tuple[float, ...]
    k: int

    def __post_init__(self):
        if not self.global_ids:
            raise AssignmentError("empty distribution")
        if len(self.global_ids) != len(self.probs):
            raise AssignmentError("ids/probs length mismatch")

    @property
    def best(self) -> int:
        return self.global_ids[0]


@dataclass(frozen=True)
class PseudoLabel:
    video_id: str
    segment_index: int
    global_id: int
    task_id: int
    step_index: int


@dataclass(frozen=True)
class AssignmentConfig:
    """K, supervision mode, and clustering parameters for the baselines.

    Tie-breaking is always toward the lowest global id; it is part of the
    contract, not a knob.
    """

    k: int = 3
    mode: str = "full"
    kmeans_k: int | None = None  # default: number of KB steps
    kmeans_iters: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise AssignmentError("k must be >= 1")
        if self.mode not in MODES:
            raise AssignmentError(f"unknown mode {self.mode!r}; expected one of {MODES}")


def softmax_topk(
    sims: np.ndarray, ids: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Stable softmax over similarities, truncated to top-k and renormalized.

    Computed in float64 with max-subtraction; raw dot products of
    unnormalized high-dimensional embeddings can exceed the exp range.
    Selection is exact (full sort), ties broken by ascending id.
    """
    sims = np.asarray(sims, dtype=np.float64)
    ids = np.asarray(ids)
    if sims.ndim != 1 or sims.shape != ids.shape:
        raise AssignmentError("sims and ids must be 1-D and equal length")
    if not np.isfinite(sims).all():
        raise AssignmentError("non-finite similarity")
    k = min(k, sims.size)
    order = np.lexsort((ids, -sims))
    shifted = sims - sims.max()
    weights = np.exp(shifted)
    probs = weights / weights.sum()
    top = order[:k]
    top_probs = probs[top]
    top_probs = top_probs / top_probs.sum()
    return ids[top], top_probs


def step_distribution(
    narr_vec: np.ndarray,
    step_table: EmbeddingTable,
    k: int,
    restrict_gids: Sequence[int] | None = None,
    segment_ref: tuple[str, int, int, int] = ("", 0, 0, 0),
) -> StepDistribution:
    """Distribution over steps for one narration embedding.

    ``restrict_gids`` narrows the candidate set (task-restricted mode); ids
    in the table are the decimal global ids of the steps.
    """
    narr_vec = np.asarray(narr_vec, dtype=np.float64)
    if narr_vec.shape != (step_table.d,):
        raise AssignmentError(
            f"narration dimension {narr_vec.shape} != table dimension {step_table.d}"
        )
    if restrict_gids is not None:
        gids = np.asarray(sorted(restrict_gids), dtype=np.int64)
        matrix = step_table.subset([str(g) for g in gids])
    else:
        gids = np.asarray([int(i) for i in step_table.ids], dtype=np.int64)
        matrix = step_table.matrix
    sims = matrix @ narr_vec
    top_ids, top_probs = softmax_topk(sims, gids, k)
    vid, idx, start_ms, end_ms = segment_ref
    return StepDistribution(
        video_id=vid,
        segment_index=idx,
        start_ms=start_ms,
        end_ms=end_ms,
        global_ids=tuple(int(g) for g in top_ids),
        probs=tuple(float(p) for p in top_probs),
        k=k,
    )


def argmax_step(dist: StepDistribution, kb: KnowledgeBase) -> PseudoLabel:
    """Highest-probability step of the distribution (ties already resolved)."""
    gid = dist.best
    step = kb.step(gid)
    return PseudoLabel(
        video_id=dist.video_id,
        segment_index=dist.segment_index,
        global_id=gid,
        task_id=step.task_id,
        step_index=step.step_index,
    )


def kmeans(
    points: np.ndarray, k: int, iters: int = 100, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with seeded uniform-random initial centers.

    Empty clusters are re-seeded from the point currently farthest from its
    assigned center. Returns (labels, centers); deterministic for a fixed
    seed.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1:
        raise AssignmentError("k must be >= 1")
    if k > n:
        raise AssignmentError(f"k={k} exceeds number of points {n}")
    rng = np.random.default_rng(seed)
    centers = points[rng.choice(n, size=k, replace=False)].copy()
    sq_points = (points**2).sum(axis=1)
    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(iters):
        d2 = sq_points[:, None] + (centers**2).sum(axis=1)[None, :] - 2.0 * points @ centers.T
        new_labels = np.argmin(d2, axis=1)
        dist_to_own = d2[np.arange(n), new_labels]
        for cluster in range(k):
            if not np.any(new_labels == cluster):
                far = int(np.argmax(dist_to_own))
                centers[cluster] = points[far]
                new_labels[far] = cluster
                dist_to_own[far] = 0.0
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for cluster in range(k):
            members = points[labels == cluster]
            if len(members):
                centers[cluster] = members.mean(axis=0)
    return labels, centers


def kmeans_asr_labels(
    narr_table: EmbeddingTable, k: int, iters: int = 100, seed: int = 0
) -> dict[str, int]:
    """Cluster narration embeddings; returns id -> cluster label."""
    labels, _ = kmeans(narr_table.matrix, k=k, iters=iters, seed=seed)
    return {i: int(c) for i, c in zip(narr_table.ids, labels)}


@dataclass
class AssignmentResult:
    """Pseudo-label dataset for one corpus under one supervision mode.

    ``label_space`` is "steps" for distant supervision (full or
    task-restricted), "tasks" for task-id supervision, and "clusters" for
    the k-means baseline; ``num_classes`` sizes the downstream classifier.
    """

    label_space: str
    num_classes: int
    distributions: list[StepDistribution]
    labels: list[PseudoLabel]
    processed: int = 0
    skipped_empty: int = 0
    config: AssignmentConfig = field(default_factory=AssignmentConfig)

    def save_jsonl(self, path: str | Path, kb: KnowledgeBase | None = None) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for dist in self.distributions:
                topk = []
                for gid, p in zip(dist.global_ids, dist.probs):
                    if self.label_space == "steps" and kb is not None:
                        step = kb.step(gid)
                        task, step_idx = step.task_id, step.step_index
                    else:
                        task, step_idx = -1, -1
                    topk.append({"gid": gid, "task": task, "step": step_idx, "p": p})
                rec = {
                    "video_id": dist.video_id,
                    "segment_index": dist.segment_index,
                    "start_ms": dist.start_ms,
                    "end_ms": dist.end_ms,
                    "topk": topk,
                }
                fh.write(json.dumps(rec) + "\n")


def load_labels_jsonl(path: str | Path) -> list[StepDistribution]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AssignmentError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            topk = rec["topk"]
            out.append(
                StepDistribution(
                    video_id=str(rec["video_id"]),
                    segment_index=int(rec["segment_index"]),
                    start_ms=int(rec.get("start_ms", 0)),
                    end_ms=int(rec.get("end_ms", 0)),
                    global_ids=tuple(int(e["gid"]) for e in topk),
                    probs=tuple(float(e["p"]) for e in topk),
                    k=len(topk),
                )
            )
    return out


def _narr_key(video_id: str, segment_index: int) -> str:
    return f"{video_id}:{segment_index}"


def _one_hot_distribution(
    seg, label: int, k: int
) -> StepDistribution:
    return StepDistribution(
        video_id=seg.video_id,
        segment_index=seg.segment_index,
        start_ms=seg.start_ms,
        end_ms=seg.end_ms,
        global_ids=(label,),
        probs=(1.0,),
        k=k,
    )


def assign_corpus(
    videos: Iterable[NarratedVideo],
    narr_table: EmbeddingTable | None,
    step_table: EmbeddingTable | None,
    kb: KnowledgeBase,
    config: AssignmentConfig,
) -> AssignmentResult:
    """Pseudo-label every non-empty segment of the corpus.

    Output order is (video_id, segment_index) regardless of input order, so
    parallel variants of the matching stage cannot change results. Segments
    with empty narration text are skipped and counted.
    """
    videos = sorted(videos, key=lambda v: v.video_id)
    nonempty = [
        seg for v in videos for seg in v.segments if seg.text.strip()
    ]
    skipped = sum(len(v.segments) for v in videos) - len(nonempty)
    mode = config.mode

    needs_narr = mode in ("full", "task_restricted", "asr_kmeans")
    if needs_narr:
        if narr_table is None:
            raise AssignmentError(f"mode {mode!r} requires narration embeddings")
        missing = [
            _narr_key(s.video_id, s.segment_index)
            for s in nonempty
            if _narr_key(s.video_id, s.segment_index) not in narr_table
        ]
        if missing:
            shown = ", ".join(missing[:10])
            raise AssignmentError(
                f"{len(missing)} segment(s) lack narration embeddings; first: {shown}"
            )

    task_of_video = {v.video_id: v.task_id for v in videos}
    distributions: list[StepDistribution] = []
    labels: list[PseudoLabel] = []

    if mode in ("full", "task_restricted"):
        if step_table is None:
            raise AssignmentError(f"mode {mode!r} requires step embeddings")
        for seg in nonempty:
            restrict = None
            if mode == "task_restricted":
                task_id = task_of_video[seg.video_id]
                if task_id is None or not kb.has_task(task_id):
                    raise AssignmentError(
                        f"video {seg.video_id!r}: task id {task_id!r} not in knowledge base"
                    )
                restrict = [s.global_id for s in kb.steps_of_task(task_id)]
            dist = step_distribution(
                narr_table.row(_narr_key(seg.video_id, seg.segment_index)),
                step_table,
                k=config.k,
                restrict_gids=restrict,
                segment_ref=(seg.video_id, seg.segment_index, seg.start_ms, seg.end_ms),
            )
            distributions.append(dist)
            labels.append(argmax_step(dist, kb))
        label_space, num_classes = "steps", kb.num_steps
    elif mode == "task_id_label":
        for seg in nonempty:
            task_id = task_of_video[seg.video_id]
            if task_id is None:
                raise AssignmentError(f"video {seg.video_id!r} has no task id")
            distributions.append(_one_hot_distribution(seg, task_id, config.k))
            labels.append(
                PseudoLabel(seg.video_id, seg.segment_index, task_id, task_id, -1)
            )
        label_space, num_classes = "tasks", kb.num_tasks
    else:  # asr_kmeans
        k = config.kmeans_k if config.kmeans_k is not None else kb.num_steps
        keys = [_narr_key(s.video_id, s.segment_index) for s in nonempty]
        points = narr_table.subset(keys)
        cluster_labels, _ = kmeans(points, k=k, iters=config.kmeans_iters, seed=config.seed)
        for seg, cluster in zip(nonempty, cluster_labels):
            distributions.append(_one_hot_distribution(seg, int(cluster), config.k))
            labels.append(
                PseudoLabel(seg.video_id, seg.segment_index, int(cluster), -1, -1)
            )
        label_space, num_classes = "clusters", k

    order = np.argsort([f"{d.video_id}\x00{d.segment_index:012d}" for d in distributions])
    distributions = [distributions[i] for i in order]
    labels = [labels[i] for i in order]
    return AssignmentResult(
        label_space=label_space,
        num_classes=num_classes,
        distributions=distributions,
        labels=labels,
        processed=len(distributions),
        skipped_empty=skipped,
        config=config,
    )

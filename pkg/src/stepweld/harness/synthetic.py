"""Synthetic planted-truth corpora for end-to-end validation.

Each video executes one task's steps in order; its narration is the step
text corrupted by token drops and random distractor tokens; its segment
features are the true-step one-hot plus Gaussian noise. The hidden truth
(step per segment, task per video) is returned separately so that training
stages can be wired to consume only pseudo-labels.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..corpus import KnowledgeBase, NarratedVideo, NarrationSegment
from ..embedding import EmbeddingTable

SEGMENT_SPAN_MS = 8000
TOKENS_PER_STEP = 3


class SyntheticError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    tasks: int = 10
    steps_per_task: tuple[int, int] = (5, 5)  # inclusive range
    vocab_size: int = 300
    distractor_tokens: int = 2
    drop_prob: float = 0.0
    videos_per_task: int = 6
    segments_per_video: int = 8
    feature_noise: float = 0.5
    task_id_corrupt_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        counts = (
            self.tasks,
            self.steps_per_task[0],
            self.vocab_size,
            self.videos_per_task,
            self.segments_per_video,
        )
        if any(c < 1 for c in counts):
            raise SyntheticError("all counts must be >= 1")
        if self.steps_per_task[1] < self.steps_per_task[0]:
            raise SyntheticError("steps_per_task range is reversed")
        for p in (self.drop_prob, self.task_id_corrupt_prob):
            if not 0.0 <= p <= 1.0:
                raise SyntheticError("probabilities must be in [0, 1]")
        if self.distractor_tokens < 0 or self.feature_noise < 0:
            raise SyntheticError("noise parameters must be >= 0")


@dataclass
class GroundTruth:
    """Hidden labels; consumed only by evaluation-side stages."""

    step_of_segment: dict[tuple[str, int], int]
    task_of_video: dict[str, int]


@dataclass
class SyntheticCorpus:
    spec: SyntheticSpec
    kb: KnowledgeBase
    videos: list[NarratedVideo]
    features: EmbeddingTable  # ids "video_id:segment_index", rows = D_in
    truth: GroundTruth

    def digest_payload(self) -> bytes:
        """Canonical byte serialization (used for determinism checks/caching)."""
        doc = {
            "spec": asdict(self.spec),
            "kb": [
                {"task_id": t.task_id, "title": t.title, "steps": [s.text for s in t.steps]}
                for t in self.kb.tasks
            ],
            "videos": [
                {
                    "video_id": v.video_id,
                    "task_id": v.task_id,
                    "segments": [
                        [s.segment_index, s.start_ms, s.end_ms, s.text] for s in v.segments
                    ],
                }
                for v in self.videos
            ],
            "truth": {
                "steps": sorted(
                    (f"{vid}:{idx}", gid)
                    for (vid, idx), gid in self.truth.step_of_segment.items()
                ),
                "tasks": sorted(self.truth.task_of_video.items()),
            },
        }
        return json.dumps(doc, sort_keys=True).encode() + self.features.values32.tobytes()


def _sample_step_texts(rng: np.random.Generator, vocab: list[str], total: int) -> list[str]:
    if len(vocab) < TOKENS_PER_STEP:
        raise SyntheticError("vocabulary too small for a single step")
    seen: set[tuple[str, ...]] = set()
    texts: list[str] = []
    attempts = 0
    while len(texts) < total:
        attempts += 1
        if attempts > 200 * total:
            raise SyntheticError(
                f"vocabulary of {len(vocab)} cannot yield {total} distinct steps"
            )
        idx = rng.choice(len(vocab), size=TOKENS_PER_STEP, replace=False)
        key = tuple(sorted(vocab[i] for i in idx))  # bag-of-words identity
        if key in seen:
            continue
        seen.add(key)
        texts.append(" ".join(vocab[i] for i in idx))
    return texts


def _corrupt(rng: np.random.Generator, text: str, vocab: list[str], spec: SyntheticSpec) -> str:
    tokens = [t for t in text.split() if rng.random() >= spec.drop_prob]
    for _ in range(spec.distractor_tokens):
        pos = int(rng.integers(0, len(tokens) + 1))
        tokens.insert(pos, vocab[int(rng.integers(0, len(vocab)))])
    return " ".join(tokens)


def generate_order_dataset(
    n_train: int,
    n_test_pairs: int,
    length: int = 8,
    d: int = 32,
    noise: float = 0.0,
    seed: int = 0,
    kb_vectors: bool = False,
):
    """Step-order discrimination task: label = 1 iff marker A precedes marker B.

    Returns (train, test) lists of (tokens, label, kb) tuples. Test items are
    swapped pairs sharing an identical token multiset, so any
    permutation-invariant model scores exactly 50% on them. ``kb`` is None
    unless ``kb_vectors`` is set, in which case it carries clean one-hot
    identities of the planted markers (slot 0 = A, slot 1 = B, slot 2 =
    filler) for KB-transfer runs.
    """
    rng = np.random.default_rng(seed)

    def unit(vec):
        return vec / np.linalg.norm(vec)

    marker_a = unit(rng.standard_normal(d))
    marker_b = unit(rng.standard_normal(d))

    def sample():
        i, j = rng.choice(length, size=2, replace=False)
        tokens = np.stack([unit(rng.standard_normal(d)) for _ in range(length)])
        tokens[i] = marker_a + noise * rng.standard_normal(d)
        tokens[j] = marker_b + noise * rng.standard_normal(d)
        kb = None
        if kb_vectors:
            kb = np.zeros((length, d))
            kb[:, 2] = 1.0
            kb[i, :] = 0.0
            kb[i, 0] = 1.0
            kb[j, :] = 0.0
            kb[j, 1] = 1.0
        label = int(i < j)
        return tokens, label, kb, (int(i), int(j))

    train = []
    for _ in range(n_train):
        tokens, label, kb, _ = sample()
        train.append((tokens, label, kb))
    test = []
    for _ in range(n_test_pairs):
        tokens, label, kb, (i, j) = sample()
        test.append((tokens, label, kb))
        swapped = tokens.copy()
        swapped[[i, j]] = swapped[[j, i]]
        kb_swapped = None
        if kb is not None:
            kb_swapped = kb.copy()
            kb_swapped[[i, j]] = kb_swapped[[j, i]]
        test.append((swapped, 1 - label, kb_swapped))
    return train, test


def generate_synthetic(spec: SyntheticSpec) -> SyntheticCorpus:
    rng = np.random.default_rng(spec.seed)
    vocab = [f"w{i:04d}" for i in range(spec.vocab_size)]

    lo, hi = spec.steps_per_task
    steps_per_task = [int(rng.integers(lo, hi + 1)) for _ in range(spec.tasks)]
    texts = _sample_step_texts(rng, vocab, sum(steps_per_task))
    records = []
    cursor = 0
    for task_id, count in enumerate(steps_per_task):
        records.append((task_id, f"task {task_id:03d}", texts[cursor : cursor + count]))
        cursor += count
    kb = KnowledgeBase.from_records(records)
    num_steps = kb.num_steps

    videos: list[NarratedVideo] = []
    step_of_segment: dict[tuple[str, int], int] = {}
    task_of_video: dict[str, int] = {}
    feature_ids: list[str] = []
    feature_rows: list[np.ndarray] = []
    for task in kb.tasks:
        for v in range(spec.videos_per_task):
            video_id = f"v{task.task_id:03d}_{v:03d}"
            observed_task = task.task_id
            if spec.task_id_corrupt_prob and rng.random() < spec.task_id_corrupt_prob:
                other = int(rng.integers(0, spec.tasks - 1))
                observed_task = other if other < task.task_id else other + 1
            segments = []
            for l in range(spec.segments_per_video):
                step = task.steps[l % len(task.steps)]
                text = _corrupt(rng, step.text, vocab, spec)
                segments.append(
                    NarrationSegment(
                        video_id=video_id,
                        segment_index=l,
                        start_ms=l * SEGMENT_SPAN_MS,
                        end_ms=(l + 1) * SEGMENT_SPAN_MS,
                        text=text,
                    )
                )
                step_of_segment[(video_id, l)] = step.global_id
                row = np.zeros(num_steps)
                row[step.global_id] = 1.0
                row += spec.feature_noise * rng.standard_normal(num_steps)
                feature_ids.append(f"{video_id}:{l}")
                feature_rows.append(row)
            videos.append(
                NarratedVideo(video_id=video_id, segments=tuple(segments), task_id=observed_task)
            )
            task_of_video[video_id] = task.task_id
    features = EmbeddingTable(feature_ids, np.stack(feature_rows))
    return SyntheticCorpus(
        spec=spec,
        kb=kb,
        videos=videos,
        features=features,
        truth=GroundTruth(step_of_segment=step_of_segment, task_of_video=task_of_video),
    )

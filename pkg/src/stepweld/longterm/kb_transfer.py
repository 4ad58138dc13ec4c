"""Knowledge-base transfer: step retrieval and transformer input assembly.

At inference the trained segment model retrieves, for each segment, the
knowledge-base step that best explains it (classifier: max score; regressor:
max embedding similarity). The retrieved step's language embedding, or its
successor's for forecasting, is interleaved with the segment embeddings to
form the transformer input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..corpus import KnowledgeBase
from ..embedding import EmbeddingTable
from ..segment_model import SegmentModel

MODES = ("basic", "kb_transfer", "forecast_kb")


class InputBuildError(ValueError):
    pass


@dataclass(frozen=True)
class StepEmbeddingSequence:
    """Per-video sequence of segment embeddings, optionally with KB vectors.

    ``kb_missing`` marks slots whose KB vector does not exist (a matched
    step with no successor); those slots receive the learned null token.
    """

    video_id: str
    f_vectors: np.ndarray  # (L', d)
    kb_vectors: np.ndarray | None = None  # (L', d)
    kb_missing: np.ndarray | None = None  # (L',) bool

    def __post_init__(self):
        f = np.asarray(self.f_vectors)
        if f.ndim != 2 or f.shape[0] < 1:
            raise InputBuildError("f_vectors must be (L', d) with L' >= 1")
        if self.kb_vectors is not None and np.asarray(self.kb_vectors).shape != f.shape:
            raise InputBuildError("kb_vectors must match f_vectors shape")


@dataclass(frozen=True)
class RetrievedStep:
    global_id: int
    task_id: int
    step_index: int
    embedding: np.ndarray


def _step_matrix_by_gid(step_table: EmbeddingTable, num_steps: int) -> np.ndarray:
    return step_table.subset([str(g) for g in range(num_steps)])


def retrieve_steps(
    model: SegmentModel,
    x: np.ndarray,
    kb: KnowledgeBase,
    step_table: EmbeddingTable,
) -> list[RetrievedStep]:
    """Best-matching KB step per input row; ties go to the lowest global id."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    fwd = model.forward(x)
    if model.config.head == "classifier":
        if model.config.num_classes != kb.num_steps:
            raise InputBuildError(
                "classifier retrieval needs a model over the step label space"
            )
        best = np.argmax(fwd.probs, axis=1)  # first max = lowest gid
    else:
        matrix = _step_matrix_by_gid(step_table, kb.num_steps)
        scores = fwd.features @ matrix.T
        best = np.argmax(scores, axis=1)
    out = []
    for gid in best:
        step = kb.step(int(gid))
        out.append(
            RetrievedStep(step.global_id, step.task_id, step.step_index, step_table.row(str(step.global_id)))
        )
    return out


def retrieve_step(
    model: SegmentModel, x: np.ndarray, kb: KnowledgeBase, step_table: EmbeddingTable
) -> RetrievedStep:
    return retrieve_steps(model, x, kb, step_table)[0]


def successor_vectors(
    gids: list[int], kb: KnowledgeBase, step_table: EmbeddingTable
) -> tuple[np.ndarray, np.ndarray]:
    """Embeddings of each step's successor; missing successors are masked."""
    d = step_table.d
    vectors = np.zeros((len(gids), d))
    missing = np.zeros(len(gids), dtype=bool)
    for i, gid in enumerate(gids):
        nxt = kb.successor(gid)
        if nxt is None:
            missing[i] = True
        else:
            vectors[i] = step_table.row(str(nxt.global_id))
    return vectors, missing


def build_input(
    seq: StepEmbeddingSequence, mode: str
) -> tuple[np.ndarray, np.ndarray | None]:
    """Token sequence for the long-term transformer.

    basic        -> [f_1 .. f_L']                       (L' tokens)
    kb_transfer  -> [f_1, kb_1, f_2, kb_2, ...]          (2 L' tokens)
    forecast_kb  -> same interleaving, kb vectors being successor embeddings;
                    slots flagged in kb_missing get the learned null token.
    """
    if mode not in MODES:
        raise InputBuildError(f"unknown input mode {mode!r}")
    f = np.asarray(seq.f_vectors, dtype=np.float64)
    if mode == "basic":
        return f, None
    if seq.kb_vectors is None:
        raise InputBuildError(f"mode {mode!r} requires kb_vectors")
    kb_vecs = np.asarray(seq.kb_vectors, dtype=np.float64)
    length, d = f.shape
    tokens = np.empty((2 * length, d))
    tokens[0::2] = f
    tokens[1::2] = kb_vecs
    null_mask = np.zeros(2 * length, dtype=bool)
    if seq.kb_missing is not None:
        null_mask[1::2] = np.asarray(seq.kb_missing, dtype=bool)
    return tokens, (null_mask if null_mask.any() else None)


@dataclass(frozen=True)
class ForecastSample:
    """Observed history plus the class of the next, unobserved step."""

    video_id: str
    tokens: np.ndarray
    null_mask: np.ndarray | None
    target_gid: int
    history_len: int


def build_forecast_samples(
    sequences: list[StepEmbeddingSequence],
    targets: list[list[int]],
    mode: str = "basic",
    min_history: int = 1,
    max_history: int | None = None,
) -> list[ForecastSample]:
    """Expand videos into forecasting samples with >= min_history observed steps.

    For each video, every cut point m in [min_history, L') yields a sample
    whose history is segments [0, m) and whose target is the class of
    segment m (``targets`` holds one class per segment), so the target is
    strictly later than everything observed.
    """
    if min_history < 1:
        raise InputBuildError("history must contain at least one step")
    samples = []
    for seq, video_targets in zip(sequences, targets):
        length = seq.f_vectors.shape[0]
        for m in range(min_history, length):
            lo = 0 if max_history is None else max(0, m - max_history)
            hist = StepEmbeddingSequence(
                video_id=seq.video_id,
                f_vectors=seq.f_vectors[lo:m],
                kb_vectors=None if seq.kb_vectors is None else seq.kb_vectors[lo:m],
                kb_missing=None if seq.kb_missing is None else seq.kb_missing[lo:m],
            )
            tokens, null_mask = build_input(hist, mode)
            samples.append(
                ForecastSample(
                    video_id=seq.video_id,
                    tokens=tokens,
                    null_mask=null_mask,
                    target_gid=video_targets[m],
                    history_len=m - lo,
                )
            )
    return samples

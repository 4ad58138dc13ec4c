"""Training and evaluation of the long-term transformer classifier.

Sequences of different lengths are bucketed so each mini-batch is a dense
(B, L, d) block; batch order and shuffling are seeded, so runs are
bit-reproducible single-threaded.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from ..segment_model.model import log_softmax
from ..segment_model.train import OptimizerConfig, make_optimizer
from .transformer import TransformerClassifier, TransformerConfig, TransformerError


@dataclass(frozen=True)
class SequenceSample:
    tokens: np.ndarray  # (L, d)
    label: int
    null_mask: np.ndarray | None = None


@dataclass(frozen=True)
class LongTermTrainConfig:
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(name="adamw", lr=3e-3)
    )
    lr_milestones: tuple[int, ...] = ()
    lr_factor: float = 0.1


@dataclass
class LongTermResult:
    model: TransformerClassifier
    loss_curve: list[float]
    accuracy: float | None = None
    per_class: dict[int, float] = field(default_factory=dict)
    n_eval: int = 0


def _buckets(samples: list[SequenceSample]) -> dict[int, list[int]]:
    by_len: dict[int, list[int]] = defaultdict(list)
    for i, s in enumerate(samples):
        by_len[s.tokens.shape[0]].append(i)
    return dict(sorted(by_len.items()))


def _stack(samples: list[SequenceSample], idx: list[int]):
    tokens = np.stack([samples[i].tokens for i in idx])
    labels = np.array([samples[i].label for i in idx], dtype=np.int64)
    if any(samples[i].null_mask is not None for i in idx):
        mask = np.stack(
            [
                samples[i].null_mask
                if samples[i].null_mask is not None
                else np.zeros(samples[i].tokens.shape[0], dtype=bool)
                for i in idx
            ]
        )
    else:
        mask = None
    return tokens, labels, mask


def _ce_and_grad(logits: np.ndarray, labels: np.ndarray):
    lp = log_softmax(logits)
    n = logits.shape[0]
    loss = float(-lp[np.arange(n), labels].mean())
    grad = np.exp(lp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def train_longterm(
    samples: list[SequenceSample],
    model_config: TransformerConfig,
    config: LongTermTrainConfig,
    eval_samples: list[SequenceSample] | None = None,
) -> LongTermResult:
    if not samples:
        raise TransformerError("empty training set")
    num_classes = model_config.num_classes
    for s in samples:
        if not 0 <= s.label < num_classes:
            raise TransformerError(f"label {s.label} outside [0, {num_classes})")
    model = TransformerClassifier(model_config)
    optimizer = make_optimizer(model.params, config.optimizer)
    rng = np.random.default_rng(config.seed)
    buckets = _buckets(samples)
    lr = config.optimizer.lr
    curve: list[float] = []
    for epoch in range(config.epochs):
        batches: list[list[int]] = []
        for _, idx in buckets.items():
            order = rng.permutation(len(idx))
            shuffled = [idx[i] for i in order]
            for start in range(0, len(shuffled), config.batch_size):
                batches.append(shuffled[start : start + config.batch_size])
        rng.shuffle(batches)
        total, count = 0.0, 0
        for batch in batches:
            tokens, labels, mask = _stack(samples, batch)
            logits, cache = model.forward(tokens, mask)
            loss, d_logits = _ce_and_grad(logits, labels)
            grads = model.backward(cache, d_logits)
            optimizer.step(model.params, grads, lr)
            total += loss * len(batch)
            count += len(batch)
        curve.append(total / count)
        if (epoch + 1) in config.lr_milestones:
            lr *= config.lr_factor
    result = LongTermResult(model=model, loss_curve=curve)
    if eval_samples:
        result.accuracy, result.per_class, result.n_eval = evaluate_longterm(
            model, eval_samples
        )
    return result


def predict_longterm(
    model: TransformerClassifier, samples: list[SequenceSample]
) -> np.ndarray:
    preds = np.zeros(len(samples), dtype=np.int64)
    buckets = _buckets(samples)
    for _, idx in buckets.items():
        tokens, _, mask = _stack(samples, idx)
        logits, _ = model.forward(tokens, mask)
        preds[idx] = np.argmax(logits, axis=1)
    return preds


def predict_ensembled(
    model: TransformerClassifier, windows: list[list[SequenceSample]]
) -> np.ndarray:
    """Average logits over several temporal windows of the same video."""
    preds = np.zeros(len(windows), dtype=np.int64)
    for i, group in enumerate(windows):
        acc = None
        for s in group:
            logits, _ = model.forward(s.tokens[None], None if s.null_mask is None else s.null_mask[None])
            acc = logits[0] if acc is None else acc + logits[0]
        preds[i] = int(np.argmax(acc / len(group)))
    return preds


def evaluate_longterm(
    model: TransformerClassifier, samples: list[SequenceSample]
) -> tuple[float, dict[int, float], int]:
    preds = predict_longterm(model, samples)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    accuracy = float((preds == labels).mean())
    per_class: dict[int, float] = {}
    for c in np.unique(labels):
        sel = labels == c
        per_class[int(c)] = float((preds[sel] == c).mean())
    return accuracy, per_class, len(samples)

"""Evaluation metrics: top-1, per-class mean, duration-weighted frame accuracy."""
from __future__ import annotations

import logging

import numpy as np

logger = logging.getLogger(__name__)

METRICS = ("top1", "per_class", "frame_acc")


class EvaluationError(ValueError):
    pass


def _check(predictions, labels) -> tuple[np.ndarray, np.ndarray]:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise EvaluationError(
            f"predictions {predictions.shape} and labels {labels.shape} differ in length"
        )
    return predictions, labels


def top1_accuracy(predictions, labels) -> float:
    predictions, labels = _check(predictions, labels)
    return float((predictions == labels).mean())


def per_class_accuracy(predictions, labels) -> tuple[float, dict[int, float]]:
    """Mean of per-class accuracies over classes present in the labels."""
    predictions, labels = _check(predictions, labels)
    per_class: dict[int, float] = {}
    for c in np.unique(labels):
        sel = labels == c
        per_class[int(c)] = float((predictions[sel] == c).mean())
    return float(np.mean(list(per_class.values()))), per_class


def frame_accuracy(predictions, labels, durations_s) -> float:
    """Accuracy weighting each segment by its duration in 1-second units."""
    predictions, labels = _check(predictions, labels)
    durations = np.asarray(durations_s, dtype=np.float64)
    if durations.shape != labels.shape:
        raise EvaluationError("durations must align with labels")
    if (durations <= 0).any():
        raise EvaluationError("durations must be positive")
    correct = (predictions == labels).astype(np.float64)
    return float((correct * durations).sum() / durations.sum())


def evaluate(predictions, labels, metric: str, durations_s=None):
    if metric == "top1":
        return top1_accuracy(predictions, labels)
    if metric == "per_class":
        return per_class_accuracy(predictions, labels)[0]
    if metric == "frame_acc":
        if durations_s is None:
            raise EvaluationError("frame_acc needs segment durations")
        return frame_accuracy(predictions, labels, durations_s)
    raise EvaluationError(f"unknown metric {metric!r}; expected one of {METRICS}")

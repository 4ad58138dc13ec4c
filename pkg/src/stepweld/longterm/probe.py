"""Linear probe: multinomial logistic regression on frozen features."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..segment_model.model import log_softmax
from ..segment_model.train import OptimizerConfig, make_optimizer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 300
    l2: float = 1e-4
    seed: int = 0
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(name="adamw", lr=0.05)
    )


@dataclass
class ProbeResult:
    accuracy: float
    per_class: dict[int, float]
    n: int
    weights: np.ndarray
    bias: np.ndarray


def probe_loss_and_grads(
    w: np.ndarray, b: np.ndarray, x: np.ndarray, y: np.ndarray, l2: float
):
    """Mean cross-entropy + L2 penalty on the weight matrix, with gradients."""
    logits = x @ w + b
    lp = log_softmax(logits)
    n = x.shape[0]
    loss = float(-lp[np.arange(n), y].mean()) + 0.5 * l2 * float((w * w).sum())
    d_logits = np.exp(lp)
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    return loss, {"w": x.T @ d_logits + l2 * w, "b": d_logits.sum(axis=0)}


def linear_probe(
    train_x: np.ndarray,
    train_y: np.ndarray,
    test_x: np.ndarray,
    test_y: np.ndarray,
    num_classes: int,
    config: ProbeConfig | None = None,
) -> ProbeResult:
    """Train a linear classifier full-batch on frozen features and score it.

    Classes absent from the test set are excluded from the per-class report
    (with a warning); accuracy is plain top-1 over the test set.
    """
    config = config or ProbeConfig()
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    test_y = np.asarray(test_y, dtype=np.int64)
    rng = np.random.default_rng(config.seed)
    d = train_x.shape[1]
    params = {
        "w": rng.uniform(-1.0 / np.sqrt(d), 1.0 / np.sqrt(d), size=(d, num_classes)),
        "b": np.zeros(num_classes),
    }
    optimizer = make_optimizer(params, config.optimizer)
    for _ in range(config.epochs):
        _, grads = probe_loss_and_grads(
            params["w"], params["b"], train_x, train_y, config.l2
        )
        optimizer.step(params, grads, config.optimizer.lr)
    preds = np.argmax(test_x @ params["w"] + params["b"], axis=1)
    accuracy = float((preds == test_y).mean())
    per_class: dict[int, float] = {}
    missing = []
    for c in range(num_classes):
        sel = test_y == c
        if not sel.any():
            missing.append(c)
            continue
        per_class[c] = float((preds[sel] == c).mean())
    if missing:
        logger.warning("probe: %d class(es) absent from the test set, excluded", len(missing))
    return ProbeResult(
        accuracy=accuracy,
        per_class=per_class,
        n=len(test_y),
        weights=params["w"],
        bias=params["b"],
    )

"""Training objectives for the segment model, with analytic gradients.

Three objectives: cross-entropy on the pseudo-label, KL-divergence against
the truncated step distribution, and NCE regression toward the positive
step's language embedding. Each returns (loss, gradient-at-head-output) so
the model's backward pass stays objective-agnostic.

Cross-entropy and distribution matching share one gradient kernel; with a
one-hot target the two objectives produce bit-identical losses and
gradients, which downstream tests rely on.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_CLAMP = 1e-12


class LossError(ValueError):
    pass


@dataclass
class LossValue:
    loss: float
    d_logits: np.ndarray | None = None
    d_features: np.ndarray | None = None
    clamped: int = 0


def _soft_target_grad(
    probs: np.ndarray, support_ids: np.ndarray, support_ps: np.ndarray
) -> np.ndarray:
    """d(mean loss)/d(logits) for a target distribution on a sparse support.

    For target P and prediction Q = softmax(logits), the per-sample gradient
    is Q * sum(P) - P scattered onto the support; sum(P) is 1 for proper
    targets, which reduces to the familiar probs-minus-target form.
    """
    n = probs.shape[0]
    g = probs * support_ps.sum(axis=1, keepdims=True)
    rows = np.repeat(np.arange(n), support_ids.shape[1])
    np.subtract.at(g, (rows, support_ids.ravel()), support_ps.ravel())
    return g / n


def loss_step_ce(log_probs: np.ndarray, probs: np.ndarray, labels: np.ndarray) -> LossValue:
    """Mean negative log-probability of the pseudo-label class."""
    labels = np.asarray(labels)
    n, num_classes = log_probs.shape
    if labels.shape != (n,):
        raise LossError(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise LossError(f"label outside [0, {num_classes})")
    ids = labels.reshape(n, 1)
    ps = np.ones((n, 1), dtype=np.float64)
    per_sample = -log_probs[np.arange(n), labels]
    return LossValue(
        loss=float(per_sample.mean()),
        d_logits=_soft_target_grad(probs, ids, ps),
    )


def loss_dist_match(
    log_probs: np.ndarray,
    probs: np.ndarray,
    support_ids: np.ndarray,
    support_ps: np.ndarray,
    clamp: float = PROB_CLAMP,
) -> LossValue:
    """Mean KL(target || prediction) over the target's truncated support.

    Entries with target probability 0 (padding) contribute nothing. Model
    probabilities below ``clamp`` are clamped rather than erroring; the
    number of clamped terms is reported.
    """
    support_ids = np.asarray(support_ids, dtype=np.int64)
    support_ps = np.asarray(support_ps, dtype=np.float64)
    n = log_probs.shape[0]
    if support_ids.shape != support_ps.shape or support_ids.shape[0] != n:
        raise LossError("support arrays must be (n, K) and aligned with the batch")
    rows = np.repeat(np.arange(n), support_ids.shape[1]).reshape(support_ids.shape)
    log_q = log_probs[rows, support_ids]
    clamp_log = np.log(clamp)
    clamped = int((log_q < clamp_log).sum())
    log_q = np.maximum(log_q, clamp_log)
    active = support_ps > 0
    log_p = np.where(active, np.log(np.where(active, support_ps, 1.0)), 0.0)
    terms = np.where(active, support_ps * (log_p - log_q), 0.0)
    per_sample = terms.sum(axis=1)
    return LossValue(
        loss=float(per_sample.mean()),
        d_logits=_soft_target_grad(probs, support_ids, support_ps),
        clamped=clamped,
    )


def _logsumexp_rows(scores: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise logsumexp over masked-in entries; also returns the softmax weights."""
    neg_inf = np.full_like(scores, -np.inf)
    masked = np.where(mask, scores, neg_inf)
    m = masked.max(axis=1, keepdims=True)
    w = np.exp(masked - m)
    w[~mask] = 0.0
    z = w.sum(axis=1, keepdims=True)
    return (m + np.log(z)).ravel(), w / z


def loss_step_nce(
    features: np.ndarray,
    pos_ids: np.ndarray,
    step_matrix: np.ndarray,
    num_negatives: int | None = None,
    seed: int = 0,
    include_positive: bool = False,
) -> LossValue:
    """NCE regression loss toward the positive step embedding.

    The denominator sums over the other steps only (the positive is
    excluded, so the loss can go negative); ``include_positive`` switches to
    the conventional form with the positive inside the denominator.
    ``num_negatives`` draws a seeded uniform sample instead of using all
    S - 1 negatives.
    """
    features = np.asarray(features, dtype=np.float64)
    step_matrix = np.asarray(step_matrix, dtype=np.float64)
    pos_ids = np.asarray(pos_ids, dtype=np.int64)
    n = features.shape[0]
    num_steps = step_matrix.shape[0]
    if num_negatives is not None and num_negatives < 1:
        raise LossError("num_negatives must be >= 1")

    scores = features @ step_matrix.T  # (n, S)
    pos_scores = scores[np.arange(n), pos_ids]

    mask = np.ones((n, num_steps), dtype=bool)
    if num_negatives is not None and num_negatives < num_steps - 1:
        rng = np.random.default_rng(seed)
        mask[:] = False
        for i in range(n):
            pool = np.delete(np.arange(num_steps), pos_ids[i])
            chosen = rng.choice(pool, size=num_negatives, replace=False)
            mask[i, chosen] = True
    else:
        mask[np.arange(n), pos_ids] = False
    if include_positive:
        mask[np.arange(n), pos_ids] = True

    lse, weights = _logsumexp_rows(scores, mask)
    per_sample = -pos_scores + lse
    d_feat = weights @ step_matrix
    d_feat -= step_matrix[pos_ids]
    return LossValue(loss=float(per_sample.mean()), d_features=d_feat / n)

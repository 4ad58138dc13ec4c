"""Deterministic mini-batch training loop for the segment model."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..assignment import AssignmentResult
from .losses import LossError, loss_dist_match, loss_step_ce, loss_step_nce
from .model import SegmentModel, SegmentModelConfig

OBJECTIVES = ("step_ce", "dist_match", "step_nce")


@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "sgd"  # "sgd" | "adamw"
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0:
            raise LossError("learning rate must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "dist_match"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    lr_milestones: tuple[int, ...] = ()  # epochs after which lr scales by lr_factor
    lr_factor: float = 0.1
    nce_negatives: int | None = None  # None = all S-1 negatives
    nce_include_positive: bool = False

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise LossError(f"unknown objective {self.objective!r}")


class SGD:
    def __init__(self, params: dict[str, np.ndarray], config: OptimizerConfig):
        self.config = config
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        mu = self.config.momentum
        for name, g in grads.items():
            v = self.velocity[name]
            v *= mu
            v += g
            params[name] -= lr * v


class AdamW:
    def __init__(self, params: dict[str, np.ndarray], config: OptimizerConfig):
        self.config = config
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        b1, b2 = self.config.betas
        eps, wd = self.config.eps, self.config.weight_decay
        self.t += 1
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            params[name] -= lr * (m_hat / (np.sqrt(v_hat) + eps) + wd * params[name])


def make_optimizer(params: dict[str, np.ndarray], config: OptimizerConfig):
    if config.name == "sgd":
        return SGD(params, config)
    if config.name == "adamw":
        return AdamW(params, config)
    raise LossError(f"unknown optimizer {config.name!r}")


@dataclass
class Targets:
    """Per-sample targets in the shape each objective consumes."""

    labels: np.ndarray | None = None  # (N,) for step_ce / step_nce positives
    support_ids: np.ndarray | None = None  # (N, K) for dist_match
    support_ps: np.ndarray | None = None


def targets_from_result(result: AssignmentResult) -> Targets:
    """Dense target arrays from a pseudo-label dataset (padded to max K)."""
    return targets_from_distributions(result.distributions)


def targets_from_distributions(dists) -> Targets:
    max_k = max(len(d.global_ids) for d in dists)
    ids = np.zeros((len(dists), max_k), dtype=np.int64)
    ps = np.zeros((len(dists), max_k), dtype=np.float64)
    labels = np.zeros(len(dists), dtype=np.int64)
    for i, d in enumerate(dists):
        ids[i, : len(d.global_ids)] = d.global_ids
        ps[i, : len(d.probs)] = d.probs
        labels[i] = d.best
    return Targets(labels=labels, support_ids=ids, support_ps=ps)


@dataclass
class TrainResult:
    model: SegmentModel
    loss_curve: list[float]
    clamped: int = 0


def _batch_loss(model: SegmentModel, config: TrainConfig, x, targets: Targets, idx, step_matrix):
    fwd = model.forward(x[idx])
    if config.objective == "step_ce":
        lv = loss_step_ce(fwd.log_probs, fwd.probs, targets.labels[idx])
    elif config.objective == "dist_match":
        lv = loss_dist_match(
            fwd.log_probs, fwd.probs, targets.support_ids[idx], targets.support_ps[idx]
        )
    else:
        lv = loss_step_nce(
            fwd.features,
            targets.labels[idx],
            step_matrix,
            num_negatives=config.nce_negatives,
            seed=config.seed,
            include_positive=config.nce_include_positive,
        )
    grads = model.backward(fwd.cache, d_logits=lv.d_logits, d_features=lv.d_features)
    return lv, grads


def train(
    features: np.ndarray,
    targets: Targets,
    model_config: SegmentModelConfig,
    config: TrainConfig,
    step_matrix: np.ndarray | None = None,
) -> TrainResult:
    """Train a segment model; bit-reproducible for a fixed seed.

    ``step_matrix`` (S x d) is required for the NCE objective and ignored
    otherwise.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.size == 0:
        raise LossError("empty training set")
    if config.objective == "step_nce":
        if step_matrix is None:
            raise LossError("step_nce needs the step embedding matrix")
        if model_config.head != "regressor":
            raise LossError("step_nce trains a regressor head")
    model = SegmentModel(model_config)
    optimizer = make_optimizer(model.params, config.optimizer)
    rng = np.random.default_rng(config.seed)
    n = features.shape[0]
    lr = config.optimizer.lr
    curve: list[float] = []
    clamped = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            lv, grads = _batch_loss(model, config, features, targets, idx, step_matrix)
            optimizer.step(model.params, grads, lr)
            epoch_loss += lv.loss * len(idx)
            clamped += lv.clamped
        curve.append(epoch_loss / n)
        if (epoch + 1) in config.lr_milestones:
            lr *= config.lr_factor
    return TrainResult(model=model, loss_curve=curve, clamped=clamped)

"""Trainable segment-level model over input feature vectors.

The trunk maps D_in features to a d-dimensional step embedding f(x); the
head is either a softmax classifier over the label space (f(x) is the
second-to-last layer) or the identity (step regression, f(x) is the
output). All math is float64 and all gradients are written out explicitly
so they can be validated against central finite differences.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentModelConfig:
    d_in: int
    d: int
    num_classes: int | None = None
    arch: str = "linear"  # "linear" | "mlp"
    hidden: int = 64
    head: str = "classifier"  # "classifier" | "regressor"
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ("linear", "mlp"):
            raise ModelError(f"unknown arch {self.arch!r}")
        if self.head not in ("classifier", "regressor"):
            raise ModelError(f"unknown head {self.head!r}")
        if self.head == "classifier" and not self.num_classes:
            raise ModelError("classifier head needs num_classes")


@dataclass
class ForwardPass:
    features: np.ndarray  # (n, d), f(x)
    logits: np.ndarray | None  # (n, C) classifier only
    log_probs: np.ndarray | None
    probs: np.ndarray | None
    cache: dict


def _uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class SegmentModel:
    """Linear or one-hidden-layer (tanh) trunk plus classifier/regressor head."""

    def __init__(self, config: SegmentModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        p: dict[str, np.ndarray] = {}
        if config.arch == "linear":
            p["trunk_w"] = _uniform_init(rng, config.d_in, (config.d_in, config.d))
            p["trunk_b"] = _uniform_init(rng, config.d_in, (config.d,))
        else:
            p["trunk_w1"] = _uniform_init(rng, config.d_in, (config.d_in, config.hidden))
            p["trunk_b1"] = _uniform_init(rng, config.d_in, (config.hidden,))
            p["trunk_w2"] = _uniform_init(rng, config.hidden, (config.hidden, config.d))
            p["trunk_b2"] = _uniform_init(rng, config.hidden, (config.d,))
        if config.head == "classifier":
            p["head_w"] = _uniform_init(rng, config.d, (config.d, config.num_classes))
            p["head_b"] = _uniform_init(rng, config.d, (config.num_classes,))
        self.params = p

    def forward(self, x: np.ndarray) -> ForwardPass:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.d_in:
            raise ModelError(f"expected (n, {self.config.d_in}) input, got {x.shape}")
        if not np.isfinite(x).all():
            raise ModelError("non-finite input features")
        cache: dict = {"x": x}
        if self.config.arch == "linear":
            f = x @ self.params["trunk_w"] + self.params["trunk_b"]
        else:
            a = x @ self.params["trunk_w1"] + self.params["trunk_b1"]
            h = np.tanh(a)
            cache["h"] = h
            f = h @ self.params["trunk_w2"] + self.params["trunk_b2"]
        cache["f"] = f
        if self.config.head == "classifier":
            logits = f @ self.params["head_w"] + self.params["head_b"]
            lp = log_softmax(logits)
            return ForwardPass(f, logits, lp, np.exp(lp), cache)
        return ForwardPass(f, None, None, None, cache)

    def features(self, x: np.ndarray) -> np.ndarray:
        """Step-embedding representation f(x); independent of the head softmax."""
        return self.forward(x).features

    def backward(
        self,
        cache: dict,
        d_logits: np.ndarray | None = None,
        d_features: np.ndarray | None = None,
    ) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given its gradient at the head output.

        ``d_logits`` feeds the classifier head, ``d_features`` feeds f(x)
        directly (regression objectives); both may be given and combine.
        """
        grads: dict[str, np.ndarray] = {}
        f = cache["f"]
        d_f = np.zeros_like(f)
        if d_logits is not None:
            grads["head_w"] = f.T @ d_logits
            grads["head_b"] = d_logits.sum(axis=0)
            d_f += d_logits @ self.params["head_w"].T
        if d_features is not None:
            d_f += d_features
        x = cache["x"]
        if self.config.arch == "linear":
            grads["trunk_w"] = x.T @ d_f
            grads["trunk_b"] = d_f.sum(axis=0)
        else:
            h = cache["h"]
            grads["trunk_w2"] = h.T @ d_f
            grads["trunk_b2"] = d_f.sum(axis=0)
            d_a = (d_f @ self.params["trunk_w2"].T) * (1.0 - h * h)
            grads["trunk_w1"] = x.T @ d_a
            grads["trunk_b1"] = d_a.sum(axis=0)
        return grads


def save_model(model: SegmentModel, path: str | Path) -> None:
    arch = json.dumps({"kind": "segment", "version": 1, "config": asdict(model.config)})
    np.savez(path, __arch__=arch, **model.params)


def load_model(path: str | Path) -> SegmentModel:
    with np.load(path, allow_pickle=False) as data:
        arch = json.loads(str(data["__arch__"]))
        if arch.get("kind") != "segment" or arch.get("version") != 1:
            raise ModelError(f"{path}: not a segment-model checkpoint")
        model = SegmentModel(SegmentModelConfig(**arch["config"]))
        for name in model.params:
            model.params[name] = data[name].astype(np.float64)
    return model

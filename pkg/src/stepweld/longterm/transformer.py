"""Single-layer transformer classifier over sequences of step embeddings.

Pre-norm encoder layer (self-attention + feed-forward, both with residuals),
learnable positional embeddings, mean-pool readout, linear class head. A
learned null token stands in for sequence slots that have no knowledge-base
vector (e.g. a matched step with no successor).

Forward and backward are written out in numpy so every parameter gradient
can be checked against central finite differences; batches are (B, L, d)
with one fixed L per call.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5
_SQRT_2PI = np.sqrt(2.0 * np.pi)


class TransformerError(ValueError):
    pass


@dataclass(frozen=True)
class TransformerConfig:
    d_model: int
    n_heads: int
    d_ff: int
    num_classes: int
    max_len: int = 16
    seed: int = 0
    zero_pos: bool = False  # freeze positional embeddings at zero (ablation)

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise TransformerError(
                f"n_heads {self.n_heads} must divide d_model {self.d_model}"
            )


def preset(
    name: str,
    num_classes: int,
    d_model: int = 768,
    max_len: int = 16,
    seed: int = 0,
    **overrides,
) -> TransformerConfig:
    """Named configurations; d_model follows the incoming embedding dimension.

    "paper" is the faithful 12-head, 4x feed-forward setup (768-d inputs);
    "small" (4 heads, 2x feed-forward) keeps tests fast.
    """
    base = {
        "paper": dict(n_heads=12, d_ff=4 * d_model),
        "small": dict(n_heads=4, d_ff=2 * d_model),
    }
    if name not in base:
        raise TransformerError(f"unknown preset {name!r}")
    kwargs = {
        **base[name],
        "d_model": d_model,
        "num_classes": num_classes,
        "max_len": max_len,
        "seed": seed,
    }
    kwargs.update(overrides)
    return TransformerConfig(**kwargs)


def gelu(u: np.ndarray) -> np.ndarray:
    return 0.5 * u * (1.0 + erf(u / np.sqrt(2.0)))


def gelu_grad(u: np.ndarray) -> np.ndarray:
    phi = np.exp(-0.5 * u * u) / _SQRT_2PI
    return 0.5 * (1.0 + erf(u / np.sqrt(2.0))) + u * phi


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, (xhat, inv)


def _layer_norm_backward(dy: np.ndarray, g: np.ndarray, cache):
    xhat, inv = cache
    d_g = (dy * xhat).sum(axis=(0, 1))
    d_b = dy.sum(axis=(0, 1))
    d_xhat = dy * g
    dx = inv * (
        d_xhat
        - d_xhat.mean(axis=-1, keepdims=True)
        - xhat * (d_xhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, d_g, d_b


class TransformerClassifier:
    """One encoder layer + mean-pool + linear head, explicit gradients."""

    def __init__(self, config: TransformerConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        d, ff, c = config.d_model, config.d_ff, config.num_classes

        def u(fan_in, shape):
            return rng.uniform(-1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in), size=shape)

        p: dict[str, np.ndarray] = {
            "pos": u(d, (config.max_len, d)),
            "null": u(d, (d,)),
            "ln1_g": np.ones(d),
            "ln1_b": np.zeros(d),
            "wq": u(d, (d, d)),
            "bq": np.zeros(d),
            "wk": u(d, (d, d)),
            "bk": np.zeros(d),
            "wv": u(d, (d, d)),
            "bv": np.zeros(d),
            "wo": u(d, (d, d)),
            "bo": np.zeros(d),
            "ln2_g": np.ones(d),
            "ln2_b": np.zeros(d),
            "ffn_w1": u(d, (d, ff)),
            "ffn_b1": np.zeros(ff),
            "ffn_w2": u(ff, (ff, d)),
            "ffn_b2": np.zeros(d),
            "head_w": u(d, (d, c)),
            "head_b": np.zeros(c),
        }
        self.frozen: set[str] = set()
        if config.zero_pos:
            p["pos"] = np.zeros_like(p["pos"])
            self.frozen.add("pos")
        self.params = p

    def forward(self, tokens: np.ndarray, null_mask: np.ndarray | None = None):
        """Class logits for a batch of equal-length sequences.

        ``null_mask`` (B, L) marks slots whose token row is replaced by the
        learned null token before positions are added.
        """
        p = self.params
        tokens = np.asarray(tokens, dtype=np.float64)
        if tokens.ndim == 2:
            tokens = tokens[None]
            if null_mask is not None:
                null_mask = np.asarray(null_mask)[None]
        bsz, seq_len, d = tokens.shape
        if d != self.config.d_model:
            raise TransformerError(f"token dim {d} != d_model {self.config.d_model}")
        if seq_len > self.config.max_len:
            raise TransformerError(
                f"sequence length {seq_len} exceeds positional capacity {self.config.max_len}"
            )
        if null_mask is not None:
            null_mask = np.asarray(null_mask, dtype=bool)
            tokens = np.where(null_mask[..., None], p["null"], tokens)
        h0 = tokens + p["pos"][:seq_len]

        a_in, ln1_cache = _layer_norm(h0, p["ln1_g"], p["ln1_b"])
        nh = self.config.n_heads
        dh = d // nh
        scale = 1.0 / np.sqrt(dh)

        def split(x):  # (B, L, d) -> (B, nh, L, dh)
            return x.reshape(bsz, seq_len, nh, dh).transpose(0, 2, 1, 3)

        q = split(a_in @ p["wq"] + p["bq"])
        k = split(a_in @ p["wk"] + p["bk"])
        v = split(a_in @ p["wv"] + p["bv"])
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        scores -= scores.max(axis=-1, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=-1, keepdims=True)
        ctx = attn @ v  # (B, nh, L, dh)
        merged = ctx.transpose(0, 2, 1, 3).reshape(bsz, seq_len, d)
        mha = merged @ p["wo"] + p["bo"]
        h1 = h0 + mha

        f_in, ln2_cache = _layer_norm(h1, p["ln2_g"], p["ln2_b"])
        u1 = f_in @ p["ffn_w1"] + p["ffn_b1"]
        g1 = gelu(u1)
        ffn = g1 @ p["ffn_w2"] + p["ffn_b2"]
        h2 = h1 + ffn

        pooled = h2.mean(axis=1)
        logits = pooled @ p["head_w"] + p["head_b"]
        cache = {
            "null_mask": null_mask,
            "seq_len": seq_len,
            "a_in": a_in,
            "ln1": ln1_cache,
            "q": q,
            "k": k,
            "v": v,
            "attn": attn,
            "merged": merged,
            "ln2": ln2_cache,
            "f_in": f_in,
            "u1": u1,
            "g1": g1,
            "pooled": pooled,
        }
        return logits, cache

    def backward(self, cache: dict, d_logits: np.ndarray) -> dict[str, np.ndarray]:
        p = self.params
        bsz = d_logits.shape[0]
        seq_len = cache["seq_len"]
        d = self.config.d_model
        nh = self.config.n_heads
        dh = d // nh
        scale = 1.0 / np.sqrt(dh)
        grads: dict[str, np.ndarray] = {}

        grads["head_w"] = cache["pooled"].T @ d_logits
        grads["head_b"] = d_logits.sum(axis=0)
        d_pooled = d_logits @ p["head_w"].T
        d_h2 = np.repeat(d_pooled[:, None, :], seq_len, axis=1) / seq_len

        # FFN block: h2 = h1 + W2 gelu(W1 f_in + b1) + b2
        d_ffn = d_h2
        g1_2d = cache["g1"].reshape(-1, p["ffn_w2"].shape[0])
        d_ffn_2d = d_ffn.reshape(-1, d)
        grads["ffn_w2"] = g1_2d.T @ d_ffn_2d
        grads["ffn_b2"] = d_ffn_2d.sum(axis=0)
        d_g1 = d_ffn @ p["ffn_w2"].T
        d_u1 = d_g1 * gelu_grad(cache["u1"])
        f_in_2d = cache["f_in"].reshape(-1, d)
        d_u1_2d = d_u1.reshape(-1, p["ffn_w1"].shape[1])
        grads["ffn_w1"] = f_in_2d.T @ d_u1_2d
        grads["ffn_b1"] = d_u1_2d.sum(axis=0)
        d_f_in = d_u1 @ p["ffn_w1"].T
        d_h1, grads["ln2_g"], grads["ln2_b"] = _layer_norm_backward(
            d_f_in, p["ln2_g"], cache["ln2"]
        )
        d_h1 += d_h2

        # attention block: h1 = h0 + Wo concat_heads(attn @ v) + bo
        d_mha = d_h1
        merged_2d = cache["merged"].reshape(-1, d)
        d_mha_2d = d_mha.reshape(-1, d)
        grads["wo"] = merged_2d.T @ d_mha_2d
        grads["bo"] = d_mha_2d.sum(axis=0)
        d_merged = d_mha @ p["wo"].T
        d_ctx = d_merged.reshape(bsz, seq_len, nh, dh).transpose(0, 2, 1, 3)
        attn, q, k, v = cache["attn"], cache["q"], cache["k"], cache["v"]
        d_attn = d_ctx @ v.transpose(0, 1, 3, 2)
        d_v = attn.transpose(0, 1, 3, 2) @ d_ctx
        d_scores = (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True)) * attn * scale
        d_q = d_scores @ k
        d_k = d_scores.transpose(0, 1, 3, 2) @ q

        def merge(x):  # (B, nh, L, dh) -> (B*L, d)
            return x.transpose(0, 2, 1, 3).reshape(-1, d)

        a_in_2d = cache["a_in"].reshape(-1, d)
        d_a_in = np.zeros_like(cache["a_in"])
        for name, dx in (("wq", d_q), ("wk", d_k), ("wv", d_v)):
            dx2 = merge(dx)
            grads[name] = a_in_2d.T @ dx2
            grads["b" + name[1]] = dx2.sum(axis=0)
            d_a_in += (dx2 @ p[name].T).reshape(bsz, seq_len, d)
        d_h0, grads["ln1_g"], grads["ln1_b"] = _layer_norm_backward(
            d_a_in, p["ln1_g"], cache["ln1"]
        )
        d_h0 += d_h1

        grads["pos"] = np.zeros_like(p["pos"])
        grads["pos"][:seq_len] = d_h0.sum(axis=0)
        null_mask = cache["null_mask"]
        grads["null"] = np.zeros_like(p["null"])
        if null_mask is not None and null_mask.any():
            grads["null"] = d_h0[null_mask].sum(axis=0)
        for name in self.frozen:
            grads.pop(name, None)
        return grads

    def attention_weights(self, tokens: np.ndarray, null_mask=None) -> np.ndarray:
        """(B, heads, L, L) attention rows; each row sums to 1."""
        _, cache = self.forward(tokens, null_mask)
        return cache["attn"]


def save_transformer(model: TransformerClassifier, path: str | Path) -> None:
    arch = json.dumps({"kind": "longterm", "version": 1, "config": asdict(model.config)})
    np.savez(path, __arch__=arch, **model.params)


def load_transformer(path: str | Path) -> TransformerClassifier:
    with np.load(path, allow_pickle=False) as data:
        arch = json.loads(str(data["__arch__"]))
        if arch.get("kind") != "longterm" or arch.get("version") != 1:
            raise TransformerError(f"{path}: not a long-term model checkpoint")
        cfg = arch["config"]
        cfg["zero_pos"] = bool(cfg.get("zero_pos", False))
        model = TransformerClassifier(TransformerConfig(**cfg))
        for name in model.params:
            model.params[name] = data[name].astype(np.float64)
    return model

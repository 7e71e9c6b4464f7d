"""Differentiable building blocks: linear maps, layer norm, GELU, softmax,
multi-head self/cross attention, feed-forward, and the post-norm encoder
layer (normalization applied to the sublayer output *before* the residual
add).

Functions accept Tensors or raw arrays; raw inputs are wrapped as
constants.  Parameters are passed as plain dicts of Tensors so callers can
organise them however they like; builders at the bottom create seeded
parameter groups inside a ParamStore.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .tensor import ParamStore, Tensor, wrap

LAYER_NORM_EPS = 1e-5
# tanh-form GELU; coefficients fixed so results are reproducible everywhere
GELU_C0 = 0.7978845608
GELU_C1 = 0.044715


@dataclass(frozen=True)
class AttentionConfig:
    """Width/head layout shared by all attention and feed-forward blocks."""

    dim: int
    heads: int
    ffn_hidden: int

    def __post_init__(self):
        if self.dim < 1 or self.heads < 1:
            raise ConfigurationError(f"dim and heads must be >= 1, got {self.dim}, {self.heads}")
        if self.dim % self.heads != 0:
            raise ConfigurationError(
                f"dim {self.dim} is not divisible by heads {self.heads}"
            )
        if self.ffn_hidden < 1:
            raise ConfigurationError(f"ffn_hidden must be >= 1, got {self.ffn_hidden}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


def linear(x, weight, bias=None) -> Tensor:
    """x @ weight + bias with explicit shape checking."""
    x, weight = wrap(x), wrap(weight)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"linear: input shape {x.shape} incompatible with weight shape {weight.shape}"
        )
    out = x @ weight
    if bias is not None:
        bias = wrap(bias)
        if bias.shape != (weight.shape[1],):
            raise DimensionError(
                f"linear: bias shape {bias.shape} != ({weight.shape[1]},)"
            )
        out = out + bias
    return out


def layer_norm(x, gain, shift, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Per-row (last axis) zero-mean unit-variance normalization, then affine."""
    x, gain, shift = wrap(x), wrap(gain), wrap(shift)
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise DimensionError(f"layer_norm: feature dimension is 0 (shape {x.shape})")
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    normed = centered / ((var + eps) ** 0.5)
    return normed * gain + shift


def gelu(x) -> Tensor:
    x = wrap(x)
    inner = (x + (x ** 3) * GELU_C1) * GELU_C0
    return x * (inner.tanh() + 1.0) * 0.5


def softmax_rows(x) -> Tensor:
    """Row-stochastic softmax over the last axis, max-shifted for stability."""
    x = wrap(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError(f"softmax_rows: need at least one column, got shape {x.shape}")
    shift = Tensor(np.max(x.data, axis=-1, keepdims=True))  # constant: no gradient path
    e = (x - shift).exp()
    return e / e.sum(axis=-1, keepdims=True)


def feed_forward(x, params: dict, cfg: AttentionConfig) -> Tensor:
    """linear(dim -> ffn_hidden) -> GELU -> linear(ffn_hidden -> dim)."""
    x = wrap(x)
    if x.shape[-1] != cfg.dim:
        raise DimensionError(
            f"feed_forward: input width {x.shape} != configured dim {cfg.dim}"
        )
    h = gelu(linear(x, params["w1"], params["b1"]))
    return linear(h, params["w2"], params["b2"])


def _split_heads(t: Tensor, heads: int) -> Tensor:
    *lead, n, d = t.shape
    t = t.reshape((*lead, n, heads, d // heads))
    return t.swapaxes(-3, -2)  # (..., heads, n, head_dim)


def _merge_heads(t: Tensor) -> Tensor:
    t = t.swapaxes(-3, -2)
    *lead, n, h, dk = t.shape
    return t.reshape((*lead, n, h * dk))


def cross_attention(queries, keys, params: dict, cfg: AttentionConfig) -> Tensor:
    """Multi-head cross-attention: per head softmax(Q K^T / sqrt(d_k)) V,
    heads concatenated and projected.  Projections carry no bias.

    `queries`: (..., n_q, dim); `keys`: (..., n_k, dim) serving as both key
    and value source.  Output: (..., n_q, dim).
    """
    queries, keys = wrap(queries), wrap(keys)
    if queries.shape[-1] != cfg.dim or keys.shape[-1] != cfg.dim:
        raise DimensionError(
            f"cross_attention: widths {queries.shape} / {keys.shape} != dim {cfg.dim}"
        )
    if keys.shape[-2] == 0:
        raise DimensionError("cross_attention: empty key sequence (n_k == 0)")
    q = _split_heads(queries @ params["wq"], cfg.heads)
    k = _split_heads(keys @ params["wk"], cfg.heads)
    v = _split_heads(keys @ params["wv"], cfg.heads)
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(cfg.head_dim))
    attn = softmax_rows(scores)
    out = _merge_heads(attn @ v)
    return out @ params["wo"]


def self_attention(x, params: dict, cfg: AttentionConfig) -> Tensor:
    """Multi-head self-attention: cross-attention of a sequence with itself."""
    return cross_attention(x, x, params, cfg)


def encoder_layer(x, params: dict, cfg: AttentionConfig) -> Tensor:
    """Post-norm encoder layer: x' = LN(attn(x)) + x; out = LN(ffn(x')) + x'."""
    x = wrap(x)
    attended = self_attention(x, params["attn"], cfg)
    x = layer_norm(attended, params["ln_attn"]["gain"], params["ln_attn"]["shift"]) + x
    ff = feed_forward(x, params["ffn"], cfg)
    return layer_norm(ff, params["ln_ffn"]["gain"], params["ln_ffn"]["shift"]) + x


def encoder_stack(x, layers: list[dict], cfg: AttentionConfig) -> Tensor:
    for layer in layers:
        x = encoder_layer(x, layer, cfg)
    return x


# -- parameter builders ------------------------------------------------------
#
# Initialisation scheme: linear weights uniform(+-1/sqrt(fan_in)), biases
# zero, layer-norm gain 1 / shift 0, embedding tables normal(0, 0.02).


def uniform_weight(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32)


def embedding_table(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.normal(0.0, 0.02, size=shape).astype(np.float32)


def linear_params(store: ParamStore, name: str, rng, fan_in: int, fan_out: int) -> dict:
    return {
        "w": store.create(f"{name}.w", uniform_weight(rng, fan_in, fan_out)),
        "b": store.create(f"{name}.b", np.zeros(fan_out, dtype=np.float32)),
    }


def layer_norm_params(store: ParamStore, name: str, dim: int) -> dict:
    return {
        "gain": store.create(f"{name}.gain", np.ones(dim, dtype=np.float32)),
        "shift": store.create(f"{name}.shift", np.zeros(dim, dtype=np.float32)),
    }


def attention_params(store: ParamStore, name: str, rng, cfg: AttentionConfig) -> dict:
    d = cfg.dim
    return {
        key: store.create(f"{name}.{key}", uniform_weight(rng, d, d))
        for key in ("wq", "wk", "wv", "wo")
    }


def feed_forward_params(store: ParamStore, name: str, rng, cfg: AttentionConfig) -> dict:
    return {
        "w1": store.create(f"{name}.w1", uniform_weight(rng, cfg.dim, cfg.ffn_hidden)),
        "b1": store.create(f"{name}.b1", np.zeros(cfg.ffn_hidden, dtype=np.float32)),
        "w2": store.create(f"{name}.w2", uniform_weight(rng, cfg.ffn_hidden, cfg.dim)),
        "b2": store.create(f"{name}.b2", np.zeros(cfg.dim, dtype=np.float32)),
    }


def encoder_layer_params(store: ParamStore, name: str, rng, cfg: AttentionConfig) -> dict:
    return {
        "attn": attention_params(store, f"{name}.attn", rng, cfg),
        "ln_attn": layer_norm_params(store, f"{name}.ln_attn", cfg.dim),
        "ffn": feed_forward_params(store, f"{name}.ffn", rng, cfg),
        "ln_ffn": layer_norm_params(store, f"{name}.ln_ffn", cfg.dim),
    }

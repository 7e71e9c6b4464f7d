"""Fusing the two relation streams into per-actor class logits.

Short-term head: mean-pool the context tokens, concatenate
[actor-token, pooled-context, actor-relation] into a width-3d consensus
feature, and classify with a two-layer GELU MLP.

Long-term head: the clip's consensus features attend (one multi-head
cross-attention, no feed-forward) over a window of stored features from
neighbouring clips, each shifted by a learnable distance embedding for its
signed clip-time offset; after post-norm and the residual add, the same
shape of MLP produces logits.  Multi-label outputs: sigmoid per class, no
mutual exclusion.
"""

from __future__ import annotations

import numpy as np

from .encoder import RelationPair
from .errors import DimensionError
from .nn import AttentionConfig, cross_attention, gelu, layer_norm, linear
from .tensor import Tensor, concat, wrap


def consensus_width(dim: int) -> int:
    return 3 * dim


def pool_context(x: Tensor) -> Tensor:
    """Mean of the context rows 1..L of a (..., L+1, d) stream."""
    if x.shape[-2] < 2:
        raise DimensionError(f"context stream has no context rows: {x.shape}")
    return x[..., 1:, :].mean(axis=-2)


def consensus_features(x: Tensor, y: Tensor) -> Tensor:
    """(N, 3d) features: [actor token | pooled context | actor relation]."""
    actor_tok = x[:, 0, :]
    ctx = pool_context(x)
    return concat([actor_tok, ctx, y], axis=-1)


def mlp_head(features, params: dict) -> Tensor:
    return linear(gelu(linear(features, params["w1"], params["b1"])),
                  params["w2"], params["b2"])


def short_term_logits(x: Tensor, y: Tensor, params: dict) -> tuple[Tensor, Tensor]:
    """Batched short-term consensus over all actors of a clip."""
    g = consensus_features(x, y)
    return g, mlp_head(g, params)


def short_term_consensus(pair: RelationPair, params: dict) -> tuple[Tensor, Tensor]:
    """One actor's consensus feature and class logits."""
    d = pair.actor_relation.shape[-1]
    x = pair.context_relation.reshape((1, -1, d))
    y = pair.actor_relation.reshape((1, d))
    g, logits = short_term_logits(x, y, params)
    return g.reshape((3 * d,)), logits.reshape((-1,))


def _stack_support(support) -> tuple[np.ndarray, Tensor]:
    offsets = np.array([o for o, _ in support], dtype=np.int64)
    feats = [f for _, f in support]
    if all(not isinstance(f, Tensor) for f in feats):
        width = np.asarray(feats[0]).shape[-1]
        keys = Tensor(np.stack([np.asarray(f) for f in feats]).reshape(len(feats), width))
    else:
        keys = concat([wrap(f).reshape((1, -1)) for f in feats], axis=0)
    return offsets, keys


def long_term_logits(queries, support, params: dict, heads: int) -> Tensor:
    """Long-term consensus for one clip.

    `queries`: (N, 3d) consensus features of the clip's actors.
    `support`: list of (signed offset, feature) pairs from the bank window.
    When the window is empty the clip's own features stand in as support at
    offset zero, which keeps the operator total.
    """
    queries = wrap(queries)
    width = queries.shape[-1]
    table = params["dist"]
    omega = (table.shape[0] - 1) // 2
    if not support:
        support = [(0, queries[n]) for n in range(queries.shape[0])]
    offsets, keys = _stack_support(support)
    if keys.shape[-1] != width:
        raise DimensionError(
            f"support feature width {keys.shape} != query width {width}"
        )
    if np.any(np.abs(offsets) > omega):
        raise DimensionError(
            f"support offsets {offsets} exceed window radius {omega}"
        )
    keys = keys + table[offsets + omega]
    att = AttentionConfig(width, heads, 1)  # ffn_hidden unused: no feed-forward here
    attended = cross_attention(queries, keys, params["attn"], att)
    z = layer_norm(attended, params["ln"]["gain"], params["ln"]["shift"]) + queries
    return mlp_head(z, params["mlp"])


def classify(logits) -> Tensor:
    """Per-class probabilities: element-wise sigmoid, no mutual exclusion."""
    return wrap(logits).sigmoid()

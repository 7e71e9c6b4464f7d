"""The relation encoder: two separate streams and a cross-stream exchange.

Per actor, the *context stream* X is the (L+1)-token sequence (actor token
first) refined by self-attention encoder layers shared across actors.  The
*actor stream* Y is the set of actor tokens, given spatial grid embeddings
from their box centers and refined jointly by self-attention.  The
*support exchange* then runs bidirectional multi-head cross-attention
between each actor's X and its single-token Y, with separate parameters
per direction; both directions read the previous round's streams.  The
whole unit is stackable with per-stack parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, EmptyClipError
from .nn import (
    AttentionConfig,
    attention_params,
    cross_attention,
    embedding_table,
    encoder_layer,
    encoder_layer_params,
    encoder_stack,
    feed_forward,
    feed_forward_params,
    layer_norm,
    layer_norm_params,
    linear_params,
)
from .tensor import ParamStore, Tensor, concat, wrap
from .tokens import GridSpec, TokenSequence, position_flat_index


@dataclass(frozen=True)
class EncoderConfig:
    """Layer counts and widths for one relation-encoder unit."""

    dim: int = 512
    ffn_hidden: int = 1024
    heads: int = 8
    actor_context_layers: int = 1
    actor_actor_layers: int = 1
    support_rounds: int = 1
    stacks: int = 1

    def __post_init__(self):
        self.attention()  # validates dim/heads/ffn_hidden
        for field in ("actor_context_layers", "actor_actor_layers", "support_rounds"):
            if getattr(self, field) < 0:
                raise ConfigurationError(f"{field} must be >= 0")
        if self.stacks < 1:
            raise ConfigurationError("stacks must be >= 1")

    def attention(self) -> AttentionConfig:
        return AttentionConfig(self.dim, self.heads, self.ffn_hidden)


@dataclass
class RelationPair:
    """One actor's two relation representations after encoding."""

    context_relation: Tensor   # (L+1, d); row 0 is the actor token
    actor_relation: Tensor     # (d,)
    actor_index: int = 0


def encode_actor_context(seqs: list[TokenSequence], layers: list[dict],
                         cfg: AttentionConfig) -> list[Tensor]:
    """Each actor's sequence through the encoder layers, weights shared."""
    if len(seqs) == 0:
        raise EmptyClipError("actor-context encoding needs at least one actor")
    x = concat([s.full().reshape((1, -1, cfg.dim)) for s in seqs], axis=0)
    x = encoder_stack(x, layers, cfg)
    return [x[n] for n in range(len(seqs))]


def encode_actor_actor(actor_tokens, boxes, params: dict, cfg: AttentionConfig,
                       grid: GridSpec) -> Tensor:
    """Add each actor's grid-cell embedding, then self-attend over all actors."""
    actor_tokens = wrap(actor_tokens)
    n = actor_tokens.shape[0]
    if n == 0:
        raise EmptyClipError("actor-actor encoding needs at least one actor")
    if len(boxes) != n:
        raise ConfigurationError(f"{n} actor tokens but {len(boxes)} boxes")
    idx = np.array([position_flat_index(b, grid) for b in boxes])
    x = actor_tokens + params["pos"][idx]
    return encoder_stack(x, params["layers"], cfg)


def _exchange_streams(x: Tensor, y: Tensor, rounds: list[dict],
                      cfg: AttentionConfig) -> tuple[Tensor, Tensor]:
    # x: (N, L+1, d); y: (N, 1, d).  Both cross-attentions of a round read
    # the previous round's streams.
    for rp in rounds:
        px, py = rp["x"], rp["y"]
        x_att = layer_norm(cross_attention(x, y, px["attn"], cfg),
                           px["ln_attn"]["gain"], px["ln_attn"]["shift"]) + x
        y_att = layer_norm(cross_attention(y, x, py["attn"], cfg),
                           py["ln_attn"]["gain"], py["ln_attn"]["shift"]) + y
        x = layer_norm(feed_forward(x_att, px["ffn"], cfg),
                       px["ln_ffn"]["gain"], px["ln_ffn"]["shift"]) + x_att
        y = layer_norm(feed_forward(y_att, py["ffn"], cfg),
                       py["ln_ffn"]["gain"], py["ln_ffn"]["shift"]) + y_att
    return x, y


def relation_exchange(pairs: list[RelationPair], rounds: list[dict],
                      cfg: AttentionConfig) -> list[RelationPair]:
    """Bidirectional cross-attention between each actor's two streams."""
    if len(pairs) == 0:
        raise EmptyClipError("relation exchange needs at least one actor")
    d = cfg.dim
    x = concat([p.context_relation.reshape((1, -1, d)) for p in pairs], axis=0)
    y = concat([p.actor_relation.reshape((1, 1, d)) for p in pairs], axis=0)
    x, y = _exchange_streams(x, y, rounds, cfg)
    return [
        RelationPair(x[n], y[n].reshape((d,)), actor_index=p.actor_index)
        for n, p in enumerate(pairs)
    ]


def encode_relations(context_tokens, actor_tokens, boxes, params: dict,
                     cfg: EncoderConfig, grid: GridSpec) -> tuple[Tensor, Tensor]:
    """Full encoder over a tokenized clip.

    `context_tokens`: (L, d) raw patch tokens; `actor_tokens`: (N, d) raw
    actor tokens.  Returns the batched streams X (N, L+1, d) and Y (N, d).
    The context stream starts from the embedded sequences (actor-type +
    positional embeddings added); the actor stream starts from the raw
    actor tokens, with each stack adding its own grid embeddings.
    """
    actor_tokens = wrap(actor_tokens)
    context_tokens = wrap(context_tokens)
    n = actor_tokens.shape[0]
    if n == 0:
        raise EmptyClipError("clip has no actors")
    att = cfg.attention()
    d, l = cfg.dim, grid.num_patches

    embed = params["embed"]
    actor0 = (actor_tokens + embed["actor_type"]).reshape((n, 1, d))
    ctx = (context_tokens + embed["context_pos"]).reshape((1, l, d))
    x = concat([actor0, ctx.broadcast_to((n, l, d))], axis=1)
    y = actor_tokens

    for stack in params["stacks"]:
        x = encoder_stack(x, stack["actor_context"], att)
        y = encode_actor_actor(y, boxes, stack["actor_actor"], att, grid)
        x, y_seq = _exchange_streams(x, y.reshape((n, 1, d)), stack["support"], att)
        y = y_seq.reshape((n, d))
    return x, y


def as_pairs(x: Tensor, y: Tensor) -> list[RelationPair]:
    return [RelationPair(x[n], y[n], actor_index=n) for n in range(x.shape[0])]


# -- parameter construction ---------------------------------------------------


def support_round_params(store: ParamStore, name: str, rng, att: AttentionConfig) -> dict:
    def one_direction(tag):
        return {
            "attn": attention_params(store, f"{name}.{tag}.attn", rng, att),
            "ln_attn": layer_norm_params(store, f"{name}.{tag}.ln_attn", att.dim),
            "ffn": feed_forward_params(store, f"{name}.{tag}.ffn", rng, att),
            "ln_ffn": layer_norm_params(store, f"{name}.{tag}.ln_ffn", att.dim),
        }

    return {"x": one_direction("x"), "y": one_direction("y")}


def build_relation_params(store: ParamStore, rng, cfg: EncoderConfig,
                          grid: GridSpec, in_channels: int,
                          prefix: str = "relation") -> dict:
    """Embedding projections/tables plus per-stack encoder parameters."""
    att = cfg.attention()
    d, l, g = cfg.dim, grid.num_patches, grid.grid_side
    embed = {
        "patch": linear_params(store, f"{prefix}.embed.patch", rng,
                               in_channels * grid.patch ** 2, d),
        "actor": linear_params(store, f"{prefix}.embed.actor", rng,
                               in_channels * 49, d),
        "actor_type": store.create(f"{prefix}.embed.actor_type",
                                   embedding_table(rng, (d,))),
        "context_pos": store.create(f"{prefix}.embed.context_pos",
                                    embedding_table(rng, (l, d))),
    }
    stacks = []
    for s in range(cfg.stacks):
        base = f"{prefix}.stacks.{s}"
        stacks.append({
            "actor_context": [
                encoder_layer_params(store, f"{base}.context.{i}", rng, att)
                for i in range(cfg.actor_context_layers)
            ],
            "actor_actor": {
                "pos": store.create(f"{base}.actor_pos",
                                    embedding_table(rng, (g * g, d))),
                "layers": [
                    encoder_layer_params(store, f"{base}.actor.{i}", rng, att)
                    for i in range(cfg.actor_actor_layers)
                ],
            },
            "support": [
                support_round_params(store, f"{base}.support.{r}", rng, att)
                for r in range(cfg.support_rounds)
            ],
        })
    return {"embed": embed, "stacks": stacks}

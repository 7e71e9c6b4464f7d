"""Turning feature maps and RoI features into token sequences.

The context map is adaptively pooled to an S x S grid, cut into L = (S/p)^2
non-overlapping p x p patches in row-major order, and linearly projected to
token width d.  Each actor's RoI feature is flattened and projected by a
second shared linear map.  Learnable embeddings mark the actor token and
the context positions; a separate grid table assigns each actor a spatial
cell from its box center; a third table embeds signed clip-time offsets for
the long-term consensus head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boxes import ActorBox
from .errors import ConfigurationError, DimensionError, ValidationError
from .nn import linear
from .tensor import Tensor, concat, wrap


@dataclass(frozen=True)
class GridSpec:
    """Pooled context geometry: side S, patch p, grid side G=S/p, L=G^2 patches."""

    side: int = 16
    patch: int = 2

    def __post_init__(self):
        if self.side < 1 or self.patch < 1:
            raise ConfigurationError(f"grid sides must be >= 1: {self}")
        if self.side % self.patch != 0:
            raise ConfigurationError(
                f"patch size {self.patch} does not divide pooled side {self.side}"
            )

    @property
    def grid_side(self) -> int:
        return self.side // self.patch

    @property
    def num_patches(self) -> int:
        return self.grid_side ** 2


@dataclass
class TokenSequence:
    """One actor's embedded sequence: actor token followed by L context tokens."""

    actor_token: Tensor       # (d,)
    context_tokens: Tensor    # (L, d)
    actor_index: int = 0

    def full(self) -> Tensor:
        """The (L+1, d) sequence with the actor token as row 0."""
        d = self.actor_token.shape[-1]
        return concat([self.actor_token.reshape((1, d)), self.context_tokens], axis=0)


def _pooling_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    # adaptive averaging: output cell i covers [floor(i*n/S), ceil((i+1)*n/S))
    m = np.zeros((n_out, n_in), dtype=dtype)
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -(-(i + 1) * n_in // n_out)  # ceil division
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def pool_to_grid(fmap, spec: GridSpec) -> Tensor:
    """Adaptive average pooling of a (C, w, h) map to (C, S, S)."""
    fmap = wrap(fmap)
    if fmap.ndim != 3:
        raise DimensionError(f"pool_to_grid: expected (C, w, h), got {fmap.shape}")
    _, w, h = fmap.shape
    if w < 1 or h < 1:
        raise DimensionError(f"pool_to_grid: empty feature map, shape {fmap.shape}")
    s = spec.side
    rows = Tensor(_pooling_matrix(w, s, fmap.dtype.type))
    cols = Tensor(_pooling_matrix(h, s, fmap.dtype.type))
    return (rows @ fmap) @ cols.swapaxes(0, 1)


def embed_patches(pooled, params: dict, spec: GridSpec) -> Tensor:
    """Cut a (C, S, S) map into L patches (row-major grid order), flatten each
    channel-major, and project all of them with one shared linear map."""
    pooled = wrap(pooled)
    c, s0, s1 = pooled.shape
    if s0 != spec.side or s1 != spec.side:
        raise DimensionError(
            f"embed_patches: map shape {pooled.shape} does not match pooled side {spec.side}"
        )
    g, p = spec.grid_side, spec.patch
    patches = pooled.reshape((c, g, p, g, p))
    patches = patches.transpose((1, 3, 0, 2, 4))      # (g, g, C, p, p)
    flat = patches.reshape((spec.num_patches, c * p * p))
    return linear(flat, params["w"], params["b"])


def embed_actor(roi, params: dict) -> Tensor:
    """Flatten one (C, 7, 7) RoI feature and project it to token width."""
    roi = wrap(roi)
    if roi.ndim != 3 or roi.shape[1] != 7 or roi.shape[2] != 7:
        raise DimensionError(f"embed_actor: expected (C, 7, 7), got {roi.shape}")
    flat = roi.reshape((1, roi.shape[0] * 49))
    return linear(flat, params["w"], params["b"]).reshape((params["w"].shape[1],))


def embed_actors(rois, params: dict) -> Tensor:
    """Batched embed_actor: (N, C, 7, 7) -> (N, d)."""
    rois = wrap(rois)
    if rois.ndim != 4 or rois.shape[2] != 7 or rois.shape[3] != 7:
        raise DimensionError(f"embed_actors: expected (N, C, 7, 7), got {rois.shape}")
    n = rois.shape[0]
    flat = rois.reshape((n, rois.shape[1] * 49))
    return linear(flat, params["w"], params["b"])


def assemble_sequence(actor_token, context_tokens, params: dict,
                      actor_index: int = 0) -> TokenSequence:
    """Add the learnable actor-type embedding and the per-position context
    embeddings.  Context embeddings are shared across all actors."""
    actor_token, context_tokens = wrap(actor_token), wrap(context_tokens)
    if actor_token.shape[-1] != context_tokens.shape[-1]:
        raise DimensionError(
            f"assemble_sequence: widths disagree, actor {actor_token.shape} "
            f"vs context {context_tokens.shape}"
        )
    if context_tokens.shape != params["context_pos"].shape:
        raise DimensionError(
            f"assemble_sequence: context shape {context_tokens.shape} != "
            f"positional table {params['context_pos'].shape}"
        )
    return TokenSequence(
        actor_token=actor_token + params["actor_type"],
        context_tokens=context_tokens + params["context_pos"],
        actor_index=actor_index,
    )


def assemble_clip(actor_tokens, context_tokens, params: dict) -> list[TokenSequence]:
    """One TokenSequence per actor; context parts identical before encoding."""
    actor_tokens = wrap(actor_tokens)
    return [
        assemble_sequence(actor_tokens[n], context_tokens, params, actor_index=n)
        for n in range(actor_tokens.shape[0])
    ]


def actor_position_index(box: ActorBox, spec: GridSpec) -> tuple[int, int]:
    """Grid cell of a box center: ceil(center * G) per axis, clamped to [1, G].

    Indices are 1-based; i follows x and j follows y.
    """
    g = spec.grid_side
    cx, cy = box.center()
    i = min(max(math.ceil(cx * g), 1), g)
    j = min(max(math.ceil(cy * g), 1), g)
    return i, j


def position_flat_index(box: ActorBox, spec: GridSpec) -> int:
    """Row of the (G*G, d) actor-position table for a box: (i-1)*G + (j-1)."""
    i, j = actor_position_index(box, spec)
    return (i - 1) * spec.grid_side + (j - 1)


def build_distance_table(rng: np.random.Generator, omega: int, width: int) -> np.ndarray:
    """2*omega+1 learnable vectors, one per signed clip-time offset in [-omega, omega]."""
    if omega < 0:
        raise ConfigurationError(f"omega must be >= 0, got {omega}")
    return rng.normal(0.0, 0.02, size=(2 * omega + 1, width)).astype(np.float32)


def distance_embedding(table, offset: int, omega: int) -> Tensor:
    """The learnable vector for one signed clip-time offset."""
    table = wrap(table)
    if table.shape[0] != 2 * omega + 1:
        raise DimensionError(
            f"distance table has {table.shape[0]} rows, expected {2 * omega + 1}"
        )
    if offset < -omega or offset > omega:
        raise ValidationError(
            f"clip-time offset {offset} outside window [-{omega}, {omega}]"
        )
    return table[offset + omega]

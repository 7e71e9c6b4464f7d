"""Stand-in feature extractor: two 3x3 convolutions with a GELU between,
applied per frame, then a mean over time.  The detection head is
backbone-agnostic; anything producing a (C, H, W) map plus actor boxes can
replace this.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError
from .nn import gelu
from .tensor import ParamStore, Tensor, make_op, wrap


def conv2d(x, weight, bias) -> Tensor:
    """Same-padding stride-1 2-D convolution over (T, C_in, H, W) frames.

    weight: (C_out, C_in, kh, kw) with odd kh/kw; bias: (C_out,).
    """
    x, weight, bias = wrap(x), wrap(weight), wrap(bias)
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(
            f"conv2d: expected (T,C,H,W) and (O,C,kh,kw), got {x.shape}, {weight.shape}"
        )
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"conv2d: input channels {x.shape} != kernel channels {weight.shape}"
        )
    t, _, h, w = x.shape
    c_out, c_in, kh, kw = weight.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (T,C,H,W,kh,kw)
    out = np.einsum("tchwij,ocij->tohw", windows, weight.data, optimize=True)
    out = out + bias.data[None, :, None, None]

    def bwd(g):
        gw = np.einsum("tchwij,tohw->ocij", windows, g, optimize=True)
        gb = g.sum(axis=(0, 2, 3))
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + h, j:j + w] += np.einsum(
                    "tohw,oc->tchw", g, weight.data[:, :, i, j]
                )
        gx = gxp[:, :, ph:ph + h, pw:pw + w]
        return gx, gw, gb

    return make_op(out, (x, weight, bias), bwd)


def backbone_params(store: ParamStore, rng, in_channels: int, mid_channels: int,
                    out_channels: int, prefix: str = "backbone") -> dict:
    def conv_init(c_in, c_out):
        fan_in = c_in * 9
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(c_out, c_in, 3, 3)).astype(np.float32)

    return {
        "conv1": {
            "w": store.create(f"{prefix}.conv1.w", conv_init(in_channels, mid_channels)),
            "b": store.create(f"{prefix}.conv1.b", np.zeros(mid_channels, np.float32)),
        },
        "conv2": {
            "w": store.create(f"{prefix}.conv2.w", conv_init(mid_channels, out_channels)),
            "b": store.create(f"{prefix}.conv2.b", np.zeros(out_channels, np.float32)),
        },
    }


def toy_backbone(frames, params: dict) -> Tensor:
    """(T, C_in, H, W) frames -> (C, H, W) temporally pooled feature map."""
    frames = wrap(frames)
    if frames.ndim != 4:
        raise DimensionError(f"toy_backbone: expected (T, C, H, W), got {frames.shape}")
    if frames.shape[0] < 1:
        raise DimensionError("toy_backbone: need at least one frame")
    h = gelu(conv2d(frames, params["conv1"]["w"], params["conv1"]["b"]))
    h = conv2d(h, params["conv2"]["w"], params["conv2"]["b"])
    return h.mean(axis=0)

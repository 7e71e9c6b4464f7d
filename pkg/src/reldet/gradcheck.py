"""Central finite-difference verification of analytic gradients.

Used by both the test suite and the `selftest` CLI command.  The convention
throughout the package: gradient checks run in float64 (the ops are
dtype-generic) so that an eps of 1e-3 leaves ~1e-10 of difference noise,
and the error metric is relative with a scale floor of 1.0 --
``|a - n| / max(1, |a|, |n|)`` -- i.e. relative for O(1) entries and
absolute for sub-unit ones.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

DEFAULT_EPS = 1e-3
DEFAULT_TOL = 1e-4


def numeric_gradient(fn, arrays: list[np.ndarray], eps: float = DEFAULT_EPS):
    """Central differences of scalar `fn(arrays)` w.r.t. every entry of every array.

    Arrays are perturbed in place and restored; they should be float64.
    """
    grads = []
    for base in arrays:
        g = np.zeros(base.shape, dtype=np.float64)
        flat = base.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = float(fn(arrays))
            flat[j] = orig - eps
            fm = float(fn(arrays))
            flat[j] = orig
            gflat[j] = (fp - fm) / (2.0 * eps)
        grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(build_loss, arrays, eps: float = DEFAULT_EPS) -> float:
    """Worst relative error between tape gradients and finite differences.

    `build_loss(*tensors)` must return a scalar Tensor and be pure: called
    once with requires_grad tensors for the analytic side, then repeatedly
    with constants for the numeric side.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build_loss(*tensors)
    if loss.size != 1:
        raise ValueError("gradient check requires a scalar loss")
    loss.backward()
    analytic = [
        t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]

    def eval_fn(arrs):
        return build_loss(*[Tensor(a) for a in arrs]).data

    numeric = numeric_gradient(eval_fn, arrays, eps=eps)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))

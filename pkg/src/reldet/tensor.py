"""Minimal reverse-mode autodiff over numpy arrays.

The model code needs exact analytic gradients for a transformer-style head,
but nothing close to a full ML framework.  This module provides a small
define-by-run tape: a :class:`Tensor` wraps a numpy array, ops record their
parents plus a backward closure, and ``backward()`` walks the tape in
reverse topological order.

Every op preserves the dtype of its inputs.  Production paths run float32
(the on-disk array contract); verification code builds the same graphs in
float64 so central finite differences are clean at eps=1e-3.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import DimensionError, ValidationError

# Public alias for "rank-1..4 array of 32-bit reals", the package's wire type.
DenseArray = np.ndarray

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / frozen paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def as_dense(x, name: str = "array", max_rank: int = 4) -> np.ndarray:
    """Coerce to the boundary contract: contiguous float32, rank 1..max_rank, finite."""
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if arr.ndim == 0 or arr.ndim > max_rank:
        raise DimensionError(f"{name}: expected rank 1..{max_rank}, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError(f"{name}: empty array (shape {arr.shape})")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name}: contains NaN or Inf")
    return arr


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    """Inverse of a sum-reduction: broadcast the reduced gradient back to `shape`."""
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


class Tensor:
    """One node of the tape: an array plus (optionally) parents and a backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            raise TypeError("Tensor wraps numpy arrays, not other Tensors")
        if isinstance(data, np.ndarray):
            self.data = data
        elif isinstance(data, np.generic):
            # numpy scalar (e.g. the result of 0-d arithmetic): keep its dtype
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=np.float32)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    # -- autodiff core ----------------------------------------------------

    def backward(self, grad=None):
        """Accumulate d(self)/d(node) into ``.grad`` for every node on the tape."""
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise DimensionError(
                f"backward: seed gradient shape {grad.shape} != value shape {self.data.shape}"
            )
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and (p._parents or p.requires_grad):
                    stack.append((p, False))
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- elementwise arithmetic --------------------------------------------

    def __add__(self, other):
        other = self._coerce(other)
        out = self.data + other.data

        def bwd(g):
            return _unbroadcast(g, self.data.shape), _unbroadcast(g, other.data.shape)

        return _make(out, (self, other), bwd)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        out = self.data - other.data

        def bwd(g):
            return _unbroadcast(g, self.data.shape), _unbroadcast(-g, other.data.shape)

        return _make(out, (self, other), bwd)

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __neg__(self):
        return _make(-self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        other = self._coerce(other)
        out = self.data * other.data
        a, b = self.data, other.data

        def bwd(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return _make(out, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self.data, other.data
        out = a / b

        def bwd(g):
            return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)

        return _make(out, (self, other), bwd)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        c = float(exponent)
        a = self.data
        out = a ** c

        def bwd(g):
            return (g * c * a ** (c - 1.0),)

        return _make(out, (self,), bwd)

    # -- linear algebra ------------------------------------------------------

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            other = self._coerce(other)
        if self.data.ndim < 2 or other.data.ndim < 2:
            raise DimensionError(
                f"matmul: operands must be rank>=2, got {self.data.shape} @ {other.data.shape}"
            )
        if self.data.shape[-1] != other.data.shape[-2]:
            raise DimensionError(
                f"matmul: inner dimensions disagree, {self.data.shape} @ {other.data.shape}"
            )
        a, b = self.data, other.data
        out = np.matmul(a, b)

        def bwd(g):
            ga = np.matmul(g, np.swapaxes(b, -1, -2))
            gb = np.matmul(np.swapaxes(a, -1, -2), g)
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return _make(out, (self, other), bwd)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def bwd(g):
            return (_expand_reduced(g, shape, axis, keepdims),)

        return _make(np.asarray(out), (self,), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        out = self.data.mean(axis=axis, keepdims=keepdims)
        shape = self.data.shape
        count = self.data.size // max(out.size, 1)

        def bwd(g):
            return (_expand_reduced(g, shape, axis, keepdims) / count,)

        return _make(np.asarray(out), (self,), bwd)

    # -- shape manipulation ----------------------------------------------------

    def reshape(self, shape):
        orig = self.data.shape
        out = self.data.reshape(shape)

        def bwd(g):
            return (g.reshape(orig),)

        return _make(out, (self,), bwd)

    def swapaxes(self, a: int, b: int):
        out = np.swapaxes(self.data, a, b)

        def bwd(g):
            return (np.swapaxes(g, a, b),)

        return _make(out, (self,), bwd)

    def transpose(self, axes):
        axes = tuple(axes)
        inverse = tuple(np.argsort(axes))
        out = np.transpose(self.data, axes)

        def bwd(g):
            return (np.transpose(g, inverse),)

        return _make(out, (self,), bwd)

    def broadcast_to(self, shape):
        orig = self.data.shape
        out = np.broadcast_to(self.data, shape)

        def bwd(g):
            return (_unbroadcast(g, orig),)

        return _make(out, (self,), bwd)

    def __getitem__(self, key):
        out = self.data[key]
        shape = self.data.shape
        dtype = self.data.dtype

        def bwd(g):
            buf = np.zeros(shape, dtype=dtype)
            np.add.at(buf, key, g)
            return (buf,)

        return _make(np.ascontiguousarray(out), (self,), bwd)

    # -- pointwise nonlinearities ------------------------------------------------

    def exp(self):
        out = np.exp(self.data)

        def bwd(g):
            return (g * out,)

        return _make(out, (self,), bwd)

    def log(self):
        a = self.data
        out = np.log(a)

        def bwd(g):
            return (g / a,)

        return _make(out, (self,), bwd)

    def tanh(self):
        out = np.tanh(self.data)

        def bwd(g):
            return (g * (1.0 - out * out),)

        return _make(out, (self,), bwd)

    def sigmoid(self):
        out = sigmoid_np(self.data)

        def bwd(g):
            return (g * out * (1.0 - out),)

        return _make(out, (self,), bwd)


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    """Build an op output; records the tape edge only when gradients can flow."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def make_op(data: np.ndarray, parents: tuple, backward) -> Tensor:
    """Extension hook for ops defined outside this module (conv, losses, ...)."""
    return _make(data, parents, backward)


def wrap(x) -> Tensor:
    """Return `x` as a Tensor (constants pass through unchanged)."""
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [wrap(t) for t in tensors]
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def bwd(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, tuple(tensors), bwd)


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function on raw arrays."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class ParamStore:
    """Flat, ordered registry of named learnable tensors.

    Names are unique and iteration follows insertion order, so parameter
    layouts (and therefore checkpoints and seeded initialisation) are
    reproducible.  Gradients live on the tensors themselves and always
    match the parameter shape.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def create(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        t = Tensor(np.ascontiguousarray(data, dtype=np.float32), requires_grad=True)
        self._params[name] = t
        return t

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        """Overwrite parameter values in place; names and shapes must match exactly."""
        missing = [n for n in self._params if n not in state]
        extra = [n for n in state if n not in self._params]
        if missing or extra:
            raise DimensionError(
                f"parameter name mismatch: missing={missing[:4]} extra={extra[:4]}"
            )
        for name, t in self._params.items():
            arr = np.asarray(state[name], dtype=np.float32)
            if arr.shape != t.data.shape:
                raise DimensionError(
                    f"parameter {name!r}: stored shape {arr.shape} != expected {t.data.shape}"
                )
            t.data[...] = arr

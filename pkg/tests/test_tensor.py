import numpy as np
import pytest

from reldet.errors import DimensionError, ValidationError
from reldet.gradcheck import check_gradients
from reldet.tensor import ParamStore, Tensor, as_dense, concat, no_grad


def test_as_dense_accepts_and_coerces():
    arr = as_dense([[1.0, 2.0], [3.0, 4.0]])
    assert arr.dtype == np.float32
    assert arr.flags["C_CONTIGUOUS"]


def test_as_dense_rejects_nan_inf_and_bad_rank():
    with pytest.raises(ValidationError):
        as_dense([np.nan, 1.0])
    with pytest.raises(ValidationError):
        as_dense([np.inf, 1.0])
    with pytest.raises(DimensionError):
        as_dense(np.zeros((2, 2, 2, 2, 2)))
    with pytest.raises(DimensionError):
        as_dense(np.zeros((0, 3)))


def test_dtype_preserved_through_ops():
    x = Tensor(np.ones((2, 3), dtype=np.float32))
    y = ((x * 0.5 + 1.0) ** 2).mean()
    assert y.data.dtype == np.float32
    x64 = Tensor(np.ones((2, 3), dtype=np.float64))
    assert (x64.exp() * 2.0).data.dtype == np.float64


def test_backward_accumulates_over_shared_nodes():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x  # dy/dx = 2x + 1 = 5
    y.backward()
    assert np.allclose(x.grad, [5.0])


def test_no_grad_suppresses_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert y._parents == ()
    assert not y.requires_grad


def test_broadcast_add_gradients():
    err = check_gradients(
        lambda a, b: ((a + b) ** 2).sum(),
        [np.random.default_rng(0).normal(size=(3, 4)),
         np.random.default_rng(1).normal(size=(4,))],
    )
    assert err < 1e-4


def test_matmul_batched_gradients():
    rng = np.random.default_rng(2)
    err = check_gradients(
        lambda a, b: ((a @ b) ** 2).sum(),
        [rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))],
    )
    assert err < 1e-4


def test_getitem_fancy_index_gradients():
    rng = np.random.default_rng(3)
    idx = np.array([0, 2, 2, 1])

    def loss(table):
        return (table[idx] ** 2).sum()

    err = check_gradients(loss, [rng.normal(size=(4, 3))])
    assert err < 1e-4


def test_concat_and_slice_gradients():
    rng = np.random.default_rng(4)

    def loss(a, b):
        c = concat([a, b], axis=0)
        return (c[1:, :] ** 3).sum()

    err = check_gradients(loss, [rng.normal(size=(2, 3)), rng.normal(size=(2, 3))])
    assert err < 1e-4


def test_reductions_reshape_transpose_gradients():
    rng = np.random.default_rng(5)

    def loss(a):
        t = a.reshape((3, 4)).transpose((1, 0))
        return (t.mean(axis=1) ** 2).sum() + t.sum(axis=0, keepdims=True).sum()

    err = check_gradients(loss, [rng.normal(size=(12,))])
    assert err < 1e-4


def test_matmul_shape_errors_name_both_shapes():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((4, 2)))
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
        a @ b


class TestParamStore:
    def test_unique_names_and_order(self):
        store = ParamStore()
        store.create("b", np.zeros(2))
        store.create("a", np.zeros(3))
        with pytest.raises(ValueError):
            store.create("a", np.zeros(1))
        assert store.names() == ["b", "a"]  # insertion order, not sorted

    def test_gradient_shapes_match_parameters(self):
        store = ParamStore()
        w = store.create("w", np.ones((2, 2)))
        (w * 3.0).sum().backward()
        assert w.grad.shape == w.data.shape

    def test_load_state_shape_mismatch(self):
        store = ParamStore()
        store.create("w", np.ones((2, 2)))
        with pytest.raises(DimensionError, match=r"\(3,\).*\(2, 2\)"):
            store.load_state({"w": np.ones(3)})

    def test_state_round_trip(self):
        store = ParamStore()
        store.create("w", np.arange(6, dtype=np.float32).reshape(2, 3))
        state = store.state()
        store["w"].data[...] = 0
        store.load_state(state)
        assert np.array_equal(store["w"].data, np.arange(6, dtype=np.float32).reshape(2, 3))

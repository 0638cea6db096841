"""Unit and property tests for the autodiff tensor core."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from congater import tensor
from congater.tensor import (NumericsError, ShapeError, Tensor,
                             finite_difference_check)
from graph_cases import suite

# Frozen scalar oracles, computed independently at high precision.
TANH_HALF = 0.4621171572600098
SIGMOID_ONE = 0.7310585786300049


def test_values_are_float64():
    t = Tensor([1, 2, 3])
    assert t.values.dtype == np.float64


def test_tanh_value_oracle():
    assert abs(tensor.tanh(Tensor([0.5])).values[0] - TANH_HALF) < 1e-12


def test_sigmoid_value_oracle():
    assert abs(tensor.sigmoid(Tensor([1.0])).values[0] - SIGMOID_ONE) < 1e-12


def test_sigmoid_stable_at_extremes():
    out = tensor.sigmoid(Tensor([-800.0, 800.0])).values
    assert np.isfinite(out).all()
    assert out[0] == 0.0 and out[1] == 1.0


def test_sum_gradient_is_exact():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1.0, 1.0, 6)
    err = finite_difference_check(lambda t: tensor.tsum(t), x)
    assert err < 1e-10


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_reuse_accumulates_gradient():
    x = Tensor([1.5, -0.5], requires_grad=True)
    y = tensor.tsum(x * x + x)
    y.backward()
    assert np.allclose(x.grad, 2.0 * x.values + 1.0, atol=1e-12)


def test_unreachable_tensor_keeps_no_gradient():
    x = Tensor([1.0], requires_grad=True)
    y = Tensor([2.0], requires_grad=True)
    tensor.tsum(x * 3.0).backward()
    assert y.grad is None


def test_suffix_broadcast_add_reduces_gradient():
    x = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.zeros(4), requires_grad=True)
    tensor.tsum((x + b) * Tensor(np.arange(12.0).reshape(3, 4))).backward()
    assert b.grad.shape == (4,)
    assert np.allclose(b.grad, np.arange(12.0).reshape(3, 4).sum(axis=0))


def test_trailing_broadcast_rejected():
    with pytest.raises(ShapeError):
        Tensor(np.ones((3, 4))) + Tensor(np.ones((3, 1)))
    with pytest.raises(ShapeError):
        Tensor(np.ones((4, 3))) * Tensor(np.ones(4))


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 2)))


def test_matmul_promotions():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    v = rng.normal(size=4)
    assert (Tensor(a) @ Tensor(b)).shape == (3, 2)
    assert (Tensor(v) @ Tensor(b)).shape == (2,)
    assert (Tensor(a) @ Tensor(v)).shape == (3,)
    assert (Tensor(v) @ Tensor(v)).shape == ()


def test_log_rejects_nonpositive():
    with pytest.raises(NumericsError):
        tensor.log(Tensor([1.0, 0.0]))
    with pytest.raises(NumericsError):
        tensor.log(Tensor([-1.0]))


def test_exp_rejects_overflow():
    with pytest.raises(NumericsError):
        tensor.exp(Tensor([1000.0]))


def test_softmax_rows_normalized():
    rng = np.random.default_rng(2)
    s = tensor.softmax_rows(Tensor(rng.normal(size=(5, 7)) * 3.0))
    assert np.abs(s.values.sum(axis=1) - 1.0).max() < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30.0, 30.0), min_size=2, max_size=8), st.floats(-5.0, 5.0))
def test_softmax_shift_invariant(row, shift):
    base = tensor.softmax_rows(Tensor(row)).values
    moved = tensor.softmax_rows(Tensor(np.asarray(row) + shift)).values
    assert np.abs(base - moved).max() < 1e-9


def test_grad_reverse_identity_forward_negated_backward():
    x = Tensor([0.3, -1.2], requires_grad=True)
    c = np.array([2.0, 5.0])
    out = tensor.grad_reverse(x)
    assert np.array_equal(out.values, x.values)
    tensor.tsum(out * Tensor(c)).backward()
    assert np.array_equal(x.grad, -c)


def test_take_row_scatters_gradient():
    x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    tensor.tsum(tensor.take_row(x, 1) * Tensor([3.0, 4.0])).backward()
    expected = np.zeros((3, 2))
    expected[1] = [3.0, 4.0]
    assert np.array_equal(x.grad, expected)


def test_embedding_rows_scatter_adds_duplicates():
    table = Tensor(np.arange(8.0).reshape(4, 2), requires_grad=True)
    out = tensor.embedding_rows(table, [2, 0, 2])
    assert np.array_equal(out.values, table.values[[2, 0, 2]])
    tensor.tsum(out).backward()
    expected = np.zeros((4, 2))
    expected[0] = 1.0
    expected[2] = 2.0
    assert np.array_equal(table.grad, expected)


def test_embedding_rows_rejects_out_of_range():
    table = Tensor(np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        tensor.embedding_rows(table, [0, 4])


PRIMITIVE_FD_CASES = {
    "add_bias": lambda t: tensor.tsum(tensor.sigmoid(t + Tensor([0.3, -0.2, 0.5]))),
    "sub": lambda t: tensor.tsum(tensor.sigmoid(Tensor([[1.0, 2.0, 3.0]]) - t)),
    "mul": lambda t: tensor.tsum(tensor.tanh(t * Tensor([1.3, 0.7, -0.4]))),
    "matmul": lambda t: tensor.tsum(tensor.sigmoid(t @ Tensor([[0.4], [-0.6], [0.9]]))),
    "transpose": lambda t: tensor.tsum(tensor.sigmoid(tensor.transpose(t) @ Tensor([0.5, -0.5]))),
    "tanh": lambda t: tensor.tsum(tensor.tanh(t) * Tensor([1.0, 2.0, 3.0])),
    "sigmoid": lambda t: tensor.tsum(tensor.sigmoid(t) * Tensor([3.0, 2.0, 1.0])),
    "exp": lambda t: tensor.tsum(tensor.exp(t) * Tensor([0.3, 0.2, 0.5])),
    "log": lambda t: tensor.tsum(tensor.log(tensor.sigmoid(t) + 0.5)),
    "clamp": lambda t: tensor.tsum(tensor.clamp_min(t, -10.0) * Tensor([1.0, 2.0, 3.0])),
    "softmax": lambda t: tensor.tsum(tensor.softmax_rows(t) * Tensor([0.5, 1.5, 2.5])),
    "mean_axis": lambda t: tensor.tsum(tensor.sigmoid(tensor.tmean(t * t, axis=0))),
    "layer_norm": lambda t: tensor.tsum(tensor.sigmoid(
        tensor.layer_norm(t, Tensor([1.1, 0.9, 1.0]), Tensor([0.1, -0.1, 0.0])))),
    "concat_rows": lambda t: tensor.tsum(tensor.sigmoid(
        tensor.concat_rows([t, t * 0.5])) * Tensor([0.4, 0.8, 1.2])),
    "concat_cols": lambda t: tensor.tsum(tensor.sigmoid(
        tensor.concat_cols([t, t * -0.5])) * Tensor(np.arange(1.0, 7.0).reshape(1, 6))),
    "dropout": lambda t: tensor.tsum(
        tensor.dropout(t, 0.4, np.random.default_rng(7), True) * Tensor([1.0, 2.0, 3.0])),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_FD_CASES))
def test_primitive_gradients(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    shape = (1, 3) if name in ("softmax", "layer_norm", "concat_cols", "mean_axis", "transpose") else (3,)
    if name == "transpose":
        shape = (2, 3)
    if name == "mean_axis":
        shape = (4, 3)
    x = rng.uniform(-1.2, 1.2, shape)
    assert finite_difference_check(PRIMITIVE_FD_CASES[name], x) < 1e-6


def test_embedding_mean_gradient():
    rng = np.random.default_rng(11)
    table0 = rng.normal(size=(5, 3))
    ids = [[0, 2, 2, 4], [1, 1, 3, 0]]

    def f(table):
        return tensor.tsum(tensor.sigmoid(tensor.embedding_mean(table, ids)))

    assert finite_difference_check(f, table0) < 1e-6
    out = tensor.embedding_mean(Tensor(table0), ids)
    assert np.allclose(out.values, table0[np.asarray(ids)].mean(axis=1), atol=1e-15)


def test_diamond_graph_gradient():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1.0, 1.0, (2, 3))

    def f(t):
        return tensor.tsum(tensor.tanh(t) * tensor.sigmoid(t))

    assert finite_difference_check(f, x) < 1e-6


def test_random_graph_suite():
    worst = 0.0
    for i, (x0, f) in enumerate(suite()):
        err = finite_difference_check(f, x0)
        assert err < 1e-4, f"graph {i} gradient error {err:.3e}"
        worst = max(worst, err)
    assert worst < 1e-4


def test_same_seed_same_bits():
    def build():
        x0, f = suite()[0]
        leaf = Tensor(x0.copy(), requires_grad=True)
        out = f(leaf)
        out.backward()
        return out.values.copy(), leaf.grad.copy()

    v1, g1 = build()
    v2, g2 = build()
    assert np.array_equal(v1, v2)
    assert np.array_equal(g1, g2)

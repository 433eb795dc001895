import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from puembed import tensor as T
from puembed.errors import NumericError, ShapeError, UsageError
from puembed.tensor import Tensor


def central_difference(f, x, eps=1e-5):
    """Numeric gradient of scalar ``f(ndarray)``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        up = f(x)
        x[idx] = orig - eps
        down = f(x)
        x[idx] = orig
        g[idx] = (up - down) / (2 * eps)
    return g


# -- forward values ----------------------------------------------------------


def test_matmul_identity():
    a = np.arange(12.0).reshape(3, 4)
    out = T.matmul(Tensor(np.eye(3)), Tensor(a))
    np.testing.assert_array_equal(out.data, a)


@pytest.mark.parametrize("x, expected", [(1.0, 1.0), (0.0, 0.0), (-1.0, math.exp(-1) - 1)])
def test_elu_values(x, expected):
    assert T.elu(Tensor(x)).item() == pytest.approx(expected, abs=1e-15)
    assert T.elu(Tensor(-1.0)).item() == pytest.approx(-0.6321, abs=1e-4)


def test_sigmoid_at_zero():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5


def test_sigmoid_stable_for_large_inputs():
    out = T.sigmoid(Tensor([-800.0, 800.0])).data
    np.testing.assert_array_equal(out, [0.0, 1.0])


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(scale=50, size=(20, 7)))
    np.testing.assert_allclose(T.softmax(x).data.sum(axis=1), 1.0, atol=1e-12)


def test_log_softmax_no_overflow():
    x = Tensor([[500.0, -500.0, 0.0], [-500.0, -500.0, -500.0]])
    out = T.log_softmax(x).data
    assert np.all(np.isfinite(out))
    assert out[0, 0] == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(out[1], -math.log(3), atol=1e-12)


def test_log_sigmoid_matches_log_of_sigmoid():
    x = np.linspace(-30, 30, 61)
    np.testing.assert_allclose(T.log_sigmoid(Tensor(x)).data, np.log(1 / (1 + np.exp(-x))), atol=1e-12)


def test_forward_determinism():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(5, 6)), rng.normal(size=(6, 4))

    def run():
        h = T.elu(Tensor(a) @ Tensor(b))
        return T.log_softmax(h * h).data

    assert run().tobytes() == run().tobytes()


def test_concat_order():
    out = T.concat([Tensor([1.0, 2.0]), Tensor([3.0]), Tensor([4.0, 5.0])])
    np.testing.assert_array_equal(out.data, [1, 2, 3, 4, 5])


# -- errors ------------------------------------------------------------------


def test_matmul_shape_mismatch_names_op():
    with pytest.raises(ShapeError, match="matmul"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeError, match="add"):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((3, 2)))


def test_non_finite_forward_is_numeric_error():
    with pytest.raises(NumericError):
        T.exp(Tensor([1000.0]))
    with pytest.raises(NumericError):
        T.log(Tensor([0.0]))


def test_backward_needs_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(UsageError):
        T.backward(x * 2.0)


def test_backward_needs_forward_output():
    with pytest.raises(UsageError):
        T.backward(np.array(1.0))


def test_grad_check_rejects_non_scalar():
    with pytest.raises(UsageError):
        T.grad_check(lambda p: p["x"] * 2.0, {"x": np.ones(3)})


# -- gradients ---------------------------------------------------------------


def test_square_derivative():
    x = Tensor(3.0, requires_grad=True)
    T.backward(x * x)
    assert x.grad == 6.0


def test_shared_leaf_sums_path_gradients():
    w = Tensor(np.array([0.5, -1.0]), requires_grad=True)
    a, b = np.array([2.0, 3.0]), np.array([-4.0, 7.0])
    out = T.sum(w * a) + T.sum(w * b)
    T.backward(out)
    np.testing.assert_array_equal(w.grad, a + b)


def test_leaf_used_k_times_equals_duplicated_graph():
    rng = np.random.default_rng(1)
    w0, xs = rng.normal(size=(3, 3)), [rng.normal(size=(2, 3)) for _ in range(4)]

    shared = Tensor(w0, requires_grad=True)
    T.backward(sum((T.sum(T.elu(Tensor(x) @ shared)) for x in xs), Tensor(0.0)))

    copies = [Tensor(w0, requires_grad=True) for _ in xs]
    T.backward(sum((T.sum(T.elu(Tensor(x) @ c)) for x, c in zip(xs, copies)), Tensor(0.0)))
    np.testing.assert_allclose(shared.grad, sum(c.grad for c in copies), rtol=1e-13, atol=1e-14)


def test_linear_grad_check_exact():
    assert T.grad_check(lambda p: p["x"] * 2.0, {"x": np.array(1.0)}, eps=1e-5) <= 1e-10


def test_elu_kink_has_finite_gradient():
    x = Tensor(np.array([0.0, 0.0]), requires_grad=True)
    T.backward(T.sum(T.elu(x)))
    np.testing.assert_array_equal(x.grad, [1.0, 1.0])
    err = T.grad_check(lambda p: T.sum(T.elu(p["x"])), {"x": np.zeros(2)})
    assert np.isfinite(err)


def test_abs_subgradient_at_zero():
    x = Tensor(np.array([0.0, -2.0, 3.0]), requires_grad=True)
    T.backward(T.sum(T.abs(x)))
    np.testing.assert_array_equal(x.grad, [0.0, -1.0, 1.0])


def test_five_parameter_graph_matches_finite_differences():
    rng = np.random.default_rng(5)
    theta = rng.normal(size=5)

    def value(t):
        return float(np.sum(np.tanh(t[:3]) ** 2) + t[3] * np.exp(0.3 * t[4]))

    def build(p):
        t = p["t"]
        s = T.sigmoid(t[:3] * 2.0) * 2.0 - 1.0  # tanh(x) = 2 sigmoid(2x) - 1
        return T.sum(s * s) + t[3] * T.exp(t[4] * 0.3)

    leaf = Tensor(theta, requires_grad=True)
    T.backward(build({"t": leaf}))
    numeric = central_difference(value, theta)
    np.testing.assert_allclose(leaf.grad, numeric, rtol=1e-4, atol=1e-8)


@pytest.mark.parametrize("op", [
    lambda x: T.sum(T.softmax(x) * np.arange(12.0).reshape(3, 4)),
    lambda x: T.sum(T.log_softmax(x) * np.arange(12.0).reshape(3, 4)),
    lambda x: T.mean(T.log_sigmoid(x)),
    lambda x: T.sum(T.exp(x * 0.5)),
    lambda x: T.sum(T.log(T.sigmoid(x))),
    lambda x: T.mean(x / (T.abs(x) + 1.0)),
    lambda x: T.sum(x.reshape(4, 3) @ np.ones((3, 2))),
    lambda x: T.sum(x[:, 1] * x[0, 2]),
    lambda x: T.mean(x, axis=0).sum() + T.sum(x, axis=1).mean(),
])
def test_op_gradients(op):
    x0 = np.random.default_rng(7).normal(size=(3, 4))
    assert T.grad_check(lambda p: op(p["x"]), {"x": x0}) <= 1e-6


def test_sparse_matmul_gradient():
    rng = np.random.default_rng(2)
    pool = sp.csr_matrix(np.array([[0.5, 0.5, 0, 0], [0, 0, 1.0, 0], [0.25, 0, 0.75, 0]]))
    e0 = rng.normal(size=(4, 3))
    assert T.grad_check(lambda p: T.sum(T.elu(T.sparse_matmul(pool, p["e"])) * 1.5), {"e": e0}) <= 1e-6


def _random_graph(seed):
    """Random composition of differentiable ops on a 3x4 activation."""
    rng = np.random.default_rng(seed)
    params = {
        "x": rng.normal(size=(3, 4)),
        "w": rng.normal(scale=0.5, size=(4, 4)),
        "w2": rng.normal(scale=0.5, size=(8, 4)),
        "b": rng.normal(size=4),
        "m": rng.normal(size=(3, 4)),
    }
    menu = [
        lambda h, p: h @ p["w"],
        lambda h, p: h + p["b"],
        lambda h, p: h * p["m"],
        lambda h, p: T.abs(h),
        lambda h, p: T.elu(h),
        lambda h, p: T.sigmoid(h),
        lambda h, p: T.log(T.sigmoid(h)),
        lambda h, p: T.softmax(h),
        lambda h, p: T.exp(T.sigmoid(h)),
        lambda h, p: T.concat([h, h * p["m"]], axis=1) @ p["w2"],
        lambda h, p: h - T.mean(h, axis=1).reshape(3, 1),
    ]
    steps = [int(i) for i in rng.integers(0, len(menu), size=6)]

    def fn(p):
        h = p["x"]
        for i in steps:
            h = menu[i](h, p)
        return T.mean(h * h) + T.sum(h) * 0.1

    return fn, params


@pytest.mark.parametrize("seed", range(15))
def test_random_graph_gradients(seed):
    fn, params = _random_graph(seed)
    assert T.grad_check(fn, params, eps=1e-5) <= 1e-4


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 3), elements=st.floats(-5, 5)), st.floats(-3, 3))
def test_backward_of_affine_map_is_coefficient(x, c):
    leaf = Tensor(x, requires_grad=True)
    T.backward(T.sum(leaf * c + 1.0))
    np.testing.assert_allclose(leaf.grad, np.full_like(x, c))


def test_topological_order_puts_inputs_first():
    a = Tensor(1.0, requires_grad=True)
    b = T.exp(a)
    c = b * a + b
    order = T.topological_order(c)
    pos = {id(n): i for i, n in enumerate(order)}
    for node in order:
        for parent in node.parents:
            assert pos[id(parent)] < pos[id(node)]
    assert order[-1] is c


def test_gradients_shapes_match_parameters():
    p = {"w": Tensor(np.ones((2, 3)), requires_grad=True), "unused": Tensor(np.ones(4), requires_grad=True)}
    g = T.gradients(T.sum(p["w"] * 2.0), p)
    assert g["w"].shape == (2, 3)
    np.testing.assert_array_equal(g["unused"], np.zeros(4))

import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rasl import tensor as T
from rasl.errors import AxisError, DomainError, InvalidCallError, LengthError, NumericError, ShapeError

V = T.Value


def param(a):
    return V(np.asarray(a, dtype=np.float32), requires_grad=True)


# ---- creation ---------------------------------------------------------------

def test_create_inits():
    assert np.array_equal(T.create([2, 2], "zeros").data, np.zeros((2, 2)))
    assert np.array_equal(T.create([3], "constant", value=1).data, np.ones(3))
    a = T.create([4], "uniform", low=0, high=1, seed=7)
    b = T.create([4], "uniform", low=0, high=1, seed=7)
    assert a.data.tobytes() == b.data.tobytes()
    assert a.dtype == np.float32
    g = T.create([1000], "gaussian", mean=2.0, std=0.5, seed=1)
    assert abs(g.data.mean() - 2.0) < 0.1


@pytest.mark.parametrize("shape", [[0], [2, 0], [-1, 3]])
def test_create_rejects_bad_extent(shape):
    with pytest.raises(ShapeError):
        T.create(shape, "zeros")


def test_constants_do_not_require_grad():
    assert not V(np.ones(3)).requires_grad
    assert T.create([2], "zeros", requires_grad=True).requires_grad


# ---- elementwise ------------------------------------------------------------

def test_elementwise_examples():
    assert np.array_equal(T.relu(V([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    assert T.sigmoid(V(0.0)).item() == 0.5
    assert np.array_equal(T.add(V([1.0, 2.0]), V([3.0, 4.0])).data, [4, 6])
    assert np.array_equal(T.elementwise("scalar-mul", V([1.0, -2.0]), 3.0).data, [3, -6])
    assert np.array_equal(T.elementwise("abs", V([-1.5, 2.0])).data, [1.5, 2.0])


def test_binary_shape_mismatch():
    with pytest.raises(ShapeError):
        T.add(V(np.ones(3)), V(np.ones(4)))


def test_scalar_broadcast():
    out = T.mul(V(np.ones((2, 3))), V(2.0))
    assert out.shape == (2, 3) and np.all(out.data == 2)


def test_log_domain():
    with pytest.raises(DomainError):
        T.log(V([1.0, 0.0]))
    with pytest.raises(DomainError):
        T.log(V([-1.0]))


def test_sigmoid_stable_at_extremes():
    out = T.sigmoid(V([-1000.0, 1000.0])).data
    assert np.all(np.isfinite(out)) and out[0] == 0 and out[1] == 1
    ls = T.log_sigmoid(V([-1000.0, 0.0, 1000.0])).data
    assert np.isclose(ls[0], -1000.0) and np.isclose(ls[1], -np.log(2)) and ls[2] == 0


# ---- reductions -------------------------------------------------------------

def test_reduce_examples():
    assert T.sum(V([1.0, 2.0, 3.0])).item() == 6
    assert T.mean(V([2.0, 2.0, 2.0])).item() == 2
    assert T.sum(V(np.zeros(5))).item() == 0
    assert T.reduce("sum", V(np.ones((2, 3))), axis=1).shape == (2,)


def test_reduce_bad_axis():
    with pytest.raises(AxisError):
        T.sum(V(np.ones((2, 3))), axis=2)


def test_mean_gradient_divides_by_count():
    x = param(np.ones((2, 4)))
    T.backward(T.mean(x))
    assert np.allclose(x.grad, 1 / 8)


# ---- matmul -----------------------------------------------------------------

def test_matmul_examples():
    b = np.random.default_rng(0).normal(size=(2, 3)).astype(np.float32)
    assert np.array_equal(T.matmul(V(np.eye(2, dtype=np.float32)), V(b)).data, b)
    assert np.array_equal(T.matmul(V([[1.0, 2.0], [3.0, 4.0]]), V([[1.0], [1.0]])).data, [[3], [7]])
    assert np.array_equal(T.matmul(V(b), V(np.zeros((3, 4)))).data, np.zeros((2, 4)))


def test_matmul_inner_mismatch():
    with pytest.raises(ShapeError):
        T.matmul(V(np.ones((2, 3))), V(np.ones((2, 3))))


def test_matmul_gradients_closed_form():
    rng = np.random.default_rng(1)
    a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4, 2)))
    g = rng.normal(size=(3, 2)).astype(np.float32)
    T.backward(T.sum(T.matmul(a, b) * V(g)))
    assert np.allclose(a.grad, g @ b.data.T, atol=1e-6)
    assert np.allclose(b.grad, a.data.T @ g, atol=1e-6)


def test_batched_matmul_against_weight():
    rng = np.random.default_rng(2)
    a, w = param(rng.normal(size=(5, 3, 4))), param(rng.normal(size=(4, 2)))
    T.backward(T.sum(a @ w))
    assert np.allclose(w.grad, a.data.reshape(-1, 4).sum(0)[:, None].repeat(2, 1), atol=1e-5)


# ---- softmax / layer norm / cosine --------------------------------------------

def test_softmax_examples():
    assert np.allclose(T.softmax(V([0.0, 0.0])).data, [0.5, 0.5])
    assert np.allclose(T.softmax(V([1.0, 2.0])).data, [0.26894, 0.73106], atol=1e-5)
    x = np.random.default_rng(3).normal(size=(4, 6)).astype(np.float32)
    assert np.allclose(T.softmax(V(x)).data, T.softmax(V(x + 100.0)).data, atol=1e-6)
    assert np.allclose(T.softmax(V(x), axis=1).data.sum(1), 1, atol=1e-6)


def test_softmax_non_finite():
    with pytest.raises(NumericError):
        T.softmax(V([0.0, np.inf]))


def test_layer_norm_examples():
    assert np.allclose(T.layer_norm(V(np.full(4, 3.0))).data, 0)
    assert np.allclose(T.layer_norm(V([1.0, 3.0]), eps=1e-12).data, [-1, 1], atol=1e-3)
    x = np.random.default_rng(4).normal(size=(5, 16))
    with T.precision(np.float64):
        assert np.abs(T.layer_norm(V(x)).data.mean(-1)).max() < 1e-6


def test_cosine_examples():
    x = V([0.3, -1.2, 2.0])
    assert np.isclose(T.cosine_similarity(x, x).item(), 1, atol=1e-6)
    assert np.isclose(T.cosine_similarity(x, -x).item(), -1, atol=1e-6)
    assert T.cosine_similarity(V([1.0, 0.0]), V([0.0, 1.0])).item() == 0


def test_cosine_zero_norm_is_zero_with_zero_grad():
    a, b = param([0.0, 0.0]), param([1.0, 2.0])
    out = T.cosine_similarity(a, b)
    assert out.item() == 0
    T.backward(out)
    assert np.all(a.grad == 0) and np.all(b.grad == 0)


# ---- convolution ---------------------------------------------------------------

def test_conv1d_examples():
    out = T.conv1d(V([[1.0, 2.0, 3.0, 4.0]]), V([[[1.0, 1.0]]]), stride=2)
    assert np.array_equal(out.data, [[3, 7]])
    x = np.random.default_rng(5).normal(size=(1, 9)).astype(np.float32)
    assert np.array_equal(T.conv1d(V(x), V([[[1.0]]])).data, x)
    out = T.conv1d(V(x), V(np.zeros((2, 1, 3))), V([1.5, -2.0]))
    assert np.array_equal(out.data, np.array([[1.5] * 7, [-2.0] * 7]))


def test_conv1d_matches_loop_oracle():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(3, 11))
    w = rng.normal(size=(4, 3, 3))
    b = rng.normal(size=4)
    with T.precision(np.float64):
        out = T.conv1d(V(x), V(w), V(b), stride=2, padding=(1, 1)).data
    xp = np.pad(x, ((0, 0), (1, 1)))
    ref = np.array([[b[o] + np.sum(w[o] * xp[:, 2 * t : 2 * t + 3]) for t in range(out.shape[1])] for o in range(4)])
    assert np.allclose(out, ref, atol=1e-12)


def test_conv1d_too_short():
    with pytest.raises(LengthError):
        T.conv1d(V(np.ones((1, 2))), V(np.ones((1, 1, 3))))


def test_same_padding_halves():
    lengths = [150]
    for _ in range(3):
        left, right = T.same_padding(lengths[-1], 3, 2)
        lengths.append((lengths[-1] + left + right - 3) // 2 + 1)
    assert lengths == [150, 75, 38, 19]


def test_transposed_conv_examples():
    x = np.random.default_rng(7).normal(size=(1, 6)).astype(np.float32)
    assert np.array_equal(T.transposed_conv1d(V(x), V([[[1.0]]])).data, x)
    out = T.transposed_conv1d(V(np.ones((1, 5))), V(np.ones((1, 1, 2))), stride=2)
    assert out.shape == (1, 2 * 4 + 2)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 3), st.integers(4, 12), st.integers(0, 2**31))
def test_transposed_conv_is_adjoint(c_in, c_out, k, stride, length, seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(c_out, c_in, k))
    x = rng.normal(size=(c_in, length))
    with T.precision(np.float64):
        y_shape = T.conv1d(V(x), V(w), stride=stride).shape
        y = rng.normal(size=y_shape)
        lhs = np.sum(T.conv1d(V(x), V(w), stride=stride).data * y)
        back = T.transposed_conv1d(V(y), V(w), stride=stride).data[:, :length]
    rhs = np.sum(x[:, : back.shape[1]] * back)
    assert np.isclose(lhs, rhs, rtol=1e-10, atol=1e-10)


def test_adjoint_f32_random_1x1x8():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(1, 8)).astype(np.float32)
    w = rng.normal(size=(1, 1, 3)).astype(np.float32)
    y = rng.normal(size=(1, 3)).astype(np.float32)
    lhs = float(np.sum(T.conv1d(V(x), V(w), stride=2).data * y))
    back = T.transposed_conv1d(V(y), V(w), stride=2).data
    # the last input sample lies outside every stride-2 window
    rhs = float(np.sum(x[:, : back.shape[1]] * back))
    assert abs(lhs - rhs) < 1e-5


# ---- backward / graph ----------------------------------------------------------

def test_backward_examples():
    x = param([1.0, -2.0, 3.0])
    T.backward(T.sum(x * x))
    assert np.allclose(x.grad, 2 * x.data)
    x = param([-1.0, 2.0])
    T.backward(T.sum(T.relu(x)))
    assert np.array_equal(x.grad, [0, 1])


def test_relu_subgradient_at_zero():
    x = param([0.0])
    T.backward(T.sum(T.relu(x)))
    assert x.grad[0] == 0


def test_backward_non_scalar():
    x = param([1.0, 2.0])
    with pytest.raises(InvalidCallError):
        T.backward(x * x)


def test_graph_records_in_order_and_is_consumed():
    T.reset_graph()
    x = param([1.0, 2.0])
    y = T.exp(x)
    z = T.sum(y)
    ops = [n.op for n in T.current_graph().nodes]
    assert ops == ["exp", "sum"]
    T.backward(z)
    assert len(T.current_graph().nodes) == 0


def test_no_grad_records_nothing():
    T.reset_graph()
    x = param([1.0])
    with T.no_grad():
        y = T.exp(x)
    assert len(T.current_graph().nodes) == 0 and not y.requires_grad


def test_shared_input_accumulates():
    x = param([3.0])
    T.backward(T.sum(x * x + x))
    assert np.allclose(x.grad, [7.0])


def test_deterministic_gradients():
    def run():
        rng = np.random.default_rng(9)
        a = param(rng.normal(size=(4, 5)))
        w = param(rng.normal(size=(5, 3)))
        T.backward(T.sum(T.softmax(a @ w)))
        return a.grad.tobytes(), w.grad.tobytes()

    assert run() == run()


# ---- gradient checks -----------------------------------------------------------

def test_grad_check_linear_is_exact():
    x = V(np.random.default_rng(10).normal(size=6))
    assert T.grad_check(lambda v: T.sum(v), x) < 1e-6


UNARY = {
    "relu": lambda v: T.sum(T.relu(v) * v),
    "sigmoid": lambda v: T.sum(T.sigmoid(v)),
    "exp": lambda v: T.sum(T.exp(v)),
    "abs": lambda v: T.sum(T.abs(v) * v),
    "log": lambda v: T.sum(T.log(v * v + 1.0)),
    "log_sigmoid": lambda v: T.sum(T.log_sigmoid(v)),
    "softmax": lambda v: T.sum(T.softmax(v.reshape((2, 3)), axis=1) * V(np.arange(6.0).reshape(2, 3))),
    "layer_norm": lambda v: T.sum(T.layer_norm(v.reshape((2, 3))) * V(np.arange(6.0).reshape(2, 3))),
    "mean": lambda v: T.mean(v * v),
    "scalar_mul": lambda v: T.sum(T.scalar_mul(v, -2.5) * v),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_grad_check_unary_ops_f64(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    with T.precision(np.float64):
        for _ in range(20):
            x = V(rng.normal(size=6) + np.sign(rng.normal(size=6)) * 0.1)
            assert T.grad_check(UNARY[name], x, eps=1e-5) < 1e-6, name


def test_grad_check_binary_and_structural_ops():
    rng = np.random.default_rng(11)
    b = V(rng.normal(size=(3, 2)))
    with T.precision(np.float64):
        for _ in range(20):
            x = V(rng.normal(size=(2, 3)))
            assert T.grad_check(lambda v: T.sum(T.square(T.matmul(v, b))), x) < 1e-6
            assert T.grad_check(lambda v: T.sum(T.div(v, V(np.full((2, 3), 1.7))) * v), x) < 1e-6
            assert T.grad_check(lambda v: T.sum(T.cosine_similarity(v, v * v + 1.0, axis=1)), x) < 1e-6
            assert T.grad_check(lambda v: T.sum(T.square(T.take_along_axis(v, np.array([[2, 0], [1, 1]]), 1))), x) < 1e-6
            assert T.grad_check(lambda v: T.sum(T.square(T.concat([v, v * 2.0], axis=0))), x) < 1e-6


def test_grad_check_conv_ops():
    rng = np.random.default_rng(12)
    w = V(rng.normal(size=(2, 3, 3)))
    with T.precision(np.float64):
        for _ in range(20):
            x = V(rng.normal(size=(3, 9)))
            f = lambda v: T.sum(T.square(T.conv1d(v, w, stride=2, padding="same")))
            assert T.grad_check(f, x) < 1e-6
            y = V(rng.normal(size=(2, 5)))
            g = lambda v: T.sum(T.square(T.transposed_conv1d(v, w, stride=2)))
            assert T.grad_check(g, y) < 1e-6


def test_grad_check_f32_against_f64_reference():
    rng = np.random.default_rng(13)
    for _ in range(20):
        x = V(rng.normal(size=5).astype(np.float32))
        assert T.grad_check(lambda v: T.sum(T.exp(v) * v), x, eps=1e-4) < 1e-3

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctxnet import tensor as T
from ctxnet.errors import ContractError, ShapeError
from ctxnet.optim import OptimizerState, optimizer_step

from helpers import fd_check


# --- brute-force oracles --------------------------------------------------------

def dense_oracle(x, w, b):
    out = [0.0] * w.shape[0]
    for i in range(w.shape[0]):
        acc = 0.0
        for j in range(w.shape[1]):
            acc += float(w[i, j]) * float(x[j])
        out[i] = acc + float(b[i])
    return np.array(out)


def conv_oracle(x, k, b):
    c_in, h, w = x.shape
    n_out, _, kh, kw = k.shape
    out = np.zeros((n_out, h - kh + 1, w - kw + 1))
    for o in range(n_out):
        for i in range(h - kh + 1):
            for j in range(w - kw + 1):
                acc = 0.0
                for c in range(c_in):
                    for u in range(kh):
                        for v in range(kw):
                            acc += x[c, i + u, j + v] * k[o, c, u, v]
                out[o, i, j] = acc + b[o]
    return out


def pool_oracle(x):
    c, h, w = x.shape
    out = np.empty((c, h // 2, w // 2), dtype=x.dtype)
    for ch in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[ch, i, j] = max(x[ch, 2 * i + u, 2 * j + v] for u in range(2) for v in range(2))
    return out


def softmax_oracle(x):
    with mpmath.workdps(50):
        e = [mpmath.exp(mpmath.mpf(float(v))) for v in x]
        s = mpmath.fsum(e)
        return np.array([float(v / s) for v in e])


def dense_params(w, b):
    return T.DenseParams(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))


# --- dense ------------------------------------------------------------------------

def test_dense_identity_and_zero():
    v = np.array([1.5, -2.0, 3.25])
    assert np.array_equal(T.dense(v, dense_params(np.eye(3), np.zeros(3))).data, v)
    b = np.array([0.1, 0.2])
    assert np.array_equal(T.dense(np.zeros(3), dense_params(np.ones((2, 3)), b)).data, b)


def test_dense_matches_loop_oracle(rng):
    worst = 0.0
    for _ in range(100):
        w, x, b = rng.standard_normal((8, 5)), rng.standard_normal(5), rng.standard_normal(8)
        got = T.dense(x, dense_params(w, b)).data
        want = dense_oracle(x, w, b)
        worst = max(worst, np.max(np.abs(got - want) / np.maximum(np.abs(want), 1e-300)))
    assert worst <= 1e-12


def test_dense_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(4,\).*\(2, 3\)"):
        T.dense(np.zeros(4), dense_params(np.zeros((2, 3)), np.zeros(2)))


# --- activations, softmax, losses ---------------------------------------------------

def test_activations():
    assert np.array_equal(T.activation("relu", np.array([-2.0, 0.0, 3.0])).data, [0, 0, 3])
    assert T.activation("sigmoid", np.array([0.0])).data[0] == 0.5
    x = np.array([-1.0, 2.0])
    assert np.array_equal(T.activation("linear", x).data, x)
    with pytest.raises(ValueError):
        T.activation("tanh", x)


def test_sigmoid_strictly_inside_unit_interval():
    s = T.sigmoid(T.Tensor(np.array([-1e4, -50, 0, 50, 1e4], dtype=np.float32))).data
    assert np.all(s > 0) and np.all(s < 1)


def test_softmax_basic_and_stable():
    assert np.allclose(T.softmax(np.zeros(3)).data, [1 / 3] * 3, atol=0, rtol=1e-15)
    s = T.softmax(np.array([5.0, 5.0 + 1e4])).data
    assert np.all(np.isfinite(s)) and abs(s.sum() - 1) <= 1e-6


def test_softmax_matches_high_precision_oracle(rng):
    for _ in range(20):
        x = rng.standard_normal(10) * 3
        assert np.max(np.abs(T.softmax(x).data - softmax_oracle(x))) <= 1e-10


def test_softmax_normalized_on_ten_thousand_vectors(rng):
    scales = rng.choice([1.0, 10.0, 100.0], size=(10000, 1))
    for dtype in (np.float64, np.float32):
        s = T.softmax((rng.standard_normal((10000, 10)) * scales).astype(dtype)).data
        assert np.max(np.abs(s.sum(axis=1, dtype=np.float64) - 1)) <= 1e-6


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e3, 1e3)))
def test_softmax_normalized_property(x):
    s = T.softmax(x).data
    assert abs(s.sum() - 1) <= 1e-6
    # strictly positive while the spread is representable
    if x.max() - x.min() < 700:
        assert np.all(s > 0)


def test_losses():
    x = np.array([0.3, -1.2])
    assert T.loss("mse", x, x).data == 0
    assert T.loss("mse", np.array([1.0, 0.0]), np.array([0.0, 0.0])).data == 0.5
    assert T.loss("cross_entropy", np.array([0.0, 1.0, 0.0]), np.array([0.0, 1.0, 0.0])).data == 0
    # floor keeps a confident wrong answer finite
    assert np.isfinite(T.cross_entropy(np.array([1.0, 0.0]), np.array([0.0, 1.0])).data)
    with pytest.raises(ShapeError):
        T.mse(np.zeros(2), np.zeros(3))


# --- backward -------------------------------------------------------------------------

def test_backward_square():
    x = T.Tensor(np.array(3.0), requires_grad=True)
    T.backward(x * x)
    assert x.grad == 6.0


def test_backward_unused_parameter_gets_no_gradient():
    x = T.Tensor(np.array(2.0), requires_grad=True)
    y = T.Tensor(np.array(5.0), requires_grad=True)
    T.backward(x * x)
    assert y.grad is None or y.grad == 0


def test_backward_requires_scalar():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        T.backward(x * 2.0)


def test_no_grad_records_nothing():
    w = T.Tensor(np.ones(2), requires_grad=True)
    with T.no_grad():
        y = w * 3.0
    assert not y.requires_grad


# --- gradient checks (double precision, central differences) --------------------------------

def test_gradcheck_dense_relu_mse(rng):
    p = T.DenseParams.init(12, 9, rng, dtype=np.float64)
    x = T.Tensor(rng.standard_normal((4, 12)), requires_grad=True)
    target = rng.standard_normal((4, 9))
    worst, n = fd_check(lambda: T.mse(T.relu(T.dense(x, p)), target), p.parameters() + [x], rng)
    assert n >= 100 and worst <= 1e-4


def test_gradcheck_sigmoid_layer(rng):
    p = T.DenseParams.init(10, 12, rng, dtype=np.float64)
    x = rng.standard_normal((3, 10))
    target = rng.random((3, 12))
    worst, n = fd_check(lambda: T.mse(T.sigmoid(T.dense(x, p)), target), p.parameters(), rng)
    assert n >= 100 and worst <= 1e-4


def test_gradcheck_softmax_cross_entropy(rng):
    p = T.DenseParams.init(16, 10, rng, dtype=np.float64)
    x = rng.standard_normal((5, 16))
    target = np.eye(10)[rng.integers(0, 10, 5)]
    worst, n = fd_check(lambda: T.cross_entropy(T.softmax(T.dense(x, p)), target), p.parameters(), rng)
    assert n >= 100 and worst <= 1e-4


def test_gradcheck_conv2d(rng):
    p = T.ConvParams.init(3, 4, 3, 3, rng, dtype=np.float64)
    x = T.Tensor(rng.standard_normal((2, 3, 7, 7)), requires_grad=True)
    target = rng.standard_normal((2, 4, 5, 5))
    worst, n = fd_check(lambda: T.mse(T.conv2d(x, p), target), p.parameters() + [x], rng, n_coords=150)
    assert n >= 100 and worst <= 1e-4


def test_gradcheck_maxpool2d(rng):
    x = T.Tensor(rng.standard_normal((2, 3, 8, 8)), requires_grad=True)
    target = rng.standard_normal((2, 3, 4, 4))
    worst, n = fd_check(lambda: T.mse(T.maxpool2d(x), target), [x], rng, n_coords=150)
    assert n >= 100 and worst <= 1e-4


def test_gradcheck_shared_dense_and_global_max(rng):
    p = T.DenseParams.init(6, 8, rng, dtype=np.float64)
    grid = T.Tensor(rng.standard_normal((3, 20, 6)), requires_grad=True)
    target = rng.standard_normal((3, 8))
    worst, n = fd_check(lambda: T.mse(T.global_max(T.shared_dense(grid, p))[0], target),
                        p.parameters() + [grid], rng, n_coords=150)
    assert n >= 100 and worst <= 1e-4


def test_gradcheck_fused_context_max(rng):
    p = T.DenseParams.init(6, 8, rng, dtype=np.float64)
    grid = T.Tensor(rng.standard_normal((3, 20, 6)), requires_grad=True)
    target = rng.standard_normal((3, 8))
    worst, n = fd_check(lambda: T.mse(T.shared_dense_max(grid, p)[0], target), p.parameters() + [grid], rng,
                        n_coords=150)
    assert n >= 100 and worst <= 1e-4


def test_fused_context_max_matches_unfused(rng):
    p = T.DenseParams.init(32, 64, rng, dtype=np.float32)
    grid = rng.standard_normal((4, 405, 32)).astype(np.float32)
    fused, arg = T.shared_dense_max(grid, p)
    vals, arg2 = T.global_max(T.shared_dense(grid, p))
    assert np.allclose(fused.data, vals.data, rtol=1e-5, atol=1e-5)
    assert np.mean(arg == arg2) > 0.99


# --- conv / pool oracles -------------------------------------------------------------------

def test_conv2d_trivial_cases():
    ones = T.ConvParams(np.ones((1, 1, 5, 5)), np.zeros(1))
    assert T.conv2d(np.ones((1, 5, 5)), ones).data.item() == 25.0
    kern = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
    impulse = np.zeros((1, 5, 5))
    impulse[0, 2, 2] = 1.0
    out = T.conv2d(impulse, T.ConvParams(kern, np.zeros(1))).data[0]
    # cross-correlation: the impulse response is the kernel flipped
    assert np.array_equal(out, kern[0, 0, ::-1, ::-1])
    with pytest.raises(ShapeError):
        T.conv2d(np.ones((1, 3, 3)), ones)


def test_conv2d_matches_loop_oracle(rng):
    worst = 0.0
    for case in range(100):
        c = int(rng.integers(1, 5))
        h, w = (int(v) for v in rng.integers(5, 13, size=2))
        k = int(rng.integers(1, 5))
        kh, kw = (int(v) for v in rng.integers(1, 6, size=2))
        x = rng.standard_normal((c, h, w))
        p = T.ConvParams(rng.standard_normal((k, c, kh, kw)), rng.standard_normal(k))
        want = conv_oracle(x, p.kernels.data, p.bias.data)
        got = T.conv2d(x, p).data
        worst = max(worst, np.max(np.abs(got - want) / np.maximum(np.abs(want), 1e-12)))
    x = rng.standard_normal((3, 9, 9))
    p = T.ConvParams(rng.standard_normal((4, 3, 5, 5)), rng.standard_normal(4))
    assert np.allclose(T.conv2d(x, p).data, conv_oracle(x, p.kernels.data, p.bias.data), rtol=1e-10, atol=0)
    assert worst <= 1e-10


def test_maxpool_trivial_cases():
    assert np.array_equal(T.maxpool2d(np.full((2, 4, 4), 0.7)).data, np.full((2, 2, 2), 0.7))
    assert T.maxpool2d(np.array([[[1.0, 2.0], [3.0, 4.0]]])).data.item() == 4.0
    with pytest.raises(ShapeError):
        T.maxpool2d(np.zeros((1, 3, 4)))


def test_maxpool_matches_scan_oracle_exactly(rng):
    for _ in range(100):
        c = int(rng.integers(1, 5))
        h, w = (2 * int(v) for v in rng.integers(1, 7, size=2))
        x = rng.standard_normal((c, h, w))
        assert np.array_equal(T.maxpool2d(x).data, pool_oracle(x))


def test_maxpool_gradient_goes_to_first_max_on_ties():
    x = T.Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    T.backward(T.maxpool2d(x).sum())
    assert np.array_equal(x.grad[0, 0], [[1, 0], [0, 0]])


# --- determinism & finiteness -------------------------------------------------------------------

def test_forward_backward_bitwise_deterministic():
    def run():
        r = np.random.default_rng(7)
        p = T.ConvParams.init(1, 4, 5, 5, r)
        d = T.DenseParams.init(4 * 12 * 12, 10, r)
        x = r.random((3, 1, 28, 28)).astype(np.float32)
        probs = T.softmax(T.dense(T.flatten(T.maxpool2d(T.relu(T.conv2d(x, p)))), d))
        loss = T.cross_entropy(probs, np.eye(10, dtype=np.float32)[[1, 2, 3]])
        T.backward(loss)
        return [probs.data] + [t.grad for t in p.parameters() + d.parameters()]

    a, b = run(), run()
    for u, v in zip(a, b):
        assert u.tobytes() == v.tobytes()
        assert np.all(np.isfinite(u))


# --- optimizer ---------------------------------------------------------------------------------

@pytest.mark.parametrize("mode", ["sgd", "adam"])
def test_zero_gradient_step_is_noop(mode, rng):
    params = [rng.standard_normal((3, 4)), rng.standard_normal(4)]
    before = [p.copy() for p in params]
    state = OptimizerState.for_params(params, mode=mode, lr=0.1)
    optimizer_step(params, [np.zeros_like(p) for p in params], state)
    for p, q in zip(params, before):
        assert np.array_equal(p, q)
    assert state.step == 1


def test_sgd_one_step():
    p = [np.zeros(1)]
    optimizer_step(p, [np.ones(1)], OptimizerState.for_params(p, mode="sgd", lr=0.1))
    assert p[0][0] == -0.1


def test_adam_first_step_closed_form(rng):
    p0 = rng.standard_normal(50)
    g = rng.standard_normal(50)
    lr, eps = 1e-3, 1e-8
    # after one step the bias-corrected moments are g and g**2
    want = p0 - lr * g / (np.abs(g) + eps)
    p = [p0.copy()]
    state = OptimizerState.for_params(p, mode="adam", lr=lr, eps=eps)
    optimizer_step(p, [g], state)
    assert np.max(np.abs(p[0] - want)) <= 1e-12


def test_optimizer_shape_mismatch(rng):
    p = [np.zeros((2, 2))]
    with pytest.raises(ShapeError):
        optimizer_step(p, [np.zeros(3)], OptimizerState.for_params(p))


def test_optimizer_step_counter_and_accumulator_shapes(rng):
    p = [rng.standard_normal((3, 2)), rng.standard_normal(5)]
    state = OptimizerState.for_params(p)
    for k in range(1, 4):
        optimizer_step(p, [rng.standard_normal(q.shape) for q in p], state)
        assert state.step == k
    assert [m.shape for m in state.m] == [q.shape for q in p] == [v.shape for v in state.v]

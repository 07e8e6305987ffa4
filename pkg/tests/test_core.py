import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochact.core import (batch_cross_entropy, conv2d, conv2d_backward, conv2d_naive, cross_entropy,
                           derive_seed, finite_diff_grad, make_rng, matmul, relative_error, softmax)
from stochact.errors import DimensionError


def test_matmul_examples():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(np.eye(2), a), a)
    np.testing.assert_array_equal(matmul(a, np.ones((2, 1))), [[3.0], [7.0]])
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 2)))


def test_conv2d_examples():
    x = np.arange(1.0, 5.0).reshape(1, 1, 2, 2)
    np.testing.assert_array_equal(conv2d(x, np.full((1, 1, 1, 1), 2.0)), 2 * x)
    np.testing.assert_array_equal(conv2d(x, np.ones((1, 1, 2, 2))), [[[[10.0]]]])
    with pytest.raises(DimensionError):
        conv2d(x, np.ones((1, 1, 3, 3)))


def _loop_conv(x, k, stride, pad):
    """Independent scalar-loop oracle, written without any vectorised helper."""
    n, c, h, w = x.shape
    o, _, kh, kw = k.shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + w] = x
    oh, ow = (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for b in range(n):
        for f in range(o):
            for i in range(oh):
                for j in range(ow):
                    s = 0.0
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                s += xp[b, ch, i * stride + u, j * stride + v] * k[f, ch, u, v]
                    out[b, f, i, j] = s
    return out


def test_conv2d_matches_loop_oracle_100_instances():
    rng = make_rng(11)
    worst = 0.0
    for _ in range(100):
        c, o = rng.integers(1, 4, size=2)
        kh = int(rng.integers(1, 4))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        size = int(rng.integers(kh, 7))
        x = rng.normal(size=(2, c, size, size))
        k = rng.normal(size=(o, c, kh, kh))
        ref = _loop_conv(x, k, stride, pad)
        worst = max(worst, np.abs(conv2d(x, k, stride, pad) - ref).max(),
                    np.abs(conv2d_naive(x, k, stride, pad) - ref).max())
    assert worst < 1e-10


def test_conv2d_backward_is_adjoint():
    rng = make_rng(3)
    x = rng.normal(size=(2, 3, 6, 6))
    k = rng.normal(size=(4, 3, 3, 3))
    up = rng.normal(size=conv2d(x, k, 2, 1).shape)
    dx, dk = conv2d_backward(x, k, up, 2, 1)
    # <conv(x), up> is bilinear, so its gradients give back the inner product
    total = np.sum(conv2d(x, k, 2, 1) * up)
    assert math.isclose(np.sum(dx * x), total, rel_tol=1e-10)
    assert math.isclose(np.sum(dk * k), total, rel_tol=1e-10)


def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5])
    np.testing.assert_allclose(softmax(np.array([1.0, 2.0, 3.0])), [0.0900306, 0.2447285, 0.6652410], atol=1e-6)
    big = softmax(np.array([5.0, 1005.0]))
    assert np.all(np.isfinite(big)) and big[0] < 1e-300 and big[1] == 1.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-1e3, 1e3))
def test_softmax_shift_invariant(xs, c):
    x = np.array(xs)
    np.testing.assert_allclose(softmax(x + c), softmax(x), atol=1e-9)


def test_cross_entropy_examples():
    loss, _, clamped = cross_entropy(np.array([0.5, 0.5]), 0)
    assert math.isclose(loss, math.log(2), rel_tol=1e-12) and not clamped
    loss, _, _ = cross_entropy(np.array([0.0, 1.0]), 1)
    assert loss == 0.0
    _, grad, _ = cross_entropy(softmax(np.array([1.0, 2.0, 3.0])), 2)
    np.testing.assert_allclose(grad, [0.0900, 0.2447, -0.3348], atol=1e-4)
    loss, _, clamped = cross_entropy(np.array([0.0, 1.0]), 0)
    assert clamped and math.isclose(loss, -math.log(1e-12))


def test_batch_cross_entropy_is_mean():
    p = softmax(make_rng(0).normal(size=(4, 3)))
    y = np.array([0, 2, 1, 1])
    loss, grad = batch_cross_entropy(p, y)
    assert math.isclose(loss, np.mean([cross_entropy(p[i], y[i])[0] for i in range(4)]))
    np.testing.assert_allclose(grad[1], cross_entropy(p[1], 2)[1] / 4)


def test_finite_diff_examples():
    assert abs(finite_diff_grad(lambda v: float(v[0] ** 2), np.array([3.0]))[0] - 6) < 1e-6
    assert abs(finite_diff_grad(lambda v: float(max(v[0], 0)), np.array([2.0]))[0] - 1) < 1e-6
    _, kinks = finite_diff_grad(lambda v: float(abs(v[0])), np.array([0.0]), return_kinks=True)
    assert kinks[0]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.floats(-5, 5))
def test_finite_diff_exact_on_cubics(coef, x0):
    c0, c1, c2, c3 = coef
    f = lambda v: float(c0 + c1 * v[0] + c2 * v[0] ** 2 + c3 * v[0] ** 3)  # noqa: E731
    exact = c1 + 2 * c2 * x0 + 3 * c3 * x0 ** 2
    num = finite_diff_grad(f, np.array([x0]))[0]
    assert relative_error(exact, num) < 1e-6


def test_rng_reproducible_and_seed_derivation():
    assert np.array_equal(make_rng(5).integers(0, 2 ** 62, 10), make_rng(5).integers(0, 2 ** 62, 10))
    assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2)
    assert derive_seed(1, "a", 2) != derive_seed(1, "a", 3)
    assert 0 <= derive_seed("x") < 2 ** 64

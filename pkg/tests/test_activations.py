import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochact import activations as A
from stochact.activations import K
from stochact.core import finite_diff_grad, make_rng
from stochact.errors import ConfigurationError, DimensionError
from stochact.gradcheck import random_params

RELU_AT_INIT = (K.MELU_K4, K.MELU_K8, K.GALU_K4, K.GALU_K2, K.SRELU, K.PRELU, K.APLU)


def fwd(kind, x, m=1.0, **learn):
    p = A.act_init(kind, m, 1, make_rng(0))
    for k, v in learn.items():
        p.learnable[k] = np.asarray(v, dtype=np.float64).reshape(p.learnable[k].shape)
    return A.act_forward(p, np.asarray(x, dtype=np.float64))


def test_forward_examples():
    np.testing.assert_array_equal(fwd(K.RELU, [-1.0, 0.0, 2.0]), [0, 0, 2])
    assert math.isclose(fwd(K.LEAKY_RELU, [-3.0])[0], -0.03)
    assert math.isclose(fwd(K.ELU, [-1.0])[0], math.exp(-1) - 1)
    assert round(fwd(K.ELU, [-1.0])[0], 4) == -0.6321
    assert round(fwd(K.SWISH_FIXED, [1.0])[0], 4) == 0.7311
    assert fwd(K.SWISH_FIXED, [0.0])[0] == 0.0
    for alpha, beta in [(2, 3), (0.5, 1), (5, 0.01)]:
        assert fwd(K.SRS, [0.0], alpha=alpha, beta=beta)[0] == 0.0


def test_init_examples():
    p = A.act_init(K.SRELU, 255, 1)
    assert p.learnable["t_r"][0] == 255 and p.learnable["a_r"][0] == 1
    assert p.learnable["a_l"][0] == 0 and p.learnable["t_l"][0] == 0
    p = A.act_init(K.MELU_K4, 1, 8)
    assert p.learnable["c"].shape == (8, 4) and not p.learnable["c"].any()
    b1 = A.act_init(K.APLU, 1, 2, make_rng(7)).learnable["b"]
    b2 = A.act_init(K.APLU, 1, 2, make_rng(7)).learnable["b"]
    np.testing.assert_array_equal(b1, b2)
    assert np.all((b1 >= 0) & (b1 <= 1))
    with pytest.raises(ConfigurationError):
        A.act_init(K.RELU, 3)


def test_channel_mismatch():
    p = A.act_init(K.PRELU, 1, 3)
    with pytest.raises(DimensionError):
        A.act_forward(p, np.zeros((2, 4, 5)))


def test_backward_input_examples():
    def d(kind, x):
        return A.act_backward_input(A.act_init(kind), np.array([x]), np.array([1.0]))[0]
    assert d(K.RELU, -1.0) == 0.0 and d(K.RELU, 2.0) == 1.0
    assert d(K.LEAKY_RELU, -5.0) == 0.01


def test_param_gradient_examples():
    p = A.act_init(K.PRELU, 1, 1)
    g = A.act_backward_params(p, np.array([-2.0]), np.array([1.0]))
    assert g["a"][0] == -2.0
    # single active hinge: b=1, a=1, x=0.5
    p = A.act_init(K.APLU, 1, 1, make_rng(0))
    p.learnable["b"][:] = [[1.0, 50.0, 50.0]]
    p.learnable["a"][:] = [[1.0, 0.0, 0.0]]
    g = A.act_backward_params(p, np.array([0.5]), np.array([1.0]))
    assert g["a"][0, 0] == 0.5
    fd = finite_diff_grad(lambda b: float(A.act_forward(_with(p, "b", b), np.array([0.5]))[0]),
                          p.learnable["b"].copy())
    assert math.isclose(g["b"][0, 0], fd[0, 0], rel_tol=1e-6)
    for kind in (K.RELU, K.LEAKY_RELU, K.ELU, K.SWISH_FIXED):
        assert A.act_backward_params(A.act_init(kind), np.ones(3), np.ones(3)) == {}


def _with(p, name, value):
    q = p.copy()
    q.learnable[name] = value
    return q


def test_hat_examples():
    assert A.mexican_hat(1.0, 2, 2, 1) == 1.0
    assert A.mexican_hat(2 * 255.0, 2, 2, 255) == 2 * 255.0
    assert A.mexican_hat(5.0, 2, 2, 1) == 0.0
    for m in (1.0, 255.0):
        a, lam = 1.5, 0.5
        assert math.isclose(A.gaussian_hat(a * m, a, lam, m), lam * m)
        assert math.isclose(A.gaussian_hat(a * m + 2 * lam * m, a, lam, m), -lam * m)
        assert A.gaussian_hat(a * m + 10 * lam * m, a, lam, m) == 0.0
        assert A.gaussian_hat(a * m - 10 * lam * m, a, lam, m) == 0.0


def test_constraint_examples():
    p = A.act_init(K.SRS)
    p.learnable["alpha"][:] = -0.5
    A.apply_constraints(p)
    assert p.learnable["alpha"][0] == A.EPS
    p = A.act_init(K.APLU, 1, 2, make_rng(0))
    p.learnable["a"] = np.array([[0.1], [-0.2]])
    assert math.isclose(A.act_penalty(p)[0], 5e-5)
    p = A.act_init(K.RELU)
    assert A.apply_constraints(p)[1] == 0.0 and p.learnable == {}


@pytest.mark.parametrize("kind", RELU_AT_INIT)
@pytest.mark.parametrize("m", [1.0, 255.0])
def test_relu_equivalence_at_init(kind, m):
    x = np.linspace(-3 * m, 3 * m, 10_000)
    p = A.act_init(kind, m, 1, make_rng(1))
    np.testing.assert_array_equal(A.act_forward(p, x), np.maximum(x, 0.0))


@pytest.mark.parametrize("kind", A.ALL_KINDS)
def test_continuity(kind):
    rng = make_rng(4)
    m = 255.0 if kind in A.MAX_INPUT_KINDS else 1.0
    p = random_params(kind, m, 1, rng)
    kinks = A.kink_points(p).ravel()
    x = np.concatenate([rng.uniform(-3 * m, 3 * m, 10_000 - kinks.size), kinks])
    assert np.all(np.abs(A.act_forward(p, x + 1e-9) - A.act_forward(p, x)) < 1e-6)


def test_swish_relu_limit():
    p = A.act_init(K.SWISH_LEARNABLE)
    p.learnable["beta"][:] = 1e4
    x = np.concatenate([np.linspace(-50, -1, 500), np.linspace(1, 50, 500)])
    assert np.all(np.abs(A.act_forward(p, x) - np.maximum(x, 0)) < 1e-3)


def test_pdelu_recovers_elu():
    p = A.act_init(K.PDELU)
    p.fixed["t"] = 1 - 1e-6
    x = np.linspace(-5, 5, 2001)
    np.testing.assert_allclose(A.act_forward(p, x), fwd(K.ELU, x), atol=1e-4)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(sorted(A.HAT_KINDS)), st.integers(0, 2 ** 32 - 1), st.sampled_from([1.0, 255.0]))
def test_hat_superposition(kind, seed, m):
    rng = make_rng(seed)
    k = A.HAT_KINDS[kind]
    x = rng.uniform(-2 * m, 9 * m, 200)

    def f(c):
        p = A.act_init(kind, m, 1)
        p.learnable["c"][:] = c
        return A.act_forward(p, x)
    c1, c2 = rng.normal(size=k), rng.normal(size=k)
    s, t = rng.normal(size=2)
    lhs = f(s * c1 + t * c2) - f(np.zeros(k))
    rhs = s * (f(c1) - f(np.zeros(k))) + t * (f(c2) - f(np.zeros(k)))
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(1.0, m)


@pytest.mark.parametrize("kind", A.ALL_KINDS)
def test_activation_id_roundtrip(kind):
    for m in (1.0, 255.0):
        assert A.parse_activation_id(A.activation_id(kind, m)) == (kind, m)


def test_srs_bounded_denominator_after_constraints():
    p = A.act_init(K.SRS)
    p.learnable["alpha"][:] = 0.1
    p.learnable["beta"][:] = 10.0
    A.apply_constraints(p)
    y = A.act_forward(p, np.linspace(-20, 20, 1001))
    assert np.all(np.isfinite(y))

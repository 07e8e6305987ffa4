"""Finite-difference audit of the activation gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import activations as A
from .core import derive_seed, finite_diff_grad, make_rng, relative_error

KINK_DELTA = 1e-3
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    ident: str
    target: str  # "input" or "params"
    points: int
    max_rel_error: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error <= TOLERANCE


def random_params(kind, max_input: float, channels: int, rng: np.random.Generator) -> A.ActivationParams:
    """Fresh params with every learnable value moved off its ReLU-like default."""
    p = A.act_init(kind, max_input, channels, rng)
    m, c, L = max_input, channels, p.learnable
    k = p.kind
    if k is A.K.PRELU:
        L["a"] = rng.uniform(-0.5, 0.5, c)
    elif k is A.K.SRELU:
        L["t_l"] = rng.uniform(-m, 0.3 * m, c)
        L["t_r"] = rng.uniform(0.5 * m, 1.5 * m, c)
        L["a_l"] = rng.uniform(-0.5, 0.5, c)
        L["a_r"] = rng.uniform(0.5, 1.5, c)
    elif k is A.K.APLU:
        L["a"] = rng.normal(0.0, 0.5, L["a"].shape)
    elif k in A.HAT_KINDS:
        L["c"] = rng.normal(0.0, 0.5, L["c"].shape)
    elif k is A.K.PDELU:
        L["a"] = rng.uniform(0.5, 1.5, c)
    elif k is A.K.SWISH_LEARNABLE:
        L["beta"] = rng.uniform(0.2, 3.0, 1)
    elif k is A.K.MISH_LEARNABLE:
        L["alpha"] = rng.uniform(0.2, 3.0, 1)
    elif k is A.K.SRS:
        alpha = rng.uniform(1.0, 4.0)
        L["alpha"] = np.array([alpha])
        L["beta"] = np.array([alpha * rng.uniform(0.5, 2.0)])
    elif k in (A.K.SOFT_LEARNABLE_FIXED_BETA, A.K.SOFT_LEARNABLE_LEARNABLE_BETA):
        for name in L:
            L[name] = rng.uniform(0.3, 3.0, 1)
    return p


def sample_inputs(kind, max_input: float, shape, rng: np.random.Generator) -> np.ndarray:
    kind = A.ActivationKind(kind)
    m = max_input
    if kind in A.HAT_KINDS:
        lo, hi = -2 * m, 9 * m
    elif kind in (A.K.SRELU, A.K.APLU):
        lo, hi = -3 * m, 3 * m
    elif kind is A.K.PDELU:
        lo, hi = -12.0, 6.0
    else:
        lo, hi = -6.0, 6.0
    return rng.uniform(lo, hi, shape)


def _exclusion_radius(params: A.ActivationParams, x: np.ndarray) -> np.ndarray:
    # central differences straddle a kink whenever |x - kink| < step (input or kink-parameter step)
    kinks = A.kink_points(params)
    kink_scale = np.max(np.abs(kinks)) if kinks.size else 0.0
    return np.maximum(KINK_DELTA, 2e-4 * np.maximum(1.0, np.maximum(np.abs(x), kink_scale)))


def safe_mask(params: A.ActivationParams, x: np.ndarray) -> np.ndarray:
    return A.distance_to_kinks(params, x) > _exclusion_radius(params, x)


def check_input_gradient(kind, max_input: float, n_points: int = 1000, channels: int = 3,
                         seed: int = 0) -> CheckResult:
    rng = make_rng(seed)
    params = random_params(kind, max_input, channels, rng)
    rows = int(np.ceil(1.3 * n_points / channels))
    x = sample_inputs(kind, max_input, (rows, channels), rng)
    keep = safe_mask(params, x)
    x = x[np.all(keep, axis=1)]
    if x.shape[0] * channels < n_points:
        raise RuntimeError(f"only {x.size} kink-free samples for {kind}")
    w = rng.normal(size=x.shape)
    analytic = A.act_backward_input(params, x, w)
    numeric = finite_diff_grad(lambda z: float(np.sum(w * A.act_forward(params, z))), x)
    err = relative_error(analytic, numeric)
    return CheckResult(A.activation_id(kind, max_input), "input", x.size, float(err.max()))


def check_param_gradient(kind, max_input: float, n_configs: int = 200, channels: int = 2,
                         rows: int = 4, seed: int = 0) -> CheckResult:
    rng = make_rng(seed)
    worst, count = 0.0, 0
    for _ in range(n_configs):
        params = random_params(kind, max_input, channels, rng)
        if not params.learnable:
            return CheckResult(A.activation_id(kind, max_input), "params", 0, 0.0)
        x = sample_inputs(kind, max_input, (rows * 3, channels), rng)
        x = x[np.all(safe_mask(params, x), axis=1)][:rows]
        w = rng.normal(size=x.shape)
        analytic = A.act_backward_params(params, x, w)
        for name, value in params.learnable.items():
            def f(theta, name=name):
                q = params.copy()
                q.learnable[name] = theta
                return float(np.sum(w * A.act_forward(q, x)))
            numeric = finite_diff_grad(f, value)
            worst = max(worst, float(relative_error(analytic[name], numeric).max()))
            count += value.size
    return CheckResult(A.activation_id(kind, max_input), "params", count, worst)


def run_suite(n_points: int = 1000, n_configs: int = 200, seed: int = 0) -> list[CheckResult]:
    results = []
    for kind in A.ALL_KINDS:
        for m in A.MAX_INPUTS:
            s = derive_seed(seed, kind.value, int(m))
            results.append(check_input_gradient(kind, m, n_points, seed=s))
            results.append(check_param_gradient(kind, m, n_configs, seed=s))
    return results

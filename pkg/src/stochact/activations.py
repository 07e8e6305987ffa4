"""Learnable and fixed activation functions with hand-written gradients.

Every kind exposes the same four operations through module-level functions:
:func:`act_init`, :func:`act_forward`, :func:`act_backward_input` and
:func:`act_backward_params`.  Inputs are either rank-1 (a single channel) or
rank >= 2 with the channel axis at position 1 (``NC`` or ``NCHW``).

Per-channel parameters have shape ``(C,)`` or ``(C, m)`` for kinds with
several coefficients per channel (APLU hinges, MeLU/GaLU coefficients).
Layer-wide scalars (Swish, Mish, SRS, SoftLearnable) have shape ``(1,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, DimensionError

MAX_INPUTS = (1.0, 255.0)
EPS = 1e-3
APLU_PENALTY = 1e-3
APLU_HINGES = 3
PDELU_T = 0.9
LEAKY_SLOPE = 0.01
ELU_SCALE = 1.0
SRS_MAX_RATIO = 2.5  # beta/alpha below e keeps the SRS denominator positive
LN2 = math.log(2.0)

# (a, lambda) pairs in units of maxInput: dyadic refinement of [0, 2*maxInput].
# k coefficients use the first k-1 rows.
HAT_TABLE = np.array([
    (2.0, 2.0),
    (1.0, 1.0), (3.0, 1.0),
    (0.5, 0.5), (1.5, 0.5), (2.5, 0.5), (3.5, 0.5),
])


class ActivationKind(str, Enum):
    RELU = "relu"
    LEAKY_RELU = "leakyrelu"
    ELU = "elu"
    PRELU = "prelu"
    SRELU = "srelu"
    APLU = "aplu"
    MELU_K4 = "melu_k4"
    MELU_K8 = "melu_k8"
    GALU_K4 = "galu_k4"
    GALU_K2 = "galu_k2"
    PDELU = "pdelu"
    SWISH_FIXED = "swish_fixed"
    SWISH_LEARNABLE = "swish_learnable"
    MISH_LEARNABLE = "mish_learnable"
    SRS = "srs"
    SOFT_LEARNABLE_FIXED_BETA = "softlearnable_fixed_beta"
    SOFT_LEARNABLE_LEARNABLE_BETA = "softlearnable_learnable_beta"

    def __str__(self) -> str:
        return self.value


K = ActivationKind

HAT_KINDS = {K.MELU_K4: 4, K.MELU_K8: 8, K.GALU_K4: 4, K.GALU_K2: 2}
GAUSSIAN_KINDS = {K.GALU_K4, K.GALU_K2}
PER_CHANNEL = {K.PRELU, K.SRELU, K.APLU, K.PDELU, *HAT_KINDS}
# kinds whose shape depends on maxInput
MAX_INPUT_KINDS = {K.SRELU, K.APLU, *HAT_KINDS}


@dataclass
class ActivationParams:
    kind: ActivationKind
    max_input: float
    channels: int
    learnable: dict[str, np.ndarray] = field(default_factory=dict)
    fixed: dict[str, float] = field(default_factory=dict)

    def copy(self) -> "ActivationParams":
        return ActivationParams(self.kind, self.max_input, self.channels,
                                {k: v.copy() for k, v in self.learnable.items()}, dict(self.fixed))

    @property
    def ident(self) -> str:
        return activation_id(self.kind, self.max_input)


def activation_id(kind, max_input: float = 1.0) -> str:
    """Stable identifier, e.g. ``melu_k8_255``; the ``_1`` suffix is omitted."""
    kind = ActivationKind(kind)
    return kind.value if float(max_input) == 1.0 else f"{kind.value}_{int(max_input)}"


def parse_activation_id(ident: str) -> tuple[ActivationKind, float]:
    name = ident.strip().lower()
    for m in MAX_INPUTS:
        suffix = f"_{int(m)}"
        if name.endswith(suffix) and name[: -len(suffix)] in ActivationKind._value2member_map_:
            return ActivationKind(name[: -len(suffix)]), m
    try:
        return ActivationKind(name), 1.0
    except ValueError:
        raise ConfigurationError(f"unknown activation identifier {ident!r}") from None


# -- hat functions ------------------------------------------------------------

def mexican_hat(x, a: float, lam: float, max_input: float):
    """``max(lam*M - |x - a*M|, 0)``."""
    return np.maximum(lam * max_input - np.abs(np.asarray(x, dtype=np.float64) - a * max_input), 0.0)


def gaussian_hat(x, a: float, lam: float, max_input: float):
    """Mexican hat plus a negative lobe of equal width centred at ``(a + 2 lam) M``."""
    x = np.asarray(x, dtype=np.float64)
    lobe = np.minimum(np.abs(x - a * max_input - 2.0 * lam * max_input) - lam * max_input, 0.0)
    return mexican_hat(x, a, lam, max_input) + lobe


def _mexican_hat_slope(x, a, lam, m):
    d = x - a * m
    return np.where(np.abs(d) < lam * m, -np.sign(d), 0.0)


def _gaussian_hat_slope(x, a, lam, m):
    d = x - (a + 2.0 * lam) * m
    return _mexican_hat_slope(x, a, lam, m) + np.where(np.abs(d) < lam * m, np.sign(d), 0.0)


def _hat_rows(kind: ActivationKind) -> np.ndarray:
    return HAT_TABLE[: HAT_KINDS[kind] - 1]


# -- broadcasting helpers -----------------------------------------------------

def _per_channel(v: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Reshape a ``(C,)`` vector so it broadcasts along axis 1 of ``x``."""
    if x.ndim <= 1:
        return v[0]
    shape = [1] * x.ndim
    shape[1] = v.shape[0]
    return v.reshape(shape)


def _channel_sum(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    if x.ndim <= 1:
        return np.array([g.sum()])
    axes = tuple(i for i in range(g.ndim) if i != 1)
    return g.sum(axis=axes)


def _check_channels(params: ActivationParams, x: np.ndarray) -> None:
    if params.kind not in PER_CHANNEL:
        return
    c = 1 if x.ndim <= 1 else x.shape[1]
    if c != params.channels:
        raise DimensionError(f"{params.ident}: input has {c} channels, params have {params.channels}")


def _scalar(params: ActivationParams, name: str) -> float:
    if name in params.learnable:
        return float(params.learnable[name][0])
    return float(params.fixed[name])


# -- initialisation -----------------------------------------------------------

def act_init(kind, max_input: float = 1.0, channels: int = 1,
             rng: np.random.Generator | None = None) -> ActivationParams:
    kind = ActivationKind(kind)
    max_input = float(max_input)
    if max_input not in MAX_INPUTS:
        raise ConfigurationError(f"maxInput must be 1 or 255, got {max_input}")
    if channels < 1:
        raise ConfigurationError(f"channels must be >= 1, got {channels}")
    c = channels
    one = lambda v: np.array([float(v)])  # noqa: E731
    learn: dict[str, np.ndarray] = {}
    fixed: dict[str, float] = {}
    if kind is K.LEAKY_RELU:
        fixed["a"] = LEAKY_SLOPE
    elif kind is K.ELU:
        fixed["a"] = ELU_SCALE
    elif kind is K.PRELU:
        learn["a"] = np.zeros(c)
    elif kind is K.SRELU:
        learn = {"t_l": np.zeros(c), "a_l": np.zeros(c),
                 "t_r": np.full(c, max_input), "a_r": np.ones(c)}
    elif kind is K.APLU:
        if rng is None:
            raise ConfigurationError("APLU initialisation needs an rng for hinge positions")
        fixed["hinges"] = APLU_HINGES
        learn["a"] = np.zeros((c, APLU_HINGES))
        learn["b"] = rng.uniform(0.0, max_input, size=(c, APLU_HINGES))
    elif kind in HAT_KINDS:
        learn["c"] = np.zeros((c, HAT_KINDS[kind]))
    elif kind is K.PDELU:
        fixed["t"] = PDELU_T
        learn["a"] = np.ones(c)
    elif kind is K.SWISH_FIXED:
        fixed["beta"] = 1.0
    elif kind is K.SWISH_LEARNABLE:
        learn["beta"] = one(1.0)
    elif kind is K.MISH_LEARNABLE:
        learn["alpha"] = one(1.0)
    elif kind is K.SRS:
        learn = {"alpha": one(2.0), "beta": one(3.0)}
    elif kind is K.SOFT_LEARNABLE_FIXED_BETA:
        learn["alpha"] = one(1.0)
        fixed["beta"] = 1.0
    elif kind is K.SOFT_LEARNABLE_LEARNABLE_BETA:
        learn = {"alpha": one(1.0), "beta": one(1.0)}
    return ActivationParams(kind, max_input, c, learn, fixed)


# -- per-kind math ------------------------------------------------------------
# Each returns (y, dy/dx, {name: dy/dtheta}) for the elements of x; the param
# dict is only built when ``want_params`` is set.  Multi-coefficient params
# return a list of per-coefficient arrays (last axis of the parameter).

def _relu_like(x, neg_slope):
    pos = x >= 0
    return np.where(pos, x, neg_slope * x), np.where(pos, 1.0, neg_slope)


def _srs_parts(x, alpha, beta):
    u = np.exp(-np.abs(x) / beta)
    neg = x < 0
    d_pos = x / alpha + u
    n_neg = x * u / alpha + 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_d = np.where(neg, u / np.where(neg, n_neg, 1.0), 1.0 / np.where(neg, 1.0, d_pos))
        e_over_d2 = np.where(neg, u / np.where(neg, n_neg, 1.0) ** 2, u / np.where(neg, 1.0, d_pos) ** 2)
    return inv_d, e_over_d2


def _evaluate(p: ActivationParams, x: np.ndarray, want_params: bool):
    kind = p.kind
    L = p.learnable
    m = p.max_input
    g: dict = {}
    if kind is K.RELU:
        y = np.maximum(x, 0.0)
        dx = np.where(x >= 0, 1.0, 0.0)
    elif kind is K.LEAKY_RELU:
        y, dx = _relu_like(x, p.fixed["a"])
    elif kind is K.ELU:
        a = p.fixed["a"]
        xn = np.minimum(x, 0.0)
        pos = x >= 0
        y = np.where(pos, x, a * np.expm1(xn))
        dx = np.where(pos, 1.0, a * np.exp(xn))
    elif kind is K.PRELU:
        a = _per_channel(L["a"], x)
        y, dx = _relu_like(x, a)
        if want_params:
            g["a"] = np.where(x < 0, x, 0.0)
    elif kind is K.SRELU:
        tl, al = _per_channel(L["t_l"], x), _per_channel(L["a_l"], x)
        tr, ar = _per_channel(L["t_r"], x), _per_channel(L["a_r"], x)
        left = x < tl
        right = (x > tr) & ~left
        # written as x + (slope - 1)(x - t) so slope 1 / slope 0 at t=0 are exact
        y = np.where(left, x + (al - 1.0) * (x - tl), np.where(right, x + (ar - 1.0) * (x - tr), x))
        dx = np.where(left, al, np.where(right, ar, 1.0))
        if want_params:
            g["t_l"] = np.where(left, 1.0 - al, 0.0)
            g["a_l"] = np.where(left, x - tl, 0.0)
            g["t_r"] = np.where(right, 1.0 - ar, 0.0)
            g["a_r"] = np.where(right, x - tr, 0.0)
    elif kind is K.APLU:
        y = np.maximum(x, 0.0)
        dx = np.where(x >= 0, 1.0, 0.0)
        ga, gb = [], []
        for s in range(L["a"].shape[1]):
            a = _per_channel(L["a"][:, s], x)
            b = _per_channel(L["b"][:, s], x)
            below = x < b
            hinge = np.maximum(b - x, 0.0)
            y = y + a * hinge
            dx = dx - np.where(below, a, 0.0)
            if want_params:
                ga.append(hinge)
                gb.append(np.where(below, a, 0.0))
        if want_params:
            g["a"], g["b"] = ga, gb
    elif kind in HAT_KINDS:
        c = L["c"]
        c0 = _per_channel(c[:, 0], x)
        y, dx = _relu_like(x, c0)
        hat, slope = (gaussian_hat, _gaussian_hat_slope) if kind in GAUSSIAN_KINDS \
            else (mexican_hat, _mexican_hat_slope)
        gc = [np.where(x < 0, x, 0.0)] if want_params else None
        for j, (a, lam) in enumerate(_hat_rows(kind), start=1):
            cj = _per_channel(c[:, j], x)
            phi = hat(x, a, lam, m)
            y = y + cj * phi
            dx = dx + cj * slope(x, a, lam, m)
            if want_params:
                gc.append(phi)
        if want_params:
            g["c"] = gc
    elif kind is K.PDELU:
        a = _per_channel(L["a"], x)
        w = 1.0 - p.fixed["t"]
        pos = x > 0
        base = 1.0 + w * np.minimum(x, 0.0)
        alive = base > 0
        logb = np.log1p(w * np.where(alive, np.minimum(x, 0.0), 0.0))
        power = np.where(alive, np.exp(logb / w), 0.0)
        y = np.where(pos, x, a * (power - 1.0))
        dx = np.where(pos, 1.0, np.where(alive, a * np.exp(logb * (1.0 - w) / w), 0.0))
        if want_params:
            g["a"] = np.where(pos, 0.0, power - 1.0)
    elif kind in (K.SWISH_FIXED, K.SWISH_LEARNABLE):
        beta = _scalar(p, "beta")
        s = expit(beta * x)
        y = x * s
        ds = s * (1.0 - s)
        dx = s + beta * x * ds
        if want_params and kind is K.SWISH_LEARNABLE:
            g["beta"] = x * x * ds
    elif kind is K.MISH_LEARNABLE:
        alpha = _scalar(p, "alpha")
        z = alpha * x
        th = np.tanh(np.logaddexp(0.0, z))
        inner = (1.0 - th * th) * expit(z)
        y = x * th
        dx = th + x * inner * alpha
        if want_params:
            g["alpha"] = x * x * inner
    elif kind is K.SRS:
        alpha, beta = _scalar(p, "alpha"), _scalar(p, "beta")
        inv_d, e_over_d2 = _srs_parts(x, alpha, beta)
        y = x * inv_d
        dx = e_over_d2 * (1.0 + x / beta)
        if want_params:
            g["alpha"] = (y / alpha) ** 2
            g["beta"] = -(x * x) * e_over_d2 / (beta * beta)
    elif kind in (K.SOFT_LEARNABLE_FIXED_BETA, K.SOFT_LEARNABLE_LEARNABLE_BETA):
        alpha, beta = _scalar(p, "alpha"), _scalar(p, "beta")
        pos = x > 0
        z = beta * np.minimum(x, 0.0)
        soft = np.logaddexp(0.0, z) - LN2
        s = expit(z)
        y = np.where(pos, x, alpha * soft)
        dx = np.where(pos, 1.0, alpha * beta * s)
        if want_params:
            g["alpha"] = np.where(pos, 0.0, soft)
            if kind is K.SOFT_LEARNABLE_LEARNABLE_BETA:
                g["beta"] = np.where(pos, 0.0, alpha * np.minimum(x, 0.0) * s)
    else:  # pragma: no cover - enum is exhaustive
        raise ConfigurationError(f"unhandled activation kind {kind}")
    return y, dx, g


# -- public API ---------------------------------------------------------------

def act_forward(params: ActivationParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_channels(params, x)
    return np.asarray(_evaluate(params, x, False)[0], dtype=np.float64)


def act_backward_input(params: ActivationParams, x, upstream) -> np.ndarray:
    """``upstream * dy/dx``."""
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape != upstream.shape:
        raise DimensionError(f"x {x.shape} and upstream {upstream.shape} differ")
    _check_channels(params, x)
    return upstream * _evaluate(params, x, False)[1]


def act_forward_backward(params: ActivationParams, x, upstream):
    """Input gradient and parameter gradients in one evaluation."""
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape != upstream.shape:
        raise DimensionError(f"x {x.shape} and upstream {upstream.shape} differ")
    _check_channels(params, x)
    _, dx, local = _evaluate(params, x, bool(params.learnable))
    return upstream * dx, _reduce_param_grads(params, x, upstream, local)


def _reduce_param_grads(params, x, upstream, local) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for name, value in params.learnable.items():
        d = local[name]
        if isinstance(d, list):
            cols = [_channel_sum(upstream * dj, x) if params.kind in PER_CHANNEL
                    else np.array([np.sum(upstream * dj)]) for dj in d]
            out[name] = np.stack(cols, axis=1).reshape(value.shape)
        elif params.kind in PER_CHANNEL:
            out[name] = _channel_sum(upstream * d, x).reshape(value.shape)
        else:
            out[name] = np.array([np.sum(upstream * d)])
    return out


def act_backward_params(params: ActivationParams, x, upstream) -> dict[str, np.ndarray]:
    """Sum of ``upstream * dy/dtheta`` for every learnable parameter.

    Kinds without learnable parameters return an empty dict.
    """
    if not params.learnable:
        return {}
    return act_forward_backward(params, x, upstream)[1]


def act_penalty(params: ActivationParams) -> tuple[float, dict[str, np.ndarray]]:
    """Regularisation term added to the loss and its parameter gradient."""
    if params.kind is K.APLU:
        a = params.learnable["a"]
        return APLU_PENALTY * float(np.sum(a * a)), {"a": 2.0 * APLU_PENALTY * a}
    return 0.0, {}


def apply_constraints(params: ActivationParams) -> tuple[ActivationParams, float]:
    """Project parameters back onto their feasible set (in place).

    Returns the params and the current penalty value.
    """
    L = params.learnable
    if params.kind is K.SRS:
        np.maximum(L["alpha"], EPS, out=L["alpha"])
        np.clip(L["beta"], EPS, SRS_MAX_RATIO * L["alpha"], out=L["beta"])
    elif params.kind in (K.SOFT_LEARNABLE_FIXED_BETA, K.SOFT_LEARNABLE_LEARNABLE_BETA):
        for name in L:
            np.maximum(L[name], EPS, out=L[name])
    elif params.kind is K.SRELU:
        crossed = L["t_l"] > L["t_r"]
        if crossed.any():
            mid = 0.5 * (L["t_l"] + L["t_r"])
            L["t_l"][crossed] = mid[crossed]
            L["t_r"][crossed] = mid[crossed]
    return params, act_penalty(params)[0]


def kink_points(params: ActivationParams) -> np.ndarray:
    """Non-differentiable input locations, shape ``(C, m)`` (``C=1`` for layer-wide kinds)."""
    kind, L, m = params.kind, params.learnable, params.max_input
    c = params.channels if kind in PER_CHANNEL else 1
    pts: list[np.ndarray] = []
    const = lambda v: np.full(c, float(v))  # noqa: E731
    if kind in (K.RELU, K.LEAKY_RELU, K.ELU, K.PRELU, K.SOFT_LEARNABLE_FIXED_BETA,
                K.SOFT_LEARNABLE_LEARNABLE_BETA):
        pts.append(const(0.0))
    elif kind is K.SRELU:
        pts += [L["t_l"], L["t_r"]]
    elif kind is K.APLU:
        pts.append(const(0.0))
        pts += [L["b"][:, s] for s in range(L["b"].shape[1])]
    elif kind in HAT_KINDS:
        pts.append(const(0.0))
        for a, lam in _hat_rows(kind):
            offsets = (0.0, -lam, lam)
            if kind in GAUSSIAN_KINDS:
                offsets += (2 * lam, 3 * lam)
            pts += [const((a + o) * m) for o in offsets]
    elif kind is K.PDELU:
        pts += [const(0.0), const(-1.0 / (1.0 - params.fixed["t"]))]
    if not pts:
        return np.zeros((c, 0))
    return np.stack([np.asarray(p, dtype=np.float64).reshape(c) for p in pts], axis=1)


def distance_to_kinks(params: ActivationParams, x: np.ndarray) -> np.ndarray:
    """Elementwise distance from ``x`` to the nearest kink of its channel."""
    x = np.asarray(x, dtype=np.float64)
    k = kink_points(params)
    if k.shape[1] == 0:
        return np.full(x.shape, np.inf)
    if x.ndim <= 1 or k.shape[0] == 1:
        return np.min(np.abs(x[..., None] - k[0]), axis=-1)
    shape = [1] * x.ndim + [k.shape[1]]
    shape[1] = k.shape[0]
    return np.min(np.abs(x[..., None] - k.reshape(shape)), axis=-1)


ALL_KINDS = tuple(ActivationKind)

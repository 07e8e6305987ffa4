"""Dense numeric substrate: products, convolution, softmax/loss, seeds, gradient oracle.

Tensors are plain float64 ``numpy.ndarray`` objects in C (row-major) order.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError

Tensor = np.ndarray

PROB_FLOOR = 1e-12


def as_tensor(x) -> Tensor:
    return np.ascontiguousarray(x, dtype=np.float64)


# -- randomness ---------------------------------------------------------------

def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; integer draws are identical on every platform."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def derive_seed(*parts) -> int:
    """Child seed from an ordered tuple of seed/name/index parts.

    blake2b over the ``repr`` of each part, so the result does not depend on
    Python's per-process string hash randomisation.
    """
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        b = repr(p).encode("utf-8")
        h.update(struct.pack("<Q", len(b)))
        h.update(b)
    return struct.unpack("<Q", h.digest())[0]


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _check_conv(x: Tensor, k: Tensor, stride: int, padding: int) -> None:
    if x.ndim != 4 or k.ndim != 4:
        raise DimensionError(f"conv2d expects NCHW input and OIHW kernels, got {x.shape}, {k.shape}")
    if x.shape[1] != k.shape[1]:
        raise DimensionError(f"input has {x.shape[1]} channels but kernels expect {k.shape[1]}")
    if stride < 1 or padding < 0:
        raise DimensionError(f"invalid stride={stride} / padding={padding}")
    if k.shape[2] > x.shape[2] + 2 * padding or k.shape[3] > x.shape[3] + 2 * padding:
        raise DimensionError(f"kernel {k.shape[2:]} larger than padded input {x.shape[2:]} (p={padding})")


def im2col(x: Tensor, kh: int, kw: int, stride: int, padding: int) -> Tensor:
    """Patches of ``x`` as rows: shape (N*Ho*Wo, C*kh*kw)."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def col2im(cols: Tensor, x_shape, kh: int, kw: int, stride: int, padding: int) -> Tensor:
    """Adjoint of :func:`im2col` (overlapping patches are summed)."""
    n, c, h, w = x_shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    cols = cols.reshape(n, ho, wo, c, kh, kw)
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return out


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW ``x`` with OIHW ``kernels`` (no bias)."""
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    _check_conv(x, kernels, stride, padding)
    n = x.shape[0]
    o, _, kh, kw = kernels.shape
    ho = conv_output_size(x.shape[2], kh, stride, padding)
    wo = conv_output_size(x.shape[3], kw, stride, padding)
    cols = im2col(x, kh, kw, stride, padding)
    out = cols @ kernels.reshape(o, -1).T
    return np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))


def conv2d_backward(x: Tensor, kernels: Tensor, upstream: Tensor, stride: int = 1,
                    padding: int = 0, cols: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Gradients of ``sum(upstream * conv2d(x, kernels))`` w.r.t. ``x`` and ``kernels``."""
    o, c, kh, kw = kernels.shape
    if cols is None:
        cols = im2col(x, kh, kw, stride, padding)
    g = upstream.transpose(0, 2, 3, 1).reshape(-1, o)
    dk = (g.T @ cols).reshape(kernels.shape)
    dcols = g @ kernels.reshape(o, -1)
    dx = col2im(dcols, x.shape, kh, kw, stride, padding)
    return dx, dk


def conv2d_naive(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Quadruple-loop reference used as the convolution oracle."""
    x = np.asarray(x, dtype=np.float64)
    _check_conv(x, kernels, stride, padding)
    n, c, h, w = x.shape
    o, _, kh, kw = kernels.shape
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + w] = x
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for f in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ch in range(c):
                        for di in range(kh):
                            for dj in range(kw):
                                acc += xp[b, ch, i * stride + di, j * stride + dj] * kernels[f, ch, di, dj]
                    out[b, f, i, j] = acc
    return out


# -- softmax / loss -----------------------------------------------------------

def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(probs: Tensor, label: int) -> tuple[float, Tensor, bool]:
    """Negative log-likelihood of ``label``.

    Returns ``(loss, grad, clamped)`` where ``grad`` is the gradient w.r.t. the
    logits that produced ``probs`` (softmax fused: ``probs - onehot``) and
    ``clamped`` flags that ``probs[label]`` was floored at 1e-12.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.shape[-1]:
        raise DimensionError(f"label {label} out of range for {probs.shape[-1]} classes")
    p = probs[label]
    clamped = bool(p < PROB_FLOOR)
    loss = -float(np.log(max(p, PROB_FLOOR)))
    grad = probs.copy()
    grad[label] -= 1.0
    return loss, grad, clamped


def batch_cross_entropy(probs: Tensor, labels: np.ndarray) -> tuple[float, Tensor]:
    """Mean cross-entropy over a batch and its gradient w.r.t. the logits."""
    n = probs.shape[0]
    picked = np.maximum(probs[np.arange(n), labels], PROB_FLOOR)
    loss = float(-np.log(picked).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


# -- finite differences -------------------------------------------------------

def _steps(x: Tensor, h: float | None) -> Tensor:
    if h is None:
        return 1e-4 * np.maximum(1.0, np.abs(x))
    return np.full(x.shape, float(h))


def finite_diff_grad(f: Callable[[Tensor], float], x: Tensor, h: float | None = None,
                     return_kinks: bool = False, kink_tol: float = 1e-3):
    """Central-difference gradient of scalar ``f`` at ``x``.

    Default step per coordinate is ``1e-4 * max(1, |x_i|)``. With
    ``return_kinks`` also returns a boolean mask of coordinates whose left and
    right one-sided slopes disagree by more than ``kink_tol`` (relative to
    ``max(1, |slope|)``); the central estimate is meaningless there.
    """
    x = np.array(x, dtype=np.float64)
    steps = _steps(x, h)
    grad = np.zeros_like(x)
    kinks = np.zeros(x.shape, dtype=bool)
    f0 = float(f(x)) if return_kinks else 0.0
    flat, gflat, sflat, kflat = x.reshape(-1), grad.reshape(-1), steps.reshape(-1), kinks.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        hi = sflat[i]
        flat[i] = orig + hi
        fp = float(f(x))
        flat[i] = orig - hi
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * hi)
        if return_kinks:
            right = (fp - f0) / hi
            left = (f0 - fm) / hi
            kflat[i] = abs(right - left) > kink_tol * max(1.0, abs(right), abs(left))
    if return_kinks:
        return grad, kinks
    return grad


def relative_error(analytic, numeric) -> np.ndarray:
    """``|a - n| / max(1, |a|, |n|)``: relative for large values, absolute near zero."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))

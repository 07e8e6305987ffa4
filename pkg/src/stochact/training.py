"""Mini-batch SGD with momentum, flip/rescale augmentation and activation constraints."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import activations as A
from .core import derive_seed, make_rng
from .errors import ConfigurationError, TrainingError
from .model import ModelSpec, ModelState, backward_pass, build_model, forward_pass

log = logging.getLogger(__name__)


@dataclass
class AugmentConfig:
    reflect_horizontal: bool = True
    reflect_vertical: bool = True
    rescale_range: tuple[float, float] = (1.0, 2.0)


@dataclass
class TrainConfig:
    batch_size: int = 30
    max_epochs: int = 30
    learning_rate: float = 1e-4
    momentum: float = 0.9
    seed: int = 0
    augment: bool = True
    augmentation: AugmentConfig = field(default_factory=AugmentConfig)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    train_acc: float


# -- augmentation -------------------------------------------------------------

def _bilinear_axis(out_len: int, in_len: int, scaled_len: int, offset: int):
    """Source indices/weights for output positions ``offset..offset+out_len`` of a resize to ``scaled_len``."""
    pos = (np.arange(out_len) + offset + 0.5) * (in_len / scaled_len) - 0.5
    pos = np.clip(pos, 0.0, in_len - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, in_len - 1)
    return lo, hi, pos - lo


def rescale_center_crop(image: np.ndarray, factor: float) -> np.ndarray:
    """Bilinear upscale of a CHW image by ``factor`` followed by a centred crop to the original size."""
    _, h, w = image.shape
    sh, sw = max(h, int(round(h * factor))), max(w, int(round(w * factor)))
    r0, r1, rw = _bilinear_axis(h, h, sh, (sh - h) // 2)
    c0, c1, cw = _bilinear_axis(w, w, sw, (sw - w) // 2)
    top = image[:, r0, :] * (1.0 - rw)[None, :, None] + image[:, r1, :] * rw[None, :, None]
    return top[:, :, c0] * (1.0 - cw) + top[:, :, c1] * cw


def augment(image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Independent 50% flips on each axis, then random rescale + centre crop."""
    out = image
    flip_h, flip_v = rng.random() < 0.5, rng.random() < 0.5
    factor = rng.uniform(*cfg.rescale_range)
    if cfg.reflect_horizontal and flip_h:
        out = out[:, :, ::-1]
    if cfg.reflect_vertical and flip_v:
        out = out[:, ::-1, :]
    if factor != 1.0:
        out = rescale_center_crop(out, factor)
    return np.ascontiguousarray(out)


# -- training loop ------------------------------------------------------------

def _check_finite(state: ModelState, step: int) -> None:
    for name, arr in state.tensors().items():
        if not np.all(np.isfinite(arr)):
            raise TrainingError(f"non-finite values in {name} after step {step}")


def _first_bad_layer(state: ModelState, cache) -> str:
    outputs = cache.inputs[1:] + [cache.probs]
    for i, out in enumerate(outputs):
        if not np.all(np.isfinite(out)):
            return f"first non-finite output at layer {i} ({type(state.spec.layers[i]).__name__})"
    return "all layer outputs finite; loss itself overflowed"


def _sgd_step(state: ModelState, grads, velocity: dict, cfg: TrainConfig) -> None:
    flat = grads.flat()
    for name, param in state.tensors().items():
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(param)
        v *= cfg.momentum
        v -= cfg.learning_rate * flat[name]
        param += v
    for p in state.act_params.values():
        A.apply_constraints(p)
    state.bump()


def train_model(spec: ModelSpec, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
                state: ModelState | None = None) -> tuple[ModelState, list[EpochStats]]:
    """Train ``spec`` on ``(x, y)``; returns the final state and per-epoch statistics."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ConfigurationError("empty training set")
    if len(x) != len(y):
        raise ConfigurationError(f"{len(x)} samples but {len(y)} labels")
    if y.min() < 0 or y.max() >= spec.n_classes:
        raise ConfigurationError(f"labels must lie in [0, {spec.n_classes})")
    if state is None:
        state = build_model(spec, make_rng(derive_seed(cfg.seed, "init")))
    can_augment = cfg.augment and x.ndim == 4
    velocity: dict[str, np.ndarray] = {}
    history: list[EpochStats] = []
    step = 0
    n = len(x)
    for epoch in range(cfg.max_epochs):
        rng = make_rng(derive_seed(cfg.seed, "epoch", epoch))
        order = rng.permutation(n)
        losses, correct = [], 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = x[idx]
            if can_augment:
                xb = np.stack([augment(img, cfg.augmentation, rng) for img in xb])
            probs, cache = forward_pass(state, xb)
            grads = backward_pass(state, cache, y[idx])
            if not np.isfinite(grads.loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, step {step}: "
                                    f"{_first_bad_layer(state, cache)}")
            losses.append(grads.loss * len(idx))
            correct += int(np.sum(probs.argmax(axis=1) == y[idx]))
            _sgd_step(state, grads, velocity, cfg)
            _check_finite(state, step)
            step += 1
        history.append(EpochStats(epoch + 1, float(np.sum(losses) / n), correct / n))
        log.debug("epoch %d loss %.4f acc %.3f", epoch + 1, history[-1].mean_loss, history[-1].train_acc)
    return state, history


def write_loss_curve(history: list[EpochStats], path) -> None:
    lines = ["epoch,mean_loss,train_acc"]
    lines += [f"{h.epoch},{h.mean_loss!r},{h.train_acc!r}" for h in history]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")

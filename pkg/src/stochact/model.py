"""Small CNN backbone with addressable activation slots and manual backprop."""

from __future__ import annotations

import dataclasses
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from . import activations as A
from .core import batch_cross_entropy, conv2d_backward, conv_output_size, im2col, make_rng, softmax
from .errors import ConfigurationError, ContractError, DimensionError, IncompatibleFormatError

# -- layer descriptors --------------------------------------------------------


@dataclass(frozen=True)
class Conv:
    filters: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1


@dataclass(frozen=True)
class Dense:
    units: int


@dataclass(frozen=True)
class MaxPool:
    size: int = 2


@dataclass(frozen=True)
class GlobalAvgPool:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Act:
    """Activation slot; ``kind``/``max_input`` select what is installed."""
    kind: str = "relu"
    max_input: float = 1.0

    @property
    def ident(self) -> str:
        return A.activation_id(self.kind, self.max_input)


@dataclass(frozen=True)
class Softmax:
    pass


Layer = Union[Conv, Dense, MaxPool, GlobalAvgPool, Flatten, Act, Softmax]
LAYER_TYPES = {cls.__name__.lower(): cls for cls in (Conv, Dense, MaxPool, GlobalAvgPool, Flatten, Act, Softmax)}


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple[int, ...]
    n_classes: int
    layers: tuple[Layer, ...]

    def to_text(self) -> str:
        """Canonical JSON text (sorted keys, no whitespace)."""
        layers = []
        for layer in self.layers:
            d = {"type": type(layer).__name__.lower(), **dataclasses.asdict(layer)}
            if isinstance(layer, Act):
                d["max_input"] = float(layer.max_input)
            layers.append(d)
        doc = {"input_shape": list(self.input_shape), "n_classes": self.n_classes, "layers": layers}
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_text(cls, text: str) -> "ModelSpec":
        doc = json.loads(text)
        layers = []
        for d in doc["layers"]:
            d = dict(d)
            layers.append(LAYER_TYPES[d.pop("type")](**d))
        return cls(tuple(doc["input_shape"]), int(doc["n_classes"]), tuple(layers))

    def with_slots(self, assignment: dict[int, Act]) -> "ModelSpec":
        """Copy with the given slot indices replaced."""
        slots = list_activation_slots(self)
        layers = list(self.layers)
        for slot, act in assignment.items():
            layers[slots[slot]] = act
        return dataclasses.replace(self, layers=tuple(layers))


def list_activation_slots(spec: ModelSpec) -> list[int]:
    """Layer positions of the activation slots; slot ``i`` is ``layers[result[i]]``."""
    return [i for i, layer in enumerate(spec.layers) if isinstance(layer, Act)]


def slot_kinds(spec: ModelSpec) -> list[str]:
    return [spec.layers[i].ident for i in list_activation_slots(spec)]


def mini_convnet(input_shape=(1, 32, 32), n_classes: int = 10, widths=(8, 16), hidden: int = 64,
                 kind: str = "relu", max_input: float = 1.0, padding: int = 1) -> ModelSpec:
    """conv -> slot -> maxpool, repeated per width, then flatten -> dense -> slot -> dense -> softmax."""
    layers: list[Layer] = []
    for w in widths:
        layers += [Conv(w, 3, 1, padding), Act(kind, max_input), MaxPool(2)]
    layers += [Flatten(), Dense(hidden), Act(kind, max_input), Dense(n_classes), Softmax()]
    return ModelSpec(tuple(input_shape), n_classes, tuple(layers))


def infer_shapes(spec: ModelSpec) -> list[tuple[int, ...]]:
    """Per-sample output shape after every layer; raises on a broken spec."""
    if spec.n_classes < 2:
        raise ConfigurationError("need at least two classes")
    if not spec.layers or not isinstance(spec.layers[-1], Softmax):
        raise ConfigurationError("spec must end with a softmax layer")
    if sum(isinstance(layer, Softmax) for layer in spec.layers) != 1:
        raise ConfigurationError("spec must contain exactly one softmax layer")
    shape = tuple(spec.input_shape)
    out = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            if len(shape) != 3:
                raise ConfigurationError(f"layer {i}: conv needs CHW input, got {shape}")
            c, h, w = shape
            ho = conv_output_size(h, layer.kernel, layer.stride, layer.padding)
            wo = conv_output_size(w, layer.kernel, layer.stride, layer.padding)
            if ho < 1 or wo < 1:
                raise ConfigurationError(f"layer {i}: kernel larger than padded input {shape}")
            shape = (layer.filters, ho, wo)
        elif isinstance(layer, MaxPool):
            if len(shape) != 3 or shape[1] < layer.size or shape[2] < layer.size:
                raise ConfigurationError(f"layer {i}: cannot pool {shape}")
            shape = (shape[0], shape[1] // layer.size, shape[2] // layer.size)
        elif isinstance(layer, GlobalAvgPool):
            if len(shape) != 3:
                raise ConfigurationError(f"layer {i}: global pooling needs CHW input")
            shape = (shape[0],)
        elif isinstance(layer, Flatten):
            shape = (int(np.prod(shape)),)
        elif isinstance(layer, Dense):
            if len(shape) != 1:
                raise ConfigurationError(f"layer {i}: dense needs flat input, got {shape}")
            shape = (layer.units,)
        elif isinstance(layer, Act):
            A.parse_activation_id(layer.ident)
        elif isinstance(layer, Softmax):
            if shape != (spec.n_classes,):
                raise ConfigurationError(f"softmax input {shape} does not match {spec.n_classes} classes")
        else:
            raise ConfigurationError(f"layer {i}: unknown layer {layer!r}")
        out.append(shape)
    return out


# -- state --------------------------------------------------------------------


@dataclass
class ModelState:
    spec: ModelSpec
    weights: dict[str, np.ndarray]
    act_params: dict[int, A.ActivationParams]
    version: int = field(default=0, compare=False)

    def tensors(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of every trainable tensor."""
        out = dict(self.weights)
        for slot, p in self.act_params.items():
            for name, v in p.learnable.items():
                out[f"slot{slot}.{name}"] = v
        return out

    def copy(self) -> "ModelState":
        return ModelState(self.spec, {k: v.copy() for k, v in self.weights.items()},
                          {s: p.copy() for s, p in self.act_params.items()}, self.version)

    def bump(self) -> None:
        self.version += 1


def build_model(spec: ModelSpec, rng: np.random.Generator) -> ModelState:
    """He-initialised weights (zero biases) and freshly initialised activation slots."""
    shapes = infer_shapes(spec)
    weights: dict[str, np.ndarray] = {}
    acts: dict[int, A.ActivationParams] = {}
    prev = tuple(spec.input_shape)
    slot = 0
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            fan_in = prev[0] * layer.kernel * layer.kernel
            weights[f"{i}.W"] = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                           (layer.filters, prev[0], layer.kernel, layer.kernel))
            weights[f"{i}.b"] = np.zeros(layer.filters)
        elif isinstance(layer, Dense):
            weights[f"{i}.W"] = rng.normal(0.0, np.sqrt(2.0 / prev[0]), (prev[0], layer.units))
            weights[f"{i}.b"] = np.zeros(layer.units)
        elif isinstance(layer, Act):
            kind, m = A.parse_activation_id(layer.ident)
            acts[slot] = A.act_init(kind, m, prev[0], rng)
            slot += 1
        prev = shapes[i]
    return ModelState(spec, weights, acts)


# -- forward / backward -------------------------------------------------------


@dataclass
class Cache:
    version: int
    state_id: int
    inputs: list  # per layer: input tensor (plus im2col/pool routing where needed)
    extras: list
    probs: np.ndarray


@dataclass
class Gradients:
    weights: dict[str, np.ndarray]
    act: dict[int, dict[str, np.ndarray]]
    slot_upstream: dict[int, np.ndarray]
    loss: float
    penalty: float

    def flat(self) -> dict[str, np.ndarray]:
        out = dict(self.weights)
        for slot, g in self.act.items():
            for name, v in g.items():
                out[f"slot{slot}.{name}"] = v
        return out


def _maxpool_forward(x, s):
    n, c, h, w = x.shape
    ho, wo = h // s, w // s
    xc = x[:, :, :ho * s, :wo * s].reshape(n, c, ho, s, wo, s).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, s * s)
    arg = xc.argmax(axis=-1)
    return np.take_along_axis(xc, arg[..., None], axis=-1)[..., 0], arg


def _maxpool_backward(g, arg, x_shape, s):
    n, c, h, w = x_shape
    ho, wo = g.shape[2], g.shape[3]
    routed = np.zeros((n, c, ho, wo, s * s))
    np.put_along_axis(routed, arg[..., None], g[..., None], axis=-1)
    routed = routed.reshape(n, c, ho, wo, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * s, wo * s)
    dx = np.zeros(x_shape)
    dx[:, :, :ho * s, :wo * s] = routed
    return dx


def forward_pass(state: ModelState, x: np.ndarray) -> tuple[np.ndarray, Cache]:
    """Class probabilities for a batch ``x`` of shape ``(N, *input_shape)``."""
    x = np.asarray(x, dtype=np.float64)
    spec = state.spec
    if x.shape[1:] != tuple(spec.input_shape):
        raise DimensionError(f"expected batch of {tuple(spec.input_shape)}, got {x.shape[1:]}")
    inputs, extras = [], []
    slot = 0
    h = x
    for i, layer in enumerate(spec.layers):
        inputs.append(h)
        extra = None
        if isinstance(layer, Conv):
            W, b = state.weights[f"{i}.W"], state.weights[f"{i}.b"]
            o, _, kh, kw = W.shape
            cols = im2col(h, kh, kw, layer.stride, layer.padding)
            ho = conv_output_size(h.shape[2], kh, layer.stride, layer.padding)
            wo = conv_output_size(h.shape[3], kw, layer.stride, layer.padding)
            out = cols @ W.reshape(o, -1).T + b
            h = np.ascontiguousarray(out.reshape(h.shape[0], ho, wo, o).transpose(0, 3, 1, 2))
            extra = cols
        elif isinstance(layer, Dense):
            h = h @ state.weights[f"{i}.W"] + state.weights[f"{i}.b"]
        elif isinstance(layer, MaxPool):
            h, extra = _maxpool_forward(h, layer.size)
        elif isinstance(layer, GlobalAvgPool):
            h = h.mean(axis=(2, 3))
        elif isinstance(layer, Flatten):
            h = h.reshape(h.shape[0], -1)
        elif isinstance(layer, Act):
            h = A.act_forward(state.act_params[slot], h)
            extra = slot
            slot += 1
        elif isinstance(layer, Softmax):
            h = softmax(h, axis=-1)
        extras.append(extra)
    return h, Cache(state.version, id(state), inputs, extras, h)


def loss_penalty(state: ModelState) -> float:
    return sum(A.act_penalty(p)[0] for p in state.act_params.values())


def backward_pass(state: ModelState, cache: Cache, labels) -> Gradients:
    """Gradients of mean cross-entropy plus activation penalties."""
    if cache.version != state.version or cache.state_id != id(state):
        raise ContractError("cache was produced by a different or since-updated model state")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (cache.probs.shape[0],):
        raise DimensionError(f"{labels.shape[0]} labels for a batch of {cache.probs.shape[0]}")
    loss, g = batch_cross_entropy(cache.probs, labels)
    wgrads: dict[str, np.ndarray] = {}
    agrads: dict[int, dict[str, np.ndarray]] = {}
    upstreams: dict[int, np.ndarray] = {}
    layers = state.spec.layers
    # softmax is fused with the loss: g already holds dL/dlogits
    for i in range(len(layers) - 2, -1, -1):
        layer, x, extra = layers[i], cache.inputs[i], cache.extras[i]
        if isinstance(layer, Conv):
            W = state.weights[f"{i}.W"]
            wgrads[f"{i}.b"] = g.sum(axis=(0, 2, 3))
            g, wgrads[f"{i}.W"] = conv2d_backward(x, W, g, layer.stride, layer.padding, cols=extra)
        elif isinstance(layer, Dense):
            W = state.weights[f"{i}.W"]
            wgrads[f"{i}.W"] = x.T @ g
            wgrads[f"{i}.b"] = g.sum(axis=0)
            g = g @ W.T
        elif isinstance(layer, MaxPool):
            g = _maxpool_backward(g, extra, x.shape, layer.size)
        elif isinstance(layer, GlobalAvgPool):
            hw = x.shape[2] * x.shape[3]
            g = np.broadcast_to(g[:, :, None, None] / hw, x.shape).copy()
        elif isinstance(layer, Flatten):
            g = g.reshape(x.shape)
        elif isinstance(layer, Act):
            upstreams[extra] = g
            g, agrads[extra] = A.act_forward_backward(state.act_params[extra], x, g)
    penalty = 0.0
    for slot, p in state.act_params.items():
        value, pg = A.act_penalty(p)
        penalty += value
        for name, v in pg.items():
            agrads[slot][name] = agrads[slot][name] + v
    return Gradients(wgrads, agrads, upstreams, loss + penalty, penalty)


def predict_proba(state: ModelState, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    parts = [forward_pass(state, x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(parts, axis=0)


def total_loss(state: ModelState, x: np.ndarray, labels) -> float:
    probs, _ = forward_pass(state, x)
    return batch_cross_entropy(probs, np.asarray(labels))[0] + loss_penalty(state)


# -- persistence --------------------------------------------------------------

MAGIC = b"SACT"
FORMAT_VERSION = 1


def _u64(v: int) -> bytes:
    return struct.pack("<Q", v)


def save_model(state: ModelState, path) -> None:
    """Binary container: magic, version, spec text, then named f64 tensors."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    text = state.spec.to_text().encode("utf-8")
    buf.write(_u64(len(text)))
    buf.write(text)
    tensors = sorted(state.tensors().items())
    buf.write(_u64(len(tensors)))
    for name, arr in tensors:
        nb = name.encode("utf-8")
        buf.write(_u64(len(nb)))
        buf.write(nb)
        buf.write(_u64(arr.ndim))
        for d in arr.shape:
            buf.write(_u64(d))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IncompatibleFormatError(f"{self.path}: truncated model file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_model(path) -> ModelState:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MAGIC:
        raise IncompatibleFormatError(f"{path}: not a model file (bad magic)")
    version = struct.unpack("<I", r.take(4))[0]
    if version != FORMAT_VERSION:
        raise IncompatibleFormatError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    spec = ModelSpec.from_text(r.take(r.u64()).decode("utf-8"))
    tensors = {}
    for _ in range(r.u64()):
        name = r.take(r.u64()).decode("utf-8")
        shape = tuple(r.u64() for _ in range(r.u64()))
        count = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(r.data):
        raise IncompatibleFormatError(f"{path}: trailing bytes after last tensor")
    # rebuild the skeleton (fixed activation params), then overwrite every tensor
    state = build_model(spec, make_rng(0))
    expected = state.tensors()
    if set(expected) != set(tensors):
        raise IncompatibleFormatError(f"{path}: tensor set does not match the stored spec")
    for name, arr in tensors.items():
        if arr.shape != expected[name].shape:
            raise IncompatibleFormatError(f"{path}: tensor {name} has shape {arr.shape}")
        if name.startswith("slot"):
            slot, pname = name[4:].split(".", 1)
            state.act_params[int(slot)].learnable[pname] = arr
        else:
            state.weights[name] = arr
    return state


def persist_roundtrip(state: ModelState, path) -> ModelState:
    save_model(state, path)
    return load_model(path)

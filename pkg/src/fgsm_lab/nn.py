"""Sequential networks with explicit per-layer backward rules.

A :class:`Network` is an ordered list of layer specs plus their parameters.
``forward`` caches what each layer needs in a :class:`ForwardTrace`; ``backward``
walks the trace in reverse and returns gradients for every parameter *and* for
the input image, which is what the attacks consume.

The network must end in a softmax (a ``Softmax`` layer or a ``Dense`` with
``activation="softmax"``); the loss is always categorical cross-entropy, so
the gradient entering the logits is ``probs - onehot(label)``.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, asdict
from importlib import resources
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import tensor as T
from .errors import (
    ArgumentError,
    BadMagicError,
    FormatError,
    ShapeError,
    StateError,
    TruncatedError,
    VersionMismatchError,
)
from .rng import Rng

ACTIVATIONS = ("linear", "relu", "softmax")
PROB_FLOOR = 1e-7


# --------------------------------------------------------------------------
# layer specs


@dataclass(frozen=True)
class Conv2D:
    filters: int
    size: int = 3
    stride: int = 1
    padding: str = "same"
    activation: str = "linear"
    kind: str = field(default="conv2d", init=False)


@dataclass(frozen=True)
class MaxPool:
    size: int = 2
    stride: int = 2
    kind: str = field(default="maxpool", init=False)


@dataclass(frozen=True)
class Flatten:
    kind: str = field(default="flatten", init=False)


@dataclass(frozen=True)
class Dense:
    units: int
    activation: str = "linear"
    kind: str = field(default="dense", init=False)


@dataclass(frozen=True)
class ReLU:
    kind: str = field(default="relu", init=False)


@dataclass(frozen=True)
class Dropout:
    rate: float = 0.5
    kind: str = field(default="dropout", init=False)


@dataclass(frozen=True)
class Softmax:
    kind: str = field(default="softmax", init=False)


LayerSpec = Union[Conv2D, MaxPool, Flatten, Dense, ReLU, Dropout, Softmax]
_KINDS = {
    "conv2d": Conv2D,
    "maxpool": MaxPool,
    "flatten": Flatten,
    "dense": Dense,
    "relu": ReLU,
    "dropout": Dropout,
    "softmax": Softmax,
}


def _check_spec(i: int, spec: LayerSpec) -> None:
    def bad(msg):
        raise ShapeError(f"layer {i} ({spec.kind}): {msg}")

    if isinstance(spec, Conv2D):
        if spec.filters < 1 or spec.size < 1 or spec.stride < 1:
            bad("filters, size and stride must be >= 1")
        if spec.padding not in ("same", "valid"):
            bad(f"unknown padding {spec.padding!r}")
        if spec.activation not in ("linear", "relu"):
            bad(f"unsupported activation {spec.activation!r}")
    elif isinstance(spec, MaxPool):
        if spec.size < 1 or spec.stride < 1:
            bad("size and stride must be >= 1")
    elif isinstance(spec, Dense):
        if spec.units < 1:
            bad("units must be >= 1")
        if spec.activation not in ACTIVATIONS:
            bad(f"unknown activation {spec.activation!r}")
    elif isinstance(spec, Dropout):
        if not 0.0 <= spec.rate < 1.0:
            bad(f"dropout rate must be in [0, 1), got {spec.rate}")
    elif not isinstance(spec, (Flatten, ReLU, Softmax)):
        raise ShapeError(f"layer {i}: unknown layer spec {spec!r}")


def _output_shape(i: int, spec: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    if isinstance(spec, Conv2D):
        if len(shape) != 3:
            raise ShapeError(f"layer {i} (conv2d): expects (H, W, C) input, got {shape}")
        h, w, _ = shape
        if spec.padding == "valid" and (h < spec.size or w < spec.size):
            raise ShapeError(f"layer {i} (conv2d): kernel {spec.size} larger than input {shape}")
        return (
            T.conv_output_dim(h, spec.size, spec.stride, spec.padding),
            T.conv_output_dim(w, spec.size, spec.stride, spec.padding),
            spec.filters,
        )
    if isinstance(spec, MaxPool):
        if len(shape) != 3:
            raise ShapeError(f"layer {i} (maxpool): expects (H, W, C) input, got {shape}")
        h, w, c = shape
        if h < spec.size or w < spec.size:
            raise ShapeError(f"layer {i} (maxpool): window {spec.size} larger than input {shape}")
        return ((h - spec.size) // spec.stride + 1, (w - spec.size) // spec.stride + 1, c)
    if isinstance(spec, Flatten):
        return (math.prod(shape),)
    if isinstance(spec, Dense):
        if len(shape) != 1:
            raise ShapeError(f"layer {i} (dense): expects a flat input, got {shape}; add a flatten layer")
        return (spec.units,)
    if isinstance(spec, Softmax):
        if len(shape) != 1:
            raise ShapeError(f"layer {i} (softmax): expects a flat input, got {shape}")
        return shape
    return shape


def infer_shapes(layers: Sequence[LayerSpec], input_shape: Sequence[int]) -> list[tuple[int, ...]]:
    """Shapes of the input followed by the output of each layer."""
    shape = tuple(int(d) for d in input_shape)
    if not shape or any(d < 1 for d in shape):
        raise ShapeError(f"invalid input shape {input_shape!r}")
    shapes = [shape]
    for i, spec in enumerate(layers):
        _check_spec(i, spec)
        shape = _output_shape(i, spec, shape)
        shapes.append(shape)
    return shapes


# --------------------------------------------------------------------------
# built-in configurations


def small_config(num_classes: int = 5) -> list[LayerSpec]:
    """Desk-scale backbone trained from scratch."""
    return [
        Conv2D(8, 3, 1, "same"),
        ReLU(),
        MaxPool(2, 2),
        Conv2D(16, 3, 1, "same"),
        ReLU(),
        MaxPool(2, 2),
        Flatten(),
        Dense(64),
        ReLU(),
        Dropout(0.5),
        Dense(num_classes),
        Softmax(),
    ]


def vgg16_backbone() -> list[LayerSpec]:
    """VGG16 convolutional base (13 conv + 5 pool), used for shape inference only."""
    layers: list[LayerSpec] = []
    for n_conv, filters in ((2, 64), (2, 128), (3, 256), (3, 512), (3, 512)):
        layers += [Conv2D(filters, 3, 1, "same", "relu") for _ in range(n_conv)]
        layers.append(MaxPool(2, 2))
    return layers


def vgg16_head(num_classes: int = 5) -> list[LayerSpec]:
    return [
        Flatten(),
        Dense(4096, "relu"),
        Dropout(0.5),
        Dense(4096, "relu"),
        Dropout(0.5),
        Dense(num_classes, "softmax"),
    ]


BUILTIN_CONFIGS = {
    "small": lambda k: (small_config(k), (32, 32, 3)),
    "vgg16": lambda k: (vgg16_backbone(), (224, 224, 3)),
    "vgg16_head": lambda k: (vgg16_head(k), (7, 7, 512)),
    "vgg16_full": lambda k: (vgg16_backbone() + vgg16_head(k), (224, 224, 3)),
}


# --------------------------------------------------------------------------
# JSON network config


def layer_to_dict(spec: LayerSpec) -> dict:
    d = asdict(spec)
    kind = d.pop("kind")
    return {"kind": kind, **d}


def layer_from_dict(d: dict) -> LayerSpec:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _KINDS:
        raise FormatError(f"unknown layer kind {kind!r}")
    try:
        return _KINDS[kind](**d)
    except TypeError as exc:
        raise FormatError(f"bad fields for {kind} layer: {exc}") from None


def config_schema() -> dict:
    text = resources.files("fgsm_lab.configs").joinpath("network_config.schema.json").read_text()
    return json.loads(text)


def parse_config(doc: dict, num_classes: int | None = None) -> tuple[list[LayerSpec], tuple[int, ...] | None]:
    """Validate a network config document; returns (layers, input_shape or None)."""
    import jsonschema

    try:
        jsonschema.validate(doc, config_schema())
    except jsonschema.ValidationError as exc:
        raise FormatError(f"invalid network config: {exc.message}") from None
    layers = []
    for d in doc["layers"]:
        d = dict(d)
        if d.get("units") == "classes":
            if num_classes is None:
                raise FormatError("config uses units='classes' but the class count is unknown")
            d["units"] = num_classes
        layers.append(layer_from_dict(d))
    shape = tuple(doc["input_shape"]) if "input_shape" in doc else None
    return layers, shape


def load_config(name_or_path: str, num_classes: int | None = None):
    """Resolve a built-in config name or a JSON file to (layers, input_shape)."""
    if name_or_path in BUILTIN_CONFIGS:
        return BUILTIN_CONFIGS[name_or_path](5 if num_classes is None else num_classes)
    path = Path(name_or_path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"config {path} is not valid JSON: {exc}") from None
    layers, shape = parse_config(doc, num_classes)
    return layers, shape if shape is not None else (32, 32, 3)


def dump_config(layers: Sequence[LayerSpec], input_shape: Sequence[int]) -> dict:
    return {"input_shape": list(input_shape), "layers": [layer_to_dict(s) for s in layers]}


# --------------------------------------------------------------------------
# network


class Network:
    """Layers, their parameters and the input shape they were built for.

    ``params[i]`` is ``{"kernel": ..., "bias": ...}`` for conv/dense layers
    and an empty dict for everything else.
    """

    def __init__(self, layers, input_shape, params):
        self.layers: list[LayerSpec] = list(layers)
        self.input_shape: tuple[int, ...] = tuple(input_shape)
        self.shapes = infer_shapes(self.layers, self.input_shape)
        self.params: list[dict[str, np.ndarray]] = params
        self._version = 0
        self._check_params()
        if not self.layers or not _ends_in_softmax(self.layers[-1]):
            raise ShapeError("network must end with a softmax (Softmax layer or Dense activation='softmax')")
        for i, spec in enumerate(self.layers[:-1]):
            if isinstance(spec, Softmax) or getattr(spec, "activation", None) == "softmax":
                raise ShapeError(f"layer {i}: softmax is only allowed as the final layer")

    @classmethod
    def build(cls, layers, input_shape, rng: Rng | int = 0) -> "Network":
        """Glorot-uniform kernels and zero biases drawn from ``rng``."""
        if not isinstance(rng, Rng):
            rng = Rng(rng)
        shapes = infer_shapes(layers, input_shape)
        params = []
        for spec, in_shape in zip(layers, shapes[:-1]):
            kshape = _kernel_shape(spec, in_shape)
            if kshape is None:
                params.append({})
                continue
            if isinstance(spec, Conv2D):
                rf = spec.size * spec.size
                fan_in, fan_out = rf * kshape[2], rf * kshape[3]
            else:
                fan_in, fan_out = kshape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            kernel = rng.uniform(-limit, limit, math.prod(kshape)).astype(T.DTYPE).reshape(kshape)
            params.append({"kernel": kernel, "bias": np.zeros(kshape[-1], dtype=T.DTYPE)})
        return cls(layers, input_shape, params)

    @property
    def num_classes(self) -> int:
        return self.shapes[-1][0]

    @property
    def version(self) -> int:
        return self._version

    def touch(self) -> None:
        """Mark parameters as mutated; outstanding traces become stale."""
        self._version += 1

    def copy(self) -> "Network":
        return Network(self.layers, self.input_shape, [{k: v.copy() for k, v in p.items()} for p in self.params])

    def param_arrays(self) -> list[np.ndarray]:
        return [p[k] for p in self.params for k in ("kernel", "bias") if k in p]

    def _check_params(self) -> None:
        if len(self.params) != len(self.layers):
            raise ShapeError(f"{len(self.params)} parameter groups for {len(self.layers)} layers")
        for i, (spec, in_shape, p) in enumerate(zip(self.layers, self.shapes[:-1], self.params)):
            kshape = _kernel_shape(spec, in_shape)
            if kshape is None:
                if p:
                    raise ShapeError(f"layer {i} ({spec.kind}) takes no parameters")
                continue
            if set(p) != {"kernel", "bias"}:
                raise ShapeError(f"layer {i} ({spec.kind}) needs kernel and bias")
            if p["kernel"].shape != kshape or p["bias"].shape != (kshape[-1],):
                raise ShapeError(
                    f"layer {i} ({spec.kind}): parameter shapes {p['kernel'].shape}/{p['bias'].shape}, "
                    f"expected {kshape}/{(kshape[-1],)}"
                )
            for k in ("kernel", "bias"):
                p[k] = T.as_tensor(p[k])
                if not np.all(np.isfinite(p[k])):
                    raise ShapeError(f"layer {i} ({spec.kind}): non-finite {k}")

    def __repr__(self):
        kinds = ", ".join(s.kind for s in self.layers)
        return f"Network(input={self.input_shape}, layers=[{kinds}])"


def _ends_in_softmax(spec: LayerSpec) -> bool:
    return isinstance(spec, Softmax) or (isinstance(spec, Dense) and spec.activation == "softmax")


def _kernel_shape(spec: LayerSpec, in_shape) -> tuple[int, ...] | None:
    if isinstance(spec, Conv2D):
        return (spec.size, spec.size, in_shape[2], spec.filters)
    if isinstance(spec, Dense):
        return (in_shape[0], spec.units)
    return None


# --------------------------------------------------------------------------
# forward / backward


def softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with max-subtraction."""
    z = np.asarray(logits)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, label: int) -> float:
    probs = np.asarray(probs)
    if not 0 <= label < probs.shape[-1]:
        raise ArgumentError(f"label {label} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(float(probs[label]), PROB_FLOOR)))


def cross_entropy_batch(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    k = probs.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ArgumentError(f"labels out of range for {k} classes")
    p = probs[np.arange(len(labels)), labels]
    return -np.log(np.maximum(p.astype(np.float64), PROB_FLOOR))


@dataclass
class ForwardTrace:
    """Per-layer caches from one forward pass. Consumed by a single backward."""

    inputs: list[np.ndarray]
    pre: list[np.ndarray | None]
    masks: list[np.ndarray | None]
    probs: np.ndarray
    batched: bool
    net_id: int
    net_version: int
    used: bool = False


def forward_batch(net: Network, x: np.ndarray, mode: str = "eval", rng: Rng | None = None):
    """Forward a batch (N, *input_shape). Returns (probs (N, K), trace)."""
    if mode not in ("train", "eval"):
        raise ArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x)
    if x.dtype.kind != "f":
        x = x.astype(T.DTYPE)
    if tuple(x.shape[1:]) != net.input_shape:
        raise ShapeError(f"input batch {x.shape} does not match network input {net.input_shape}")
    if mode == "train" and rng is None and any(isinstance(s, Dropout) and s.rate > 0 for s in net.layers):
        raise ArgumentError("train mode with dropout needs an rng")
    h, inputs, pre, masks = _run_layers(net, x, 0, mode, rng)
    trace = ForwardTrace(inputs, pre, masks, h, True, id(net), net.version)
    return h, trace


def _run_layers(net: Network, h: np.ndarray, start: int, mode: str, rng: Rng | None):
    inputs, pre, masks = [], [], []
    for spec, p in zip(net.layers[start:], net.params[start:]):
        inputs.append(h)
        z = None
        mask = None
        if isinstance(spec, Conv2D):
            z = T.conv2d(h, p["kernel"].astype(h.dtype, copy=False), p["bias"].astype(h.dtype, copy=False),
                         spec.stride, spec.padding)
            h = _activate(z, spec.activation)
        elif isinstance(spec, Dense):
            z = h @ p["kernel"].astype(h.dtype, copy=False) + p["bias"].astype(h.dtype, copy=False)
            h = _activate(z, spec.activation)
        elif isinstance(spec, MaxPool):
            h = T.maxpool2d(h, spec.size, spec.stride)
        elif isinstance(spec, Flatten):
            h = h.reshape(h.shape[0], -1)
        elif isinstance(spec, ReLU):
            z = h
            h = np.maximum(h, 0)
        elif isinstance(spec, Dropout):
            if mode == "train" and spec.rate > 0:
                keep = rng.random(h.size).reshape(h.shape) >= spec.rate
                mask = keep.astype(h.dtype) * h.dtype.type(1.0 / (1.0 - spec.rate))
                h = h * mask
        elif isinstance(spec, Softmax):
            h = softmax(h)
        pre.append(z)
        masks.append(mask)
    return h, inputs, pre, masks


def forward_from(net: Network, h: np.ndarray, start: int):
    """Eval-mode forward of layers ``start:`` on a batch of layer-``start`` inputs.

    Returns (probs, inputs, pre) without building a trace; used by the
    finite-difference oracle to re-run only the part of the network a
    perturbation can reach.
    """
    probs, inputs, pre, _ = _run_layers(net, h, start, "eval", None)
    return probs, inputs, pre


def _activate(z, activation):
    if activation == "relu":
        return np.maximum(z, 0)
    if activation == "softmax":
        return softmax(z)
    return z


def forward(net: Network, x: np.ndarray, mode: str = "eval", rng: Rng | None = None):
    """Forward one image. Returns (probs (K,), trace)."""
    x = np.asarray(x)
    if tuple(x.shape) != net.input_shape:
        raise ShapeError(f"input {x.shape} does not match network input {net.input_shape}")
    probs, trace = forward_batch(net, x[None], mode, rng)
    trace.batched = False
    return probs[0], trace


@dataclass
class Gradients:
    param_grads: list[dict[str, np.ndarray]]
    input_grad: np.ndarray


def backward_batch(net: Network, trace: ForwardTrace, labels, reduction: str = "mean") -> Gradients:
    """Gradients of the (mean or summed) cross-entropy over the traced batch."""
    if trace.used:
        raise StateError("trace already consumed by a previous backward")
    if trace.net_id != id(net) or trace.net_version != net.version:
        raise StateError("trace was produced by a different network or before a parameter update")
    if len(trace.inputs) != len(net.layers):
        raise StateError("trace does not match network depth")
    trace.used = True
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    probs = trace.probs
    n, k = probs.shape
    if len(labels) != n:
        raise ArgumentError(f"{len(labels)} labels for a batch of {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise ArgumentError(f"labels out of range for {k} classes")

    # softmax + cross-entropy: d loss / d logits = probs - onehot
    g = probs.copy()
    g[np.arange(n), labels] -= 1
    if reduction == "mean":
        g /= n
    elif reduction != "sum":
        raise ArgumentError(f"unknown reduction {reduction!r}")

    grads: list[dict[str, np.ndarray]] = [{} for _ in net.layers]
    last = len(net.layers) - 1
    for i in range(last, -1, -1):
        spec, p = net.layers[i], net.params[i]
        x_in, z = trace.inputs[i], trace.pre[i]
        if isinstance(spec, Softmax):
            # already folded into g
            continue
        if isinstance(spec, Conv2D):
            if spec.activation == "relu":
                g = g * (z > 0)
            dx, dk, db = T.conv2d_backward(x_in, p["kernel"].astype(g.dtype, copy=False), g, spec.stride, spec.padding)
            grads[i] = {"kernel": dk.astype(p["kernel"].dtype), "bias": db.astype(p["bias"].dtype)}
            g = dx
        elif isinstance(spec, Dense):
            if spec.activation == "relu":
                g = g * (z > 0)
            # softmax activation: g is already w.r.t. logits
            grads[i] = {
                "kernel": (x_in.T @ g).astype(p["kernel"].dtype),
                "bias": g.sum(axis=0).astype(p["bias"].dtype),
            }
            g = g @ p["kernel"].astype(g.dtype, copy=False).T
        elif isinstance(spec, MaxPool):
            g = T.maxpool2d_backward(x_in, g, spec.size, spec.stride)
        elif isinstance(spec, Flatten):
            g = g.reshape(x_in.shape)
        elif isinstance(spec, ReLU):
            g = g * (z > 0)
        elif isinstance(spec, Dropout):
            if trace.masks[i] is not None:
                g = g * trace.masks[i]
    return Gradients(grads, g)


def backward(net: Network, trace: ForwardTrace, label: int) -> Gradients:
    """Exact gradients of cross_entropy(forward(x), label) for a single-image trace."""
    grads = backward_batch(net, trace, [label], reduction="sum")
    if not trace.batched:
        grads.input_grad = grads.input_grad[0]
    return grads


def predict_batch(net: Network, x: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Eval-mode probabilities for a stack of images."""
    out = []
    for s in range(0, len(x), chunk):
        probs, _ = forward_batch(net, x[s : s + chunk], "eval")
        out.append(probs)
    return np.concatenate(out) if out else np.zeros((0, net.num_classes), dtype=T.DTYPE)


def argmax(probs: np.ndarray) -> np.ndarray | int:
    """Argmax over the last axis; ties go to the lowest class index."""
    a = np.argmax(probs, axis=-1)
    return int(a) if np.ndim(a) == 0 else a


# --------------------------------------------------------------------------
# model file
#
#   b"FGSM", u32 version, u32 layer count,
#   u8 input rank, rank x u32 input dims,
#   per layer: u8 tag + tag-specific fields,
#   then kernel/bias TNSR tensors for each parametric layer in order.

MODEL_MAGIC = b"FGSM"
MODEL_VERSION = 1
_TAGS = {"conv2d": 1, "maxpool": 2, "flatten": 3, "dense": 4, "relu": 5, "dropout": 6, "softmax": 7}
_TAG_KIND = {v: k for k, v in _TAGS.items()}
_PAD = {"valid": 0, "same": 1}
_ACT = {"linear": 0, "relu": 1, "softmax": 2}


def _encode_layer(spec: LayerSpec) -> bytes:
    tag = struct.pack("<B", _TAGS[spec.kind])
    if isinstance(spec, Conv2D):
        return tag + struct.pack("<IIIBB", spec.filters, spec.size, spec.stride, _PAD[spec.padding], _ACT[spec.activation])
    if isinstance(spec, MaxPool):
        return tag + struct.pack("<II", spec.size, spec.stride)
    if isinstance(spec, Dense):
        return tag + struct.pack("<IB", spec.units, _ACT[spec.activation])
    if isinstance(spec, Dropout):
        return tag + struct.pack("<d", spec.rate)
    return tag


def save_model(net: Network, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(net.layers)))
        fh.write(struct.pack("<B", len(net.input_shape)))
        fh.write(struct.pack(f"<{len(net.input_shape)}I", *net.input_shape))
        for spec in net.layers:
            fh.write(_encode_layer(spec))
        for p in net.params:
            for key in ("kernel", "bias"):
                if key in p:
                    T.write_tensor(fh, p[key])


def _unpack(fh, fmt: str, what: str):
    size = struct.calcsize(fmt)
    buf = fh.read(size)
    if len(buf) != size:
        raise TruncatedError(f"model file truncated in {what}")
    return struct.unpack(fmt, buf)


def _decode_layer(fh, i: int) -> LayerSpec:
    (tag,) = _unpack(fh, "<B", f"layer {i} tag")
    kind = _TAG_KIND.get(tag)
    if kind is None:
        raise FormatError(f"layer {i}: unknown layer tag {tag}")
    pads = {v: k for k, v in _PAD.items()}
    acts = {v: k for k, v in _ACT.items()}
    try:
        if kind == "conv2d":
            f, s, st, pad, act = _unpack(fh, "<IIIBB", f"layer {i} record")
            return Conv2D(f, s, st, pads[pad], acts[act])
        if kind == "maxpool":
            return MaxPool(*_unpack(fh, "<II", f"layer {i} record"))
        if kind == "dense":
            units, act = _unpack(fh, "<IB", f"layer {i} record")
            return Dense(units, acts[act])
        if kind == "dropout":
            return Dropout(*_unpack(fh, "<d", f"layer {i} record"))
    except KeyError as exc:
        raise FormatError(f"layer {i}: bad enum value {exc}") from None
    return _KINDS[kind]()


def load_model(path) -> Network:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise BadMagicError(f"{path}: not a model file (magic {magic!r})")
        version, count = _unpack(fh, "<II", "header")
        if version != MODEL_VERSION:
            raise VersionMismatchError(f"{path}: model format version {version}, expected {MODEL_VERSION}")
        (rank,) = _unpack(fh, "<B", "input rank")
        if rank == 0:
            raise FormatError(f"{path}: input rank 0")
        input_shape = _unpack(fh, f"<{rank}I", "input dims")
        layers = [_decode_layer(fh, i) for i in range(count)]
        try:
            shapes = infer_shapes(layers, input_shape)
        except ShapeError as exc:
            raise FormatError(f"{path}: inconsistent layer records: {exc}") from None
        params = []
        for spec, in_shape in zip(layers, shapes[:-1]):
            if _kernel_shape(spec, in_shape) is None:
                params.append({})
                continue
            params.append({"kernel": T.read_tensor(fh), "bias": T.read_tensor(fh)})
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after parameters")
    try:
        return Network(layers, input_shape, params)
    except ShapeError as exc:
        raise FormatError(f"{path}: {exc}") from None

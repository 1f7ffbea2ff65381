"""Feed-forward networks with a decorrelation stage in front of every weighted layer.

For a weighted layer the forward pass is ``x_hat = M (x - mu)``, ``h = W x_hat``,
``x = phi(h)``.  Dense layers act on ``(features, B)`` batches.  Conv layers
act in im2col patch space, so their ``M`` is square over ``k*k*C_in`` and one
``M`` is shared by every patch of the layer.  Image batches are ``(B, C, H, W)``.
Biases are deliberately absent; the demeaning ``mu`` plays the offset role.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from .convops import cols_to_image, conv_output_size, im2col, maxpool_forward
from .decorrelation import DecorrelationState

ACTIVATIONS = ("relu", "identity")
LOSSES = ("cce", "mse")


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    activation: str = "relu"

    @property
    def fan_in(self) -> int:
        return self.in_features


@dataclass(frozen=True)
class Conv:
    kernel: int
    in_channels: int
    out_channels: int
    stride: int = 1
    padding: int = 0
    activation: str = "relu"

    @property
    def fan_in(self) -> int:
        return self.kernel * self.kernel * self.in_channels


@dataclass(frozen=True)
class MaxPool:
    window: int = 2
    stride: int = 2


LayerSpec = Union[Dense, Conv, MaxPool]


class ShapeError(ValueError):
    pass


def init_weights(spec: LayerSpec, seed) -> np.ndarray:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` weights of shape ``(out, fan_in)``."""
    rng = np.random.default_rng(seed)
    if isinstance(spec, MaxPool):
        raise ShapeError("MaxPool layers have no weights")
    out = spec.out_features if isinstance(spec, Dense) else spec.out_channels
    bound = 1.0 / np.sqrt(spec.fan_in)
    return rng.uniform(-bound, bound, size=(out, spec.fan_in))


@dataclass
class Layer:
    spec: LayerSpec
    in_shape: tuple
    out_shape: tuple
    W: np.ndarray | None = None
    decor: DecorrelationState | None = None

    @property
    def weighted(self) -> bool:
        return self.W is not None


def relu(h):
    return np.maximum(h, 0.0)


def activation_fn(name: str):
    if name == "relu":
        return relu
    if name == "identity":
        return lambda h: h
    raise ValueError(f"unknown activation {name!r}")


def activation_grad(name: str, h: np.ndarray) -> np.ndarray:
    # derivative of ReLU at 0 is taken as 0
    if name == "relu":
        return (h > 0).astype(h.dtype)
    return np.ones_like(h)


class Network:
    """Ordered layers with weights ``W`` and per-layer :class:`DecorrelationState`.

    Parameters are plain attributes and are replaced, never mutated in place,
    by the training loop.  ``input_shape`` is ``(n,)`` for dense inputs and
    ``(C, H, W)`` for images.
    """

    def __init__(self, specs: Sequence[LayerSpec], input_shape, loss: str = "cce",
                 seed: int = 0, eta_M: float = 0.0, mu_rate: float = 0.1,
                 gain_mode: str = "unit", decorrelate: bool = True):
        if loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        self.loss = loss
        self.input_shape = tuple(input_shape)
        self.decorrelate = decorrelate
        self.layers: list[Layer] = []
        shape = self.input_shape
        for i, spec in enumerate(specs):
            out_shape = self._out_shape(i, spec, shape)
            layer = Layer(spec=spec, in_shape=shape, out_shape=out_shape)
            if not isinstance(spec, MaxPool):
                if spec.activation not in ACTIVATIONS:
                    raise ValueError(f"unknown activation {spec.activation!r}")
                layer.W = init_weights(spec, [seed, i])
                layer.decor = DecorrelationState.identity(spec.fan_in, eta_M=eta_M,
                                                          mu_rate=mu_rate, gain_mode=gain_mode)
            self.layers.append(layer)
            shape = out_shape
        if not self.layers or not self.layers[-1].weighted:
            raise ShapeError("the last layer must be Dense or Conv")
        if loss == "cce" and self.layers[-1].spec.activation != "identity":
            raise ShapeError("softmax cross-entropy needs an identity output activation")

    @staticmethod
    def _out_shape(i, spec, shape):
        if isinstance(spec, Dense):
            n = int(np.prod(shape))
            if n != spec.in_features:
                raise ShapeError(
                    f"layer {i}: Dense expects {spec.in_features} inputs, previous layer gives {n}")
            return (spec.out_features,)
        if len(shape) != 3:
            raise ShapeError(f"layer {i}: {type(spec).__name__} needs a (C, H, W) input, got {shape}")
        C, H, W = shape
        if isinstance(spec, Conv):
            if C != spec.in_channels:
                raise ShapeError(f"layer {i}: Conv expects {spec.in_channels} channels, got {C}")
            oh = conv_output_size(H, spec.kernel, spec.stride, spec.padding)
            ow = conv_output_size(W, spec.kernel, spec.stride, spec.padding)
            if oh < 1 or ow < 1:
                raise ShapeError(f"layer {i}: Conv output would be {oh}x{ow}")
            return (spec.out_channels, oh, ow)
        oh = conv_output_size(H, spec.window, spec.stride, 0)
        ow = conv_output_size(W, spec.window, spec.stride, 0)
        if oh < 1 or ow < 1:
            raise ShapeError(f"layer {i}: MaxPool output would be {oh}x{ow}")
        return (C, oh, ow)

    @property
    def weighted_layers(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.weighted]

    @property
    def n_classes(self) -> int:
        return int(np.prod(self.layers[-1].out_shape))

    def weights(self) -> list[np.ndarray]:
        return [self.layers[i].W for i in self.weighted_layers]

    def weight_checksum(self) -> float:
        return float(sum(np.sum(W) + np.sum(W * W) for W in self.weights()))


@dataclass
class ForwardTrace:
    """Per-layer quantities of one forward pass, indexed like ``net.layers``.

    ``inputs`` and ``x_hat`` are in feature-column layout (patch matrices for
    conv layers); ``h`` is the pre-activation in the same column layout;
    ``outputs`` are in the layer's natural layout.
    """

    batch_size: int
    inputs: list = field(default_factory=list)
    x_hat: list = field(default_factory=list)
    h: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    pool_idx: list = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.outputs[-1]


def _as_features(x: np.ndarray) -> np.ndarray:
    if x.ndim == 4:
        return x.reshape(x.shape[0], -1).T
    return x


def _as_image(x: np.ndarray, shape) -> np.ndarray:
    if x.ndim == 4:
        return x
    return x.T.reshape((x.shape[1],) + tuple(shape))


def batch_size_of(X0: np.ndarray, net: Network) -> int:
    return X0.shape[0] if len(net.input_shape) == 3 else X0.shape[1]


def forward(net: Network, X0: np.ndarray, noise: Sequence | None = None) -> ForwardTrace:
    """Run one batch through the network without touching its parameters.

    ``X0`` is ``(n, B)`` for dense inputs or ``(B, C, H, W)`` for images.  When
    ``noise`` is given, ``noise[i]`` is added to the pre-activation of layer
    ``i`` (``None`` entries skip a layer); node perturbation uses this.
    """
    X0 = np.asarray(X0, dtype=np.float64)
    if len(net.input_shape) == 3:
        if X0.ndim != 4 or X0.shape[1:] != net.input_shape:
            raise ShapeError(f"expected images (B, {net.input_shape}), got {X0.shape}")
    elif X0.ndim != 2 or X0.shape[0] != net.input_shape[0]:
        raise ShapeError(f"expected ({net.input_shape[0]}, B) batch, got {X0.shape}")
    B = batch_size_of(X0, net)
    trace = ForwardTrace(batch_size=B)
    x = X0
    for i, layer in enumerate(net.layers):
        spec = layer.spec
        if isinstance(spec, MaxPool):
            x_img = _as_image(x, layer.in_shape)
            pooled, idx = maxpool_forward(x_img, spec.window, spec.stride)
            trace.inputs.append(x_img)
            trace.x_hat.append(None)
            trace.h.append(None)
            trace.pool_idx.append(idx)
            trace.outputs.append(pooled)
            x = pooled
            continue
        if isinstance(spec, Conv):
            inp = im2col(_as_image(x, layer.in_shape), spec.kernel, spec.stride, spec.padding)
        else:
            inp = _as_features(x)
        if net.decorrelate:
            x_hat = layer.decor.M @ (inp - layer.decor.mu[:, None])
        else:
            x_hat = inp
        h = layer.W @ x_hat
        if noise is not None and noise[i] is not None:
            h = h + noise[i]
        a = activation_fn(spec.activation)(h)
        if isinstance(spec, Conv):
            _, oh, ow = layer.out_shape
            a = cols_to_image(a, B, oh, ow)
        trace.inputs.append(inp)
        trace.x_hat.append(x_hat)
        trace.h.append(h)
        trace.pool_idx.append(None)
        trace.outputs.append(a)
        x = a
    return trace


def logits(trace: ForwardTrace) -> np.ndarray:
    """Network output as ``(classes, B)``."""
    return _as_features(trace.output)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def per_sample_loss(kind: str, out: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Loss per column: softmax cross-entropy on logits, or half squared error."""
    if kind == "cce":
        z = out - out.max(axis=0, keepdims=True)
        log_p = z - np.log(np.exp(z).sum(axis=0, keepdims=True))
        return -np.sum(Y * log_p, axis=0)
    return 0.5 * np.sum((out - Y) ** 2, axis=0)


def output_delta(net: Network, trace: ForwardTrace, Y: np.ndarray) -> np.ndarray:
    """Derivative of the per-sample loss w.r.t. the output pre-activation."""
    out = logits(trace)
    if net.loss == "cce":
        return softmax(out) - Y
    last = net.layers[-1]
    return activation_grad(last.spec.activation, trace.h[-1]) * (out - Y)


def mean_loss(net: Network, X0: np.ndarray, Y: np.ndarray) -> float:
    return float(np.mean(per_sample_loss(net.loss, logits(forward(net, X0)), Y)))


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_MAGIC = b"DCNW"
CHECKPOINT_VERSION = 1


def save_checkpoint(net: Network, path) -> None:
    """Write ``W``, ``M`` and ``mu`` of every layer to a little-endian binary file.

    Layout: ``b"DCNW"``, version u32, layer count u32, then per layer the dims
    ``rows(W) u32, cols(W) u32, n(M) u32`` followed by row-major float64
    payloads of ``W``, ``M`` and ``mu``.  Pooling layers store zero dims.
    """
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(net.layers))]
    for layer in net.layers:
        if not layer.weighted:
            parts.append(struct.pack("<III", 0, 0, 0))
            continue
        r, c = layer.W.shape
        n = layer.decor.n
        parts.append(struct.pack("<III", r, c, n))
        for arr in (layer.W, layer.decor.M, layer.decor.mu):
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(net: Network, path) -> Network:
    """Fill ``net`` (built from the same architecture) with saved parameters."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    if count != len(net.layers):
        raise ShapeError(f"checkpoint has {count} layers, network has {len(net.layers)}")
    off = 12
    for i, layer in enumerate(net.layers):
        r, c, n = struct.unpack_from("<III", buf, off)
        off += 12
        if not layer.weighted:
            if (r, c, n) != (0, 0, 0):
                raise ShapeError(f"layer {i}: checkpoint stores weights for a pooling layer")
            continue
        if (r, c) != layer.W.shape or n != layer.decor.n:
            raise ShapeError(f"layer {i}: checkpoint dims {(r, c, n)} do not match network")
        arrays = []
        for count_, shape in ((r * c, (r, c)), (n * n, (n, n)), (n, (n,))):
            arr = np.frombuffer(buf, dtype="<f8", count=count_, offset=off).reshape(shape)
            arrays.append(arr.astype(np.float64))
            off += 8 * count_
        layer.W = arrays[0]
        layer.decor = replace(layer.decor, M=arrays[1], mu=arrays[2])
    if off != len(buf):
        raise ValueError(f"{path}: {len(buf) - off} trailing bytes")
    return net

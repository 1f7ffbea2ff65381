"""Credit assignment: per-layer deltas ``delta_i = dl/dh_i`` and weight gradients.

Three backends share one interface:

* ``BP``: exact backpropagation through ``W`` and the decorrelation ``M``.
* ``FA``: feedback alignment, where ``W_{i+1}^T`` is swapped for a fixed
  random matrix ``B_{i+1}`` in the backward pass.  ``M_i^T`` is kept because
  it is locally available.
* ``NP``: node perturbation.  Gaussian noise is added to every
  pre-activation in one extra forward pass, and the change in per-sample loss
  is correlated with that noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .convops import col2im, cols_to_image, image_to_cols, maxpool_backward
from .network import (Conv, ForwardTrace, MaxPool, Network, ShapeError, activation_grad,
                      forward, logits, output_delta, per_sample_loss)

CREDIT_METHODS = ("bp", "fa", "np")


@dataclass(frozen=True)
class BP:
    name = "bp"


@dataclass(frozen=True)
class FA:
    """Fixed random feedback matrices, one per layer (``None`` where unused)."""

    feedback: tuple
    seed: int = 0
    name = "fa"

    @classmethod
    def create(cls, net: Network, seed: int = 0) -> "FA":
        # same distribution as the forward init, drawn from an independent stream
        mats = []
        for i, layer in enumerate(net.layers):
            if not layer.weighted or i == net.weighted_layers[0]:
                mats.append(None)
                continue
            rng = np.random.default_rng([seed, 7919, i])
            bound = 1.0 / np.sqrt(layer.W.shape[1])
            mats.append(rng.uniform(-bound, bound, size=layer.W.T.shape))
        return cls(feedback=tuple(mats), seed=seed)


@dataclass(frozen=True)
class NP:
    sigma: float = 1e-3
    seed: int = 0
    name = "np"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"NP sigma must be > 0, got {self.sigma}")


@dataclass
class DeltaSet:
    """Deltas in the column layout of ``ForwardTrace.h``; ``None`` for pooling layers."""

    deltas: list = field(default_factory=list)

    def __getitem__(self, i):
        return self.deltas[i]

    def __len__(self):
        return len(self.deltas)


def _check_trace(net: Network, trace: ForwardTrace):
    if len(trace.outputs) != len(net.layers):
        raise ShapeError(
            f"trace has {len(trace.outputs)} layers, network has {len(net.layers)}")
    for i, layer in enumerate(net.layers):
        if layer.weighted and trace.h[i].shape[0] != layer.W.shape[0]:
            raise ShapeError(f"layer {i}: trace does not belong to this network")


def _backward(net: Network, trace: ForwardTrace, Y: np.ndarray, feedback=None) -> DeltaSet:
    _check_trace(net, trace)
    L = len(net.layers)
    deltas = [None] * L
    deltas[-1] = output_delta(net, trace, Y)
    B = trace.batch_size
    grad = None  # dl/d(input of layer i+1), in layer-i output layout
    for i in range(L - 1, 0, -1):
        layer = net.layers[i]
        spec = layer.spec
        if layer.weighted:
            back = layer.W.T if feedback is None else feedback[i]
            if back is None:
                raise ValueError(f"layer {i}: no feedback matrix")
            d_in = back @ deltas[i]
            if net.decorrelate:
                d_in = layer.decor.M.T @ d_in
            if isinstance(spec, Conv):
                grad = col2im(d_in, (B,) + layer.in_shape, spec.kernel, spec.stride, spec.padding)
            else:
                grad = d_in
        else:
            grad_img = grad if grad.ndim == 4 else grad.T.reshape((B,) + layer.out_shape)
            grad = maxpool_backward(grad_img, trace.pool_idx[i], (B,) + layer.in_shape)
        prev = net.layers[i - 1]
        if prev.weighted:
            if isinstance(prev.spec, Conv):
                g_cols = image_to_cols(grad if grad.ndim == 4 else
                                       grad.T.reshape((B,) + prev.out_shape))
            else:
                g_cols = grad if grad.ndim == 2 else grad.reshape(B, -1).T
            deltas[i - 1] = activation_grad(prev.spec.activation, trace.h[i - 1]) * g_cols
    return DeltaSet(deltas)


def bp_deltas(net: Network, trace: ForwardTrace, Y: np.ndarray) -> DeltaSet:
    """Backpropagated deltas, ``delta_i = phi'(h_i) * M_i^T W_{i+1}^T delta_{i+1}``."""
    return _backward(net, trace, Y)


def fa_deltas(net: Network, trace: ForwardTrace, Y: np.ndarray, method: FA) -> DeltaSet:
    """Like :func:`bp_deltas` with ``W_{i+1}^T`` replaced by the fixed ``B_{i+1}``."""
    if not isinstance(method, FA) or len(method.feedback) != len(net.layers):
        raise ValueError("feedback alignment needs one feedback entry per layer")
    return _backward(net, trace, Y, feedback=method.feedback)


def _sample_of_column(net: Network, i: int, B: int) -> np.ndarray:
    layer = net.layers[i]
    if isinstance(layer.spec, Conv):
        _, oh, ow = layer.out_shape
        return np.repeat(np.arange(B), oh * ow)
    return np.arange(B)


def np_update(net: Network, X0: np.ndarray, Y: np.ndarray, method: NP,
              rng: np.random.Generator | None = None, trace: ForwardTrace | None = None,
              noise=None) -> DeltaSet:
    """Node-perturbation deltas from one clean and one jointly perturbed pass.

    Every pre-activation receives ``xi ~ N(0, sigma^2)`` and, per sample,
    ``delta_i = (l_xi - l_0) / sigma^2 * xi_i``.  ``rng`` defaults to a fresh
    generator seeded with ``method.seed``.  ``trace`` may supply the clean
    pass; ``noise`` overrides the drawn perturbations.
    """
    if not method.sigma > 0:
        raise ValueError("NP sigma must be > 0")
    if rng is None:
        rng = np.random.default_rng(method.seed)
    if trace is None:
        trace = forward(net, X0)
    B = trace.batch_size
    if noise is None:
        noise = [None if h is None else method.sigma * rng.standard_normal(h.shape)
                 for h in trace.h]
    loss0 = per_sample_loss(net.loss, logits(trace), Y)
    noisy = forward(net, X0, noise=noise)
    loss_xi = per_sample_loss(net.loss, logits(noisy), Y)
    scale = (loss_xi - loss0) / method.sigma ** 2
    deltas = []
    for i, xi in enumerate(noise):
        if xi is None:
            deltas.append(None)
            continue
        deltas.append(scale[_sample_of_column(net, i, B)][None, :] * xi)
    return DeltaSet(deltas)


def compute_deltas(net: Network, trace: ForwardTrace, X0, Y, method,
                   rng: np.random.Generator | None = None) -> DeltaSet:
    if isinstance(method, BP):
        return bp_deltas(net, trace, Y)
    if isinstance(method, FA):
        return fa_deltas(net, trace, Y, method)
    if isinstance(method, NP):
        return np_update(net, X0, Y, method, rng=rng, trace=trace)
    raise ValueError(f"unknown credit method {method!r}")


def make_method(name: str, net: Network, seed: int = 0, sigma: float = 1e-3):
    """Build a credit method from its config name ``bp``, ``fa`` or ``np``."""
    if name == "bp":
        return BP()
    if name == "fa":
        return FA.create(net, seed)
    if name == "np":
        return NP(sigma=sigma, seed=seed)
    raise ValueError(f"credit must be one of {CREDIT_METHODS}, got {name!r}")


def weight_gradients(trace: ForwardTrace, deltas: DeltaSet) -> list:
    """Per-layer ``(1/B) delta x_hat^T``; ``None`` for pooling layers."""
    grads = []
    B = trace.batch_size
    for x_hat, d in zip(trace.x_hat, deltas.deltas):
        if d is None:
            grads.append(None)
            continue
        if d.shape[1] != x_hat.shape[1]:
            raise ShapeError(f"delta has {d.shape[1]} columns, x_hat has {x_hat.shape[1]}")
        grads.append(d @ x_hat.T / B)
    return grads

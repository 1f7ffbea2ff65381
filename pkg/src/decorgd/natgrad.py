"""Natural-gradient reference machinery, used as a test oracle and for plot data.

Parameters of a weight matrix are flattened row-major (``W.ravel()``).  Under
that convention ``vec(d x^T) = kron(d, x)`` and the layer block of the metric
separates as ``kron(<d d^T>, <x x^T>)``.  So the layer-wise natural gradient
``kron(Dd, Dx)^{-1} vec(G)`` equals ``vec(Dd^{-1} G Dx^{-1})``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    pass


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.ravel(a)
    b = np.ravel(b)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


@dataclass(frozen=True)
class EmpiricalMetric:
    G: np.ndarray
    damping: float = 0.0

    @property
    def P(self) -> int:
        return self.G.shape[0]


def empirical_metric(per_sample_grads, damping: float | None = None) -> EmpiricalMetric:
    """Mean outer product of per-sample loss gradients.

    ``damping`` defaults to ``1e-6 * trace(G) / P``.
    """
    g = np.atleast_2d(np.asarray(per_sample_grads, dtype=np.float64))
    if g.size == 0:
        raise MetricError("empirical_metric needs at least one gradient sample")
    G = g.T @ g / g.shape[0]
    G = 0.5 * (G + G.T)
    if damping is None:
        damping = 1e-6 * float(np.trace(G)) / G.shape[0]
    return EmpiricalMetric(G=G, damping=damping)


def loss_distance(per_sample_loss, theta: np.ndarray, dtheta: np.ndarray) -> float:
    """``mean_n (l_n(theta + dtheta) - l_n(theta))^2`` for a vectorised loss."""
    d = per_sample_loss(theta + dtheta) - per_sample_loss(theta)
    return float(np.mean(d * d))


def _damped_solve(A: np.ndarray, b: np.ndarray, damping: float) -> np.ndarray:
    A = A + damping * np.eye(A.shape[0])
    if np.linalg.cond(A) > 1e14:
        raise MetricError("metric is singular after damping")
    return np.linalg.solve(A, b)


def ngd_update(grad: np.ndarray, metric: EmpiricalMetric, lr: float = 1.0) -> np.ndarray:
    """``-lr (G + damping I)^{-1} grad``."""
    return -lr * _damped_solve(metric.G, np.asarray(grad, dtype=np.float64), metric.damping)


def _corr(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return A @ B.T / A.shape[1]


def layer_block_metric(X_prev_i, D_i, D_j, X_prev_j) -> np.ndarray:
    """Separable ``(i, j)`` metric block ``kron(<d_i d_j^T>, <x_i x_j^T>)``.

    Batches are column-major.  Delta and activity statistics are averaged
    independently of each other.
    """
    X_prev_i, D_i, D_j, X_prev_j = (np.atleast_2d(np.asarray(a, dtype=np.float64))
                                    for a in (X_prev_i, D_i, D_j, X_prev_j))
    B = {a.shape[1] for a in (X_prev_i, D_i, D_j, X_prev_j)}
    if len(B) != 1:
        raise MetricError(f"batch sizes differ: {sorted(B)}")
    return np.kron(_corr(D_i, D_j), _corr(X_prev_i, X_prev_j))


def layer_block_metric_naive(X_prev_i, D_i, D_j, X_prev_j) -> np.ndarray:
    """The same block without the separability assumption: mean of per-sample outer products."""
    gi = np.einsum("ab,cb->bac", D_i, X_prev_i).reshape(D_i.shape[1], -1)
    gj = np.einsum("ab,cb->bac", D_j, X_prev_j).reshape(D_j.shape[1], -1)
    return gi.T @ gj / gi.shape[0]


def layerwise_ngd_update(X_prev: np.ndarray, D: np.ndarray, grad_W: np.ndarray,
                         damping: float = 0.0, lr: float = 1.0) -> np.ndarray:
    """``-lr (<d d^T> + damping I)^{-1} grad_W (<x x^T> + damping I)^{-1}``."""
    Dd = _corr(D, D)
    Dx = _corr(X_prev, X_prev)
    left = _damped_solve(Dd, grad_W, damping)
    return -lr * _damped_solve(Dx, left.T, damping).T


# -- quadratic landscapes ------------------------------------------------------

def _check_psd(name: str, A: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if A.shape[0] != A.shape[1] or not np.allclose(A, A.T, atol=1e-12):
        raise MetricError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(A).min() < -tol * max(1.0, np.abs(A).max()):
        raise MetricError(f"{name} must be positive semi-definite")
    return A


def _sqrtm_psd(A: np.ndarray, power: float) -> np.ndarray:
    evals, evecs = np.linalg.eigh(A)
    return (evecs * evals ** power) @ evecs.T


@dataclass
class QuadraticLandscape:
    """``L(W) = <(W x - y)^T A (W x - y)>`` with ``<x x^T> = Sigma`` and ``y = W_star x``.

    In closed form ``L(W) = tr(A E Sigma E^T)`` with ``E = W - W_star``.
    """

    A: np.ndarray
    Sigma: np.ndarray
    W_star: np.ndarray
    extent: float = 2.0
    resolution: int = 41

    def __post_init__(self):
        self.A = _check_psd("A", self.A)
        self.Sigma = _check_psd("Sigma", self.Sigma)
        self.W_star = np.atleast_2d(np.asarray(self.W_star, dtype=np.float64))
        if self.W_star.shape != (self.A.shape[0], self.Sigma.shape[0]):
            raise MetricError(f"W_star must be {self.A.shape[0]}x{self.Sigma.shape[0]}")

    def loss(self, W) -> float:
        E = np.reshape(W, self.W_star.shape) - self.W_star
        return float(np.trace(self.A @ E @ self.Sigma @ E.T))

    def grad(self, W) -> np.ndarray:
        E = np.reshape(W, self.W_star.shape) - self.W_star
        return 2.0 * self.A @ E @ self.Sigma

    def hessian(self) -> np.ndarray:
        return 2.0 * np.kron(self.A, self.Sigma)

    def fisher(self) -> np.ndarray:
        """Metric of the linear-Gaussian model with output precision ``A``: ``kron(A, Sigma)``."""
        return np.kron(self.A, self.Sigma)

    def gd_direction(self, W) -> np.ndarray:
        return -self.grad(W)

    def ngd_direction(self, W, damping: float = 0.0) -> np.ndarray:
        step = _damped_solve(self.fisher(), self.grad(W).ravel(), damping)
        return -step.reshape(self.W_star.shape)

    def decorrelated_gd_direction(self, W) -> np.ndarray:
        """GD on ZCA-whitened inputs, with the step mapped back to ``W`` coordinates.

        Whitening reparametrises ``W_bar = W Sigma^{1/2}``; a plain step on
        ``W_bar`` corresponds to ``dW = dW_bar Sigma^{-1/2}``.
        """
        root = _sqrtm_psd(self.Sigma, 0.5)
        inv_root = _sqrtm_psd(self.Sigma, -0.5)
        E_bar = (np.reshape(W, self.W_star.shape) - self.W_star) @ root
        return -2.0 * self.A @ E_bar @ inv_root

    def to_minimum(self, W) -> np.ndarray:
        return self.W_star - np.reshape(W, self.W_star.shape)


@dataclass
class LandscapeDemo:
    sections: dict = field(default_factory=dict)
    cosines: dict = field(default_factory=dict)


def landscape_demo(landscape: QuadraticLandscape, theta0, arrow_length: float = 0.5
                   ) -> LandscapeDemo:
    """Contour grid plus GD, NGD and decorrelated-GD arrows at ``theta0``.

    Arrows are normalised to ``arrow_length`` and written as ``x y dx dy``.
    The contour section is only emitted for two-parameter landscapes.
    """
    W0 = np.reshape(np.asarray(theta0, dtype=np.float64), landscape.W_star.shape)
    target = landscape.to_minimum(W0)
    dirs = {
        "gd": landscape.gd_direction(W0),
        "ngd": landscape.ngd_direction(W0),
        "decor_gd": landscape.decorrelated_gd_direction(W0),
    }
    demo = LandscapeDemo()
    demo.cosines = {k: cosine(v, target) for k, v in dirs.items()}
    if W0.size == 2:
        ws = landscape.W_star.ravel()
        axis0 = np.linspace(ws[0] - landscape.extent, ws[0] + landscape.extent,
                            landscape.resolution)
        axis1 = np.linspace(ws[1] - landscape.extent, ws[1] + landscape.extent,
                            landscape.resolution)
        rows = [(a, b, landscape.loss(np.array([a, b]))) for a in axis0 for b in axis1]
        demo.sections["contour w0 w1 loss"] = np.array(rows)
    origin = W0.ravel()
    for k, d in dirs.items():
        d = d.ravel()
        d = arrow_length * d / np.linalg.norm(d)
        demo.sections[f"arrow {k}"] = np.concatenate([origin, d])[None, :]
    demo.sections["minimum"] = landscape.W_star.ravel()[None, :]
    demo.sections["cosine gd ngd decor_gd"] = np.array(
        [[demo.cosines["gd"], demo.cosines["ngd"], demo.cosines["decor_gd"]]])
    return demo

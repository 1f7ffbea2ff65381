"""Layer-wise decorrelation.

Every weighted layer sees its input through ``x_hat = M (x - mu)``.  ``M`` is
learned with a local rule that shrinks cross-correlations of ``x_hat`` while a
gain keeps the activity at the scale it had before decorrelation::

    M <- diag(g) (M - eta_M <x_hat x_hat^T> M)
    mu <- mu + mu_rate (mean(x) - mu)

Batches are column-major: an ``(n, B)`` array holds ``B`` samples of an
``n``-dimensional signal.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

GAIN_MODES = ("unit", "scalar")


class DecorrelationError(ValueError):
    """Raised for shape errors or numerically invalid decorrelation updates."""


@dataclass(frozen=True)
class DecorrelationState:
    M: np.ndarray
    mu: np.ndarray
    eta_M: float = 0.0
    mu_rate: float = 0.1
    eps_gain: float = 1e-8
    gain_mode: str = "unit"

    def __post_init__(self):
        M = np.asarray(self.M, dtype=np.float64)
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DecorrelationError(f"M must be square, got shape {M.shape}")
        if mu.shape[0] != M.shape[0]:
            raise DecorrelationError(
                f"mu has length {mu.shape[0]}, expected {M.shape[0]}")
        if not (np.all(np.isfinite(M)) and np.all(np.isfinite(mu))):
            raise DecorrelationError("M and mu must be finite")
        if self.eta_M < 0:
            raise DecorrelationError(f"eta_M must be >= 0, got {self.eta_M}")
        if not 0.0 < self.mu_rate <= 1.0:
            raise DecorrelationError(f"mu_rate must lie in (0, 1], got {self.mu_rate}")
        if self.eps_gain <= 0:
            raise DecorrelationError("eps_gain must be > 0")
        if self.gain_mode not in GAIN_MODES:
            raise DecorrelationError(f"gain_mode must be one of {GAIN_MODES}")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "mu", mu)

    @classmethod
    def identity(cls, n: int, **kwargs) -> "DecorrelationState":
        """No-op state: ``M = I`` and ``mu = 0``."""
        return cls(M=np.eye(n), mu=np.zeros(n), **kwargs)

    @property
    def n(self) -> int:
        return self.M.shape[0]


@dataclass(frozen=True)
class CorrelationReport:
    C: np.ndarray
    off_diag_loss: float
    diag_mean: float


def _check_batch(state: DecorrelationState, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] != state.n:
        raise DecorrelationError(
            f"batch has {X.shape[0] if X.ndim else 0} rows, expected n={state.n}")
    return X


def decorrelate(state: DecorrelationState, X: np.ndarray) -> np.ndarray:
    """Return ``M (X - mu)`` column-wise.  ``X`` is left untouched."""
    X = _check_batch(state, X)
    return state.M @ (X - state.mu[:, None])


def correlation_report(X_hat: np.ndarray) -> CorrelationReport:
    """Batch-averaged correlation ``C = <x_hat x_hat^T>`` and its off-diagonal loss."""
    X_hat = np.asarray(X_hat, dtype=np.float64)
    if X_hat.ndim == 1:
        X_hat = X_hat[:, None]
    n, B = X_hat.shape
    if B == 0:
        raise DecorrelationError("correlation_report needs a nonempty batch")
    C = (X_hat @ X_hat.T) / B
    C = 0.5 * (C + C.T)
    diag = np.diag(C)
    if n > 1:
        off = float((np.sum(C * C) - np.sum(diag * diag)) / (n * n - n))
    else:
        off = 0.0
    return CorrelationReport(C=C, off_diag_loss=max(off, 0.0), diag_mean=float(diag.mean()))


def compute_gain(X: np.ndarray, X_hat: np.ndarray, eps_gain: float = 1e-8,
                 mode: str = "unit") -> np.ndarray:
    """Gain restoring the mean-square activity of ``X_hat`` to that of ``X``.

    ``mode="unit"`` gives one gain per row,
    ``g_j = sqrt(mean_b X_jb^2 / max(mean_b X_hat_jb^2, eps_gain))``,
    with ``g_j = 1`` wherever the numerator is itself below ``eps_gain``.
    ``mode="scalar"`` uses a single whole-layer ratio of the same form,
    broadcast to every row.
    """
    X = np.asarray(X, dtype=np.float64)
    X_hat = np.asarray(X_hat, dtype=np.float64)
    if X.shape != X_hat.shape:
        raise DecorrelationError(f"shape mismatch {X.shape} vs {X_hat.shape}")
    if X.ndim == 1:
        X, X_hat = X[:, None], X_hat[:, None]
    if mode == "unit":
        num = np.mean(X * X, axis=1)
        den = np.mean(X_hat * X_hat, axis=1)
    elif mode == "scalar":
        num = np.full(X.shape[0], np.sum(X * X) / X.size)
        den = np.full(X.shape[0], np.sum(X_hat * X_hat) / X.size)
    else:
        raise DecorrelationError(f"unknown gain mode {mode!r}")
    g = np.sqrt(num / np.maximum(den, eps_gain))
    g[num < eps_gain] = 1.0
    return g


def update_decorrelation(state: DecorrelationState, X: np.ndarray) -> DecorrelationState:
    """One step of the gain-normalised decorrelation rule on batch ``X``.

    The ``M`` update is computed with the current ``mu``; ``mu`` is moved
    toward the batch mean afterwards.
    """
    X = _check_batch(state, X)
    centred = X - state.mu[:, None]
    X_hat = state.M @ centred
    C = correlation_report(X_hat).C
    g = compute_gain(centred, X_hat, state.eps_gain, state.gain_mode)
    M = g[:, None] * (state.M - state.eta_M * (C @ state.M))
    mu = state.mu + state.mu_rate * (X.mean(axis=1) - state.mu)
    if not np.all(np.isfinite(M)):
        raise DecorrelationError(
            f"non-finite decorrelation matrix after update (eta_M={state.eta_M} may be too large)")
    return replace(state, M=M, mu=mu)


def activity_norm_ratio(state: DecorrelationState, X: np.ndarray) -> float:
    """``mean_b ||x_hat_b||^2 / mean_b ||x_b - mu||^2`` for the current state."""
    X = _check_batch(state, X)
    centred = X - state.mu[:, None]
    den = float(np.mean(np.sum(centred * centred, axis=0)))
    X_hat = state.M @ centred
    num = float(np.mean(np.sum(X_hat * X_hat, axis=0)))
    return num / den if den > 0 else 1.0


def antihebbian_update(M: np.ndarray, X: np.ndarray, eta: float) -> np.ndarray:
    """Földiák-style baseline: ``M <- M - eta offdiag(<x_bar x_bar^T>) M``.

    No gain and no demeaning; ``x_bar = M X``.  Used as the comparison rule in
    the decorrelation-dynamics demo.
    """
    X_bar = M @ X
    C = correlation_report(X_bar).C
    off = C - np.diag(np.diag(C))
    return M - eta * (off @ M)


def sherman_morrison_inverse_update(M_inv: np.ndarray, x_hat: np.ndarray, eta_M: float,
                                    g: float | np.ndarray = 1.0) -> np.ndarray:
    """First-order inverse of the single-sample update ``g (I - eta x_hat x_hat^T) M``.

    Returns ``(M^-1 + eta (M^-1 x_hat) x_hat^T) / g``, which is exact up to
    ``O(eta^2)``.  A vector ``g`` is read as the per-unit gain ``diag(g)`` and
    divides the columns instead.
    """
    M_inv = np.asarray(M_inv, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64).reshape(-1)
    out = M_inv + eta_M * np.outer(M_inv @ x_hat, x_hat)
    g = np.asarray(g, dtype=np.float64)
    if g.ndim == 0:
        return out / g
    return out / g[None, :]


def _auto_step(M_inv: np.ndarray) -> float:
    lam = np.linalg.eigvals(M_inv)
    if np.any(lam.real <= 0):
        raise DecorrelationError(
            "lateral dynamics are unstable: M^-1 has eigenvalues with non-positive real part")
    # |1 - h*lam| < 1 for every eigenvalue when h <= Re(lam)/|lam|^2
    return float(np.min(lam.real / np.abs(lam) ** 2))


def recurrent_decorrelate(M: np.ndarray, x: np.ndarray, step: float | None = None,
                          tol: float = 1e-10, max_iters: int = 10_000) -> np.ndarray:
    """Reach ``x_bar = M x`` by relaxing lateral dynamics instead of a matrix product.

    Integrates ``dx_bar/dt = -x_bar + x - R x_bar`` with ``R = M^-1 - I``
    (forward Euler, step ``step``).  The only fixed point is ``x_bar = M x``.
    With ``step=None`` the largest step that is stable for every eigenvalue
    of ``M^-1`` is used.
    """
    M = np.asarray(M, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if M.shape != (x.shape[0], x.shape[0]):
        raise DecorrelationError(f"M has shape {M.shape}, x has length {x.shape[0]}")
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > 1e12:
        raise DecorrelationError(f"M is singular or ill-conditioned (cond={cond:.3g})")
    M_inv = np.linalg.inv(M)
    R = M_inv - np.eye(M.shape[0])
    h = _auto_step(M_inv) if step is None else float(step)
    target = M @ x
    x_bar = np.zeros_like(x)
    residual = float(np.linalg.norm(x_bar - target))
    for _ in range(max_iters):
        x_bar = x_bar + h * (-x_bar + x - R @ x_bar)
        residual = float(np.linalg.norm(x_bar - target))
        if residual <= tol:
            return x_bar
        if not np.isfinite(residual):
            break
    raise RecurrentConvergenceError(residual)


class RecurrentConvergenceError(DecorrelationError):
    def __init__(self, residual: float):
        super().__init__(f"lateral dynamics did not converge (final residual {residual:.3e})")
        self.residual = residual


def zca_whitening(X: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """Symmetric whitening matrix ``C^{-1/2}`` of the batch correlation of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    C = (X @ X.T) / X.shape[1]
    evals, evecs = np.linalg.eigh(C)
    return (evecs / np.sqrt(evals + eps)) @ evecs.T

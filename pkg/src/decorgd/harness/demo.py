"""Plot-data demos: quadratic loss landscapes and decorrelation dynamics."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from ..decorrelation import (DecorrelationError, DecorrelationState, activity_norm_ratio,
                             antihebbian_update, correlation_report, decorrelate,
                             update_decorrelation)
from ..natgrad import QuadraticLandscape, landscape_demo
from ..plotdata import write_plot_data


def correlated_batch(dim: int = 8, n: int = 2000, seed: int = 0) -> np.ndarray:
    """Zero-mean ``(dim, n)`` Gaussian batch with a random unit-diagonal covariance."""
    rng = np.random.default_rng([seed, 5])
    A = rng.standard_normal((dim, dim))
    cov = A @ A.T / dim + 0.1 * np.eye(dim)
    d = np.sqrt(np.diag(cov))
    cov = cov / np.outer(d, d)
    X = np.linalg.cholesky(cov) @ rng.standard_normal((dim, n))
    return X - X.mean(axis=1, keepdims=True)


@dataclass
class DynamicsRun:
    rule: str
    scale: float
    eta: float
    off_diag: np.ndarray
    norm_ratio: np.ndarray

    def settling_step(self, threshold: float) -> int:
        """Step after which ``off_diag`` stays below ``threshold``; ``len + 1`` if never."""
        above = np.nonzero(~(self.off_diag < threshold))[0]
        if len(above) == 0:
            return 1
        return int(above[-1]) + 2


@dataclass
class DecorDynamics:
    reference_loss: float
    lambda_max: float
    runs: list = field(default_factory=list)

    def get(self, rule: str, scale: float, eta: float | None = None) -> DynamicsRun:
        for r in self.runs:
            if r.rule == rule and r.scale == scale and (eta is None or r.eta == eta):
                return r
        raise KeyError((rule, scale, eta))


def _run_rule(rule, X, scale, eta, steps):
    n = X.shape[0]
    off = np.full(steps, np.nan)
    ratio = np.full(steps, np.nan)
    base = float(np.mean(np.sum(X * X, axis=0)))
    if rule == "decor":
        state = DecorrelationState(M=scale * np.eye(n), mu=np.zeros(n), eta_M=eta)
    else:
        M = scale * np.eye(n)
    with np.errstate(all="ignore"):
        for t in range(steps):
            if rule == "decor":
                try:
                    state = update_decorrelation(state, X)
                except DecorrelationError:
                    break
                off[t] = correlation_report(decorrelate(state, X)).off_diag_loss
                ratio[t] = activity_norm_ratio(state, X)
            else:
                M = antihebbian_update(M, X, eta)
                if not np.all(np.isfinite(M)):
                    break
                Xb = M @ X
                off[t] = correlation_report(Xb).off_diag_loss
                ratio[t] = float(np.mean(np.sum(Xb * Xb, axis=0))) / base
    return DynamicsRun(rule, scale, eta, off, ratio)


def decor_dynamics(X: np.ndarray | None = None, scales=(0.1, 1.0, 10.0),
                   scale_rate: float = 2e-3, norm_rate: float = 1e-2,
                   scale_steps: int = 1500, norm_steps: int = 500) -> DecorDynamics:
    """Correlation loss and activity-norm ratio per step, gain rule vs. anti-Hebbian baseline.

    Rates are multiples of ``1 / lambda_max`` of the data correlation.  The
    scale sweep starts ``M = c I`` for each ``c`` in ``scales``.  The norm
    comparison runs both rules from ``M = I`` at the larger ``norm_rate``.
    """
    if X is None:
        X = correlated_batch()
    rep = correlation_report(X)
    lam = float(np.linalg.eigvalsh(rep.C).max())
    out = DecorDynamics(reference_loss=rep.off_diag_loss, lambda_max=lam)
    for rule in ("decor", "antihebbian"):
        for c in scales:
            out.runs.append(_run_rule(rule, X, c, scale_rate / lam, scale_steps))
        out.runs.append(_run_rule(rule, X, 1.0, norm_rate / lam, norm_steps))
    return out


def write_decor_dynamics(path, dyn: DecorDynamics) -> None:
    sections = {}
    for r in dyn.runs:
        steps = np.arange(1, len(r.off_diag) + 1)
        sections[f"rule={r.rule} scale={r.scale:g} eta={r.eta:.6g} step off_diag norm_ratio"] = (
            np.column_stack([steps, r.off_diag, r.norm_ratio]))
    write_plot_data(path, sections, comments=[
        f"reference off_diag_loss of the input data: {dyn.reference_loss:.17g}",
        f"lambda_max of the input correlation: {dyn.lambda_max:.17g}"])


def standard_landscapes(seed: int = 0) -> dict:
    """Well-conditioned, output-skewed and input-correlated two-parameter landscapes."""
    skew = np.array([[3.0, 1.6], [1.6, 1.0]])
    corr = np.array([[1.0, 0.8], [0.8, 1.0]])
    return {
        "identity": QuadraticLandscape(A=np.eye(2), Sigma=np.eye(1), W_star=np.zeros((2, 1))),
        "skewed": QuadraticLandscape(A=skew, Sigma=np.eye(1), W_star=np.zeros((2, 1))),
        "correlated": QuadraticLandscape(A=np.eye(1), Sigma=corr, W_star=np.zeros((1, 2))),
    }


def run_demo(kind: str, out_dir: str) -> list[str]:
    """Write the demo's plot-data files into ``out_dir`` and return their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    if kind == "landscape":
        theta0 = np.array([1.5, -0.5])
        for name, land in standard_landscapes().items():
            demo = landscape_demo(land, theta0)
            path = os.path.join(out_dir, f"landscape_{name}.txt")
            write_plot_data(path, demo.sections, comments=[f"landscape: {name}"])
            paths.append(path)
    elif kind == "decor-dynamics":
        path = os.path.join(out_dir, "decor_dynamics.txt")
        write_decor_dynamics(path, decor_dynamics())
        paths.append(path)
    else:
        raise ValueError(f"unknown demo {kind!r}; expected landscape or decor-dynamics")
    return paths

"""Forward-weight update rules.  Decorrelation matrices never pass through here."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def sgd_step(W: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    if W.shape != grad.shape:
        raise ValueError(f"shape mismatch {W.shape} vs {grad.shape}")
    return W - lr * grad


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, W: np.ndarray, **kwargs) -> "AdamState":
        return cls(m=np.zeros_like(W), v=np.zeros_like(W), **kwargs)


def adam_step(state: AdamState, W: np.ndarray, grad: np.ndarray):
    """Bias-corrected Adam.  Returns ``(new_state, new_W)``; inputs are not modified."""
    if not (W.shape == grad.shape == state.m.shape):
        raise ValueError(f"shape mismatch W{W.shape} grad{grad.shape} m{state.m.shape}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    W_new = W - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return AdamState(m=m, v=v, t=t, lr=state.lr, beta1=state.beta1, beta2=state.beta2,
                     eps=state.eps), W_new

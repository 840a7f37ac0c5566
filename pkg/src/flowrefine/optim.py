"""First-order optimization: Adam with bias correction, cosine decay, and the
central-difference gradient used as a test oracle throughout the suite."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "NonFiniteGradient",
    "AdamState",
    "adam_step",
    "cosine_lr",
    "finite_diff_grad",
]


class NonFiniteGradient(ValueError):
    """Raised when a gradient passed to the optimizer contains NaN or inf."""


@dataclass
class AdamState:
    """Moment estimates and step counter for one parameter vector."""

    dim: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 1e-3
    t: int = 0
    m: np.ndarray = field(default=None)  # type: ignore[assignment]
    v: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.dim)
        if self.v is None:
            self.v = np.zeros(self.dim)
        if self.m.shape != (self.dim,) or self.v.shape != (self.dim,):
            raise ValueError("moment vectors must match the parameter dimension")
        if self.t < 0:
            raise ValueError("step counter must be non-negative")


def adam_step(
    state: AdamState, params: np.ndarray, grad: np.ndarray, lr: float | None = None
) -> tuple[np.ndarray, AdamState]:
    """One Adam update (descent direction); returns new params and state.

    The update is the standard bias-corrected rule. Callers maximizing an
    objective pass the negated gradient. `lr` overrides the state's base
    learning rate for this step, which is how schedules plug in.
    """
    if lr is None:
        lr = state.lr
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape:
        raise ValueError(f"gradient shape {grad.shape} != params shape {params.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient contains non-finite entries")

    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(
        dim=state.dim,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
        lr=state.lr,
        t=t,
        m=m,
        v=v,
    )
    return new_params, new_state


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Cosine decay from lr0 at step 0 to 0 at total_steps."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError("step must lie in [0, total_steps]")
    if lr0 <= 0:
        raise ValueError("lr0 must be positive")
    return lr0 * 0.5 * (1.0 + np.cos(np.pi * step / total_steps))


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = eps
        hi = f(x + step)
        lo = f(x - step)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"non-finite function value near coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad

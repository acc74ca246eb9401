"""Bias-corrected ADAM over named parameter dictionaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class OptimError(ValueError):
    pass


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, learning_rate: float,
              beta1: float = 0.5, beta2: float = 0.9, eps: float = 1e-8) -> AdamState:
    """One update in place; m, v keyed by parameter name, t shared.

    p <- p - lr * m_hat / (sqrt(v_hat) + eps) with the standard 1 - beta^t
    bias corrections.
    """
    if set(grads) != set(params):
        raise OptimError("grads and params must cover the same names")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise OptimError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise OptimError(f"gradient shape {g.shape} != param shape "
                             f"{params[name].shape} for {name!r}")

    state.t += 1
    t = state.t
    for name in sorted(params):
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        params[name] -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return state


class Adam:
    """Stateful wrapper binding hyperparameters and per-name moments."""

    def __init__(self, learning_rate: float, beta1: float = 0.5,
                 beta2: float = 0.9, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(self, params: dict, grads: dict):
        adam_step(params, grads, self.state, self.learning_rate,
                  self.beta1, self.beta2, self.eps)

"""Adam optimizer with decoupled weight decay.

The decay is applied directly to the parameter value before the Adam
update (value <- value - lr * weight_decay * value), so it never enters
the moment estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamState:
    """Per-parameter first/second moment buffers plus hyperparameters."""

    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_adam(params, lr: float = 1e-3, weight_decay: float = 0.0,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Create zeroed moment buffers for exactly the given parameter set."""
    state = AdamState(lr=lr, weight_decay=weight_decay, beta1=beta1, beta2=beta2, eps=eps)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(params, state: AdamState) -> None:
    """One in-place update of every parameter from its accumulated gradient.

    Gradients are consumed (reset to None) so the next backward pass starts
    fresh.  A parameter without a gradient is an error: the training loop
    always reaches every parameter.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    lr, wd, eps = state.lr, state.weight_decay, state.eps
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
        g = p.grad
        if wd:
            p.data -= (lr * wd) * p.data
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v / bc2)
        denom += eps
        p.data -= (lr / bc1) * m / denom
        p.grad = None


def zero_grads(params) -> None:
    for p in params.values():
        p.grad = None


__all__ = ["AdamState", "init_adam", "adam_step", "zero_grads", "Tensor"]

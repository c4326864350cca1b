from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    """Moment accumulators for a fixed list of parameters."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")


def adam_step(state: AdamState, params, grads=None) -> None:
    """One bias-corrected Adam update, in place.

    ``grads`` defaults to each parameter's accumulated ``.grad``; a missing
    gradient counts as zero.
    """
    params = list(params)
    if grads is None:
        grads = [p.grad for p in params]
    grads = list(grads)
    if len(grads) != len(params):
        raise ValueError("one gradient per parameter required")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state was built for a different parameter list")
    for p, g, m in zip(params, grads, state.m):
        if m.shape != p.data.shape or (g is not None and np.shape(g) != p.data.shape):
            raise ValueError(f"shape mismatch for parameter {p.name or ''}: {p.data.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.data.dtype, copy=False)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


def as_parameter(arr, dtype=np.float32, name=None) -> Tensor:
    return Tensor(np.array(arr, dtype=dtype), requires_grad=True, name=name)

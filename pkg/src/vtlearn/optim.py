"""Adam optimizer with bias-corrected moment estimates."""

from __future__ import annotations

import numpy as np

from .engine import FLOAT


class AdamState:
    """Step counter plus per-parameter first/second moment tensors."""

    def __init__(self, alpha=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.alpha = alpha
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def slot(self, name, shape):
        if name not in self.m:
            self.m[name] = np.zeros(shape, dtype=FLOAT)
            self.v[name] = np.zeros(shape, dtype=FLOAT)
        if self.m[name].shape != shape:
            raise ValueError(
                f"moment shape {self.m[name].shape} != parameter shape {shape}")
        return self.m[name], self.v[name]


def adam_step(params, state: AdamState):
    """Apply one Adam update to every trainable parameter, in place.

    params: iterable of engine.Parameter; gradients are read from their
    grad accumulators.  The shared step count increments once per call.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p in params:
        if not p.trainable:
            continue
        g = p.grad
        m, v = state.slot(p.name, p.value.shape)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.value -= state.alpha * (m / c1) / (np.sqrt(v / c2) + state.eps)

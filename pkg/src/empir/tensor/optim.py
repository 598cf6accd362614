"""First-order optimizers operating in place on named parameter arrays."""

from __future__ import annotations

import numpy as np


def _check_finite(grads: dict) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")


def _check_shapes(params: dict, grads: dict) -> None:
    for name, g in grads.items():
        if name in params and np.shape(params[name]) != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {name!r} {np.shape(params[name])}")


class SGD:
    def __init__(self, lr: float = 0.01):
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        _check_shapes(params, grads)
        _check_finite(grads)
        for name, g in grads.items():
            if name in params:
                params[name] -= (self.lr * g).astype(params[name].dtype)


class Adam:
    """Adam with bias-corrected moments, one (m, v) pair per parameter name."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        _check_shapes(params, grads)
        _check_finite(grads)
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for name, g in grads.items():
            if name not in params:
                continue
            p = params[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def sgd_step(params, grads, lr: float) -> None:
    SGD(lr).step(params, grads)


def adam_step(params, grads, state: Adam) -> None:
    state.step(params, grads)

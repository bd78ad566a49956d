"""SGD and Adam over a ParameterStore."""

from __future__ import annotations

import numpy as np

from .exceptions import ContractError, DivergenceError
from .params import ParameterStore


def _check_finite(store: ParameterStore):
    for p in store:
        if not np.isfinite(p.grad).all():
            raise DivergenceError(f"non-finite gradient for {p.name!r}")


def _set(p, value):
    if not np.isfinite(value).all():
        raise DivergenceError(f"update made {p.name!r} non-finite")
    p.value = value


class SGD:
    def __init__(self, lr=0.5):
        if lr < 0:
            raise ContractError("learning rate must be >= 0")
        self.lr = float(lr)

    def step(self, store: ParameterStore):
        _check_finite(store)
        for p in store:
            _set(p, p.value - self.lr * p.grad)


class Adam:
    """Adam with bias-corrected moments; state persists across steps."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0:
            raise ContractError("learning rate must be >= 0")
        self.lr, self.beta1, self.beta2, self.eps = float(lr), beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, store: ParameterStore):
        _check_finite(store)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p in store:
            g = p.grad
            m = self.m.get(p.name, 0.0) * b1 + (1.0 - b1) * g
            v = self.v.get(p.name, 0.0) * b2 + (1.0 - b2) * g * g
            self.m[p.name], self.v[p.name] = m, v
            _set(p, p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps))


def make_optimizer(kind: str, lr: float):
    kind = kind.lower()
    if kind == "sgd":
        return SGD(lr)
    if kind == "adam":
        return Adam(lr)
    raise ContractError(f"unknown optimizer {kind!r}; use 'sgd' or 'adam'")


def optimizer_step(store: ParameterStore, optimizer):
    """Apply one update from the gradients currently held in ``store``."""
    optimizer.step(store)

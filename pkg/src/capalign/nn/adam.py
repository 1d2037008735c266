"""Adam with bias correction over a subset of a ParameterStore's blocks."""

from __future__ import annotations

import numpy as np

from .params import ParameterStore


class Adam:
    """One optimizer instance per parameter group (e.g. encoder vs decoder).

    step() applies the standard bias-corrected update to every managed
    block and zeroes its gradient buffer afterwards.
    """

    def __init__(
        self,
        store: ParameterStore,
        lr: float,
        names: list[str] | None = None,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.store = store
        self.lr = lr
        self.names = list(names) if names is not None else store.names()
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(store[n].value) for n in self.names}
        self.v = {n: np.zeros_like(store[n].value) for n in self.names}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name in self.names:
            param = self.store[name]
            g = param.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / bias1
            v_hat = v / bias2
            param.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            g[...] = 0.0

"""Adam with bias correction."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Parameter


def adam_step(
    params: Iterable[Parameter],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps_opt: float = 1e-8,
) -> None:
    """Apply one Adam update in place to every parameter using its ``grad``."""
    for p in params:
        g = p.grad
        p.step_count += 1
        t = p.step_count
        p.m = beta1 * p.m + (1 - beta1) * g
        p.v = beta2 * p.v + (1 - beta2) * g * g
        m_hat = p.m / (1 - beta1**t)
        v_hat = p.v / (1 - beta2**t)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps_opt)).astype(p.data.dtype, copy=False)


class Adam:
    def __init__(self, params: Iterable[Parameter], lr: float = 1e-4, beta1=0.9, beta2=0.999, eps_opt=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps_opt = beta1, beta2, eps_opt

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps_opt)

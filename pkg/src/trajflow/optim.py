"""Adam and AdamW over named parameter dictionaries."""

from __future__ import annotations

import numpy as np


class Adam:
    """Standard Adam with bias correction.

    Operates in place on a ``dict[str, np.ndarray]`` of parameters; the
    learning rate is passed per step so callers own the schedule.
    """

    def __init__(self, params: dict[str, np.ndarray], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            m_hat = m / bias1
            v_hat = v / bias2
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay != 0.0:
                update = update + self.weight_decay * p
            p -= np.asarray(lr * update, dtype=p.dtype)


class AdamW(Adam):
    """Adam with decoupled weight decay (applied inside the lr-scaled update)."""

    def __init__(self, params: dict[str, np.ndarray], beta1: float = 0.9,
                 beta2: float = 0.95, eps: float = 1e-8, weight_decay: float = 1e-10):
        super().__init__(params, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)

"""Adam with per-array learning rates; arrays are updated in place."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, params: list, lrs: list, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if len(params) != len(lrs):
            raise ValueError("one learning rate per parameter array")
        self.params = params
        self.lrs = [float(lr) for lr in lrs]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v, lr in zip(self.params, grads, self.m, self.v, self.lrs):
            if lr == 0.0:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

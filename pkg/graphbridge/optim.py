#!/usr/bin/env python3
"""
Adam over named parameter arrays
"""

from typing import Dict, Mapping, Tuple

import numpy as np


class Adam:
    """
    Adaptive-moment optimizer with optional L2 weight decay

    Decay is added to the gradient of parameters whose name ends in 'weight'.
    """

    def __init__(self, lr: float = 1e-3, betas: Tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.steps = 0
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, np.ndarray],
             grads: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
        """Return updated copies of params; inputs are left untouched"""
        self.steps += 1
        beta1, beta2 = self.betas
        correction1 = 1.0 - beta1 ** self.steps
        correction2 = 1.0 - beta2 ** self.steps

        updated = {}
        for name, value in params.items():
            grad = np.asarray(grads[name], dtype=np.float64).reshape(value.shape)
            if self.weight_decay and name.endswith("weight"):
                grad = grad + self.weight_decay * value
            m = self._m.get(name, np.zeros_like(value))
            v = self._v.get(name, np.zeros_like(value))
            m = beta1 * m + (1.0 - beta1) * grad
            v = beta2 * v + (1.0 - beta2) * grad * grad
            self._m[name], self._v[name] = m, v
            step = self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            updated[name] = value - step
        return updated

"""Adam optimizer over lists of numpy parameter arrays."""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np


class Adam:
    """Adam with optional L2 weight decay folded into the gradient.

    Parameters are updated in place; gradients must come in the same order
    and shapes as the parameters passed at construction.
    """

    def __init__(
        self,
        params: Sequence[np.ndarray],
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        l2: float = 0.0,
    ) -> None:
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.l2 = l2
        self.step_count = 0
        self._m = [np.zeros_like(p) for p in self.params]
        self._v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError(
                f"expected {len(self.params)} gradients, got {len(grads)}"
            )
        if self.learning_rate == 0.0:
            return
        self.step_count += 1
        t = self.step_count
        correction1 = 1.0 - self.beta1**t
        correction2 = 1.0 - self.beta2**t
        step_size = self.learning_rate * math.sqrt(correction2) / correction1
        for param, grad, m, v in zip(self.params, grads, self._m, self._v):
            if self.l2:
                grad = grad + self.l2 * param
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            param -= step_size * m / (np.sqrt(v) + self.eps)

    def snapshot(self) -> list[np.ndarray]:
        """Copies of the current parameter values, in construction order."""
        return [param.copy() for param in self.params]


def load_parameters(params: Sequence[np.ndarray], values: Sequence[np.ndarray]) -> None:
    """Overwrite *params* in place with *values* (same order and shapes)."""
    for param, value in zip(params, values, strict=True):
        param[...] = value

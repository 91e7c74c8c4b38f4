"""Adam with bias correction, updating parameters in place."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        # first/second moments plus one scratch buffer per parameter, all
        # preallocated so a step allocates nothing
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._scratch = [np.empty_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        alpha = self.lr / c1
        inv_sqrt_c2 = 1.0 / np.sqrt(c2)
        for p, m, v, sc in zip(self.params, self._m, self._v, self._scratch):
            g = p.grad
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            np.sqrt(v, out=sc)
            sc *= inv_sqrt_c2
            sc += self.eps
            np.divide(m, sc, out=sc)
            sc *= alpha
            p.data -= sc

    def zero_grad(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.grad[...] = 0

"""Adam with a per-epoch exponential learning-rate decay."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from ..errors import ContractViolation, NumericalAbort
from .tensor import Tensor


class Adam:
    """Adam over a named parameter dict.

    ``epoch_end()`` multiplies the learning rate by ``gamma``; the step
    counter only advances in :meth:`step`.
    """

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, gamma: float = 0.96):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.gamma = float(gamma)
        self.t = 0
        self.epoch = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise NumericalAbort(f"non-finite gradient in parameter {name!r}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.shape:
                raise ContractViolation(f"gradient shape {g.shape} != parameter {name!r} {p.shape}")
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.dtype)

    def epoch_end(self) -> None:
        self.epoch += 1
        self.lr *= self.gamma

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state(self, arrays: Mapping[str, np.ndarray], lr: float, t: int, epoch: int) -> None:
        for k in self.params:
            self.m[k] = np.array(arrays[f"adam.m.{k}"], dtype=self.params[k].dtype)
            self.v[k] = np.array(arrays[f"adam.v.{k}"], dtype=self.params[k].dtype)
        self.lr = float(lr)
        self.t = int(t)
        self.epoch = int(epoch)

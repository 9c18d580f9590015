"""Adam with bias correction."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autograd import Tensor


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8):
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self) -> None:
        """Apply one update in place and zero the gradients."""
        for i, p in enumerate(self.params):
            if p.grad is None:
                name = p.name or f"#{i}"
                raise RuntimeError(f"adam: parameter {name} {p.shape} has no gradient")
            if p.grad.shape != p.shape:
                raise ValueError(f"adam: gradient shape {p.grad.shape} != parameter {p.shape}")
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_dict(self) -> dict:
        return {"m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v],
                "step": self.step_count}


def adam_step(params: Sequence[Tensor], state: Adam) -> Adam:
    """Functional spelling of :meth:`Adam.step` for callers holding params separately."""
    if [id(p) for p in params] != [id(p) for p in state.params]:
        raise ValueError("adam_step: parameter list does not match optimizer state")
    state.step()
    return state

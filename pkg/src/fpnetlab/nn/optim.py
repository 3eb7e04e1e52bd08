from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Parameter


@dataclass
class Adam:
    """Bias-corrected Adam over a fixed list of parameters."""

    params: list[Parameter]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in self.params]
            self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: list[np.ndarray] | None = None) -> None:
        grads = [p.grad for p in self.params] if grads is None else grads
        self.step_count += 1
        t = self.step_count
        c1 = 1 - self.beta1**t
        c2 = 1 - self.beta2**t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def adam_step(state: Adam, params: list[Parameter], grads: list[np.ndarray]) -> list[Parameter]:
    """Functional wrapper: apply one update of ``state`` to ``params``."""
    if [id(p) for p in params] != [id(p) for p in state.params]:
        raise ValueError("params do not match the optimizer state")
    state.step(grads)
    return params

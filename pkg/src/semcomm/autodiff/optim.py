"""Adam with bias correction and a step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


@dataclass
class OptimizerState:
    lr0: float
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_size: int = 100
    gamma: float = 0.5
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, step_size: int = 100, gamma: float = 0.5):
        if lr < 0:
            raise ContractError("learning rate must be non-negative")
        if not (0 < betas[0] < 1 and 0 < betas[1] < 1):
            raise ContractError("Adam betas must lie in (0, 1)")
        self.params = list(params)
        self.state = OptimizerState(lr0=lr, lr=lr, beta1=betas[0], beta2=betas[1], eps=eps,
                                    step_size=step_size, gamma=gamma,
                                    m=[np.zeros_like(p.data) for p in self.params],
                                    v=[np.zeros_like(p.data) for p in self.params])

    @property
    def lr(self) -> float:
        return self.state.lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        """One bias-corrected Adam update using the gradients stored on the parameters."""
        s = self.state
        s.t += 1
        c1 = 1 - s.beta1 ** s.t
        c2 = 1 - s.beta2 ** s.t
        for p, m, v in zip(self.params, s.m, s.v):
            g = p.grad
            if g is None:
                continue
            m *= s.beta1
            m += (1 - s.beta1) * g
            v *= s.beta2
            v += (1 - s.beta2) * g * g
            update = (s.lr * (m / c1) / (np.sqrt(v / c2) + s.eps)).astype(p.dtype)
            p.data = p.data - update

    def set_epoch(self, epoch: int) -> float:
        self.state.lr = step_lr(self.state, epoch)
        return self.state.lr


def step_lr(state: OptimizerState, epoch: int) -> float:
    """``lr0 * gamma ** floor(epoch / step_size)``."""
    if epoch < 0:
        raise ContractError("epoch must be >= 0")
    return state.lr0 * state.gamma ** (epoch // state.step_size)

"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Parameter


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    clip_norm: float | None = None

    @classmethod
    def for_params(cls, params: Sequence[Parameter], **kw) -> "OptimizerState":
        state = cls(**kw)
        for p in params:
            state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        return state


def global_grad_norm(params: Sequence[Parameter]) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params)))


def adam_step(params: Sequence[Parameter], state: OptimizerState) -> None:
    """Apply one in-place Adam update to every parameter."""
    for p in params:
        if p.name not in state.m:
            raise KeyError(f"adam_step: no optimizer state for parameter {p.name!r}")
    scale = 1.0
    if state.clip_norm is not None:
        norm = global_grad_norm(params)
        if norm > state.clip_norm:
            scale = state.clip_norm / (norm + 1e-12)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p in params:
        g = p.grad if scale == 1.0 else p.grad * scale
        m = state.m[p.name]
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (state.lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.dtype, copy=False)


class Adam:
    """Thin object wrapper around :func:`adam_step`."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, clip_norm: float | None = None):
        self.params = list(params)
        self.state = OptimizerState.for_params(self.params, lr=lr, beta1=betas[0],
                                               beta2=betas[1], eps=eps, clip_norm=clip_norm)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = np.zeros_like(p.data)

    def step(self) -> None:
        adam_step(self.params, self.state)

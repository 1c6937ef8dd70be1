"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def analytic_grads(fn: Callable[..., Tensor], point: Sequence[np.ndarray]) -> list[np.ndarray]:
    inputs = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in point]
    for t in inputs:
        t.grad = np.zeros_like(t.data)
    backward(fn(*inputs))
    return [t.grad for t in inputs]


def numeric_grads(fn: Callable[..., Tensor], point: Sequence[np.ndarray],
                  h: float = 1e-5) -> list[np.ndarray]:
    base = [np.array(x, dtype=np.float64) for x in point]
    grads = []
    for i, x in enumerate(base):
        g = np.zeros_like(x)
        flat = x.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = float(fn(*[Tensor(b) for b in base]).data)
            flat[j] = orig - h
            down = float(fn(*[Tensor(b) for b in base]).data)
            flat[j] = orig
            g.reshape(-1)[j] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def grad_check(fn: Callable[..., Tensor], point, h: float = 1e-5,
               analytic: Callable | None = None) -> float:
    """Max over coordinates of ``|analytic - numeric| / max(1, |analytic|)``.

    ``fn`` maps tensors to a scalar tensor.  ``analytic`` may override the
    reverse-mode gradient (used to test the checker itself).
    """
    if isinstance(point, np.ndarray):
        point = [point]
    got = (analytic or analytic_grads)(fn, point)
    want = numeric_grads(fn, point, h)
    worst = 0.0
    for a, n in zip(got, want):
        err = np.abs(a - n) / np.maximum(1.0, np.abs(a))
        worst = max(worst, float(err.max(initial=0.0)))
    return worst

"""Composite differentiable operations built from the tensor primitives."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0
_MASK_FILL = -1e9


class ConfigError(ValueError):
    """Invalid model or layer configuration."""


def split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    x = x.reshape(*lead, n, heads, d // heads)
    return T.swapaxes(x, -2, -3)


def merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    return T.swapaxes(x, -2, -3).reshape(*lead, n, h * dh)


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int = 1, key_mask=None,
              return_weights: bool = False):
    """Multi-head scaled dot-product attention on already projected inputs.

    ``q`` is ``(..., n_q, d)``, ``k`` and ``v`` are ``(..., n_k, d)``.  The
    optional boolean ``key_mask`` of shape ``(..., n_k)`` marks keys that may
    be attended to.  Returns the ``(..., n_q, d)`` output, and the weights of
    shape ``(..., heads, n_q, n_k)`` when ``return_weights`` is set.
    """
    d = q.shape[-1]
    if d % heads:
        raise ConfigError(f"attention: model dim {d} not divisible by {heads} heads")
    if k.shape[-1] != d or v.shape[-1] != d or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: incompatible q {q.shape}, k {k.shape}, v {v.shape}")
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    scale = 1.0 / np.sqrt(d // heads)
    scores = T.matmul(qh, T.swapaxes(kh, -1, -2)) * scale
    if key_mask is not None:
        mask = np.asarray(key_mask, dtype=bool)
        bias = np.where(mask, 0.0, _MASK_FILL).astype(scores.dtype)
        # broadcast over heads and queries
        scores = scores + bias[..., None, None, :]
    weights = T.softmax(scores, axis=-1)
    out = merge_heads(T.matmul(weights, vh))
    if return_weights:
        return out, weights
    return out


def sinusoidal_pe(n: int, d: int, dtype=np.float32) -> np.ndarray:
    """Standard transformer positional table, ``pe[n, 2i] = sin(n / 10000^(2i/d))``."""
    if d % 2:
        raise ConfigError(f"sinusoidal_pe: dimension {d} must be even")
    pos = np.arange(n, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(pos / freq)
    pe[:, 1::2] = np.cos(pos / freq)
    return pe.astype(dtype)


def reparameterized_sample(mu: Tensor, logvar: Tensor, rng: np.random.Generator) -> Tensor:
    """Draw ``mu + exp(logvar / 2) * eps``; gradients reach mu and logvar only."""
    if mu.shape != logvar.shape:
        raise ShapeError(f"reparameterized_sample: mu {mu.shape} vs logvar {logvar.shape}")
    eps = rng.standard_normal(mu.shape).astype(mu.dtype)
    std = T.exp(T.clip(logvar, LOGVAR_MIN, LOGVAR_MAX) * 0.5)
    return mu + std * Tensor(eps)


def kl_standard_normal(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over the last axis.

    Leading (batch) axes are averaged.
    """
    if mu.shape != logvar.shape:
        raise ShapeError(f"kl_standard_normal: mu {mu.shape} vs logvar {logvar.shape}")
    per_dim = mu * mu + T.exp(logvar) - 1.0 - logvar
    total = T.tsum(per_dim, axis=-1) * 0.5
    return T.mean(total) if total.ndim else total


def l1_loss(pred: Tensor, target) -> Tensor:
    target = T.as_tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: pred {pred.shape} vs target {target.shape}")
    return T.mean(T.abs(pred - target))


def mse_loss(pred: Tensor, target) -> Tensor:
    target = T.as_tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    return T.mean(diff * diff)


def check_onehot(onehot) -> np.ndarray:
    onehot = np.asarray(onehot)
    ok = np.all((onehot == 0) | (onehot == 1), axis=-1) & (onehot.sum(axis=-1) == 1)
    if not np.all(ok):
        raise ValueError("cross_entropy: target rows must be one-hot")
    return onehot


def cross_entropy(logits: Tensor, onehot) -> Tensor:
    """Mean over rows of ``-log softmax(logits)[true class]``."""
    onehot = check_onehot(onehot)
    if onehot.shape != logits.shape:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {onehot.shape}")
    logp = T.log_softmax(logits, axis=-1)
    picked = T.tsum(logp * Tensor(onehot.astype(logits.dtype)), axis=-1)
    return -T.mean(picked)


def onehot(indices, classes: int, dtype=np.float32) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros(indices.shape + (classes,), dtype=dtype)
    np.put_along_axis(out, indices[..., None], 1, axis=-1)
    return out

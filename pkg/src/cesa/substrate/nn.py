"""Minimal layer library on top of the autodiff primitives."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .functional import ConfigError, attention
from .tensor import Parameter, Tensor


class Buffer:
    """Non-trainable array that is saved and restored with the module state."""

    def __init__(self, data):
        self.data = np.asarray(data)


class Module:
    """Base class; parameters are discovered from attributes in definition order."""

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, Buffer]]:
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Buffer):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_buffers(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{path}.{i}.")

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters() if p.requires_grad]

    def set_trainable(self, flag: bool) -> None:
        """Frozen parameters still pass gradients through to their inputs."""
        for p in self.parameters():
            p.requires_grad = flag

    def assign_names(self, prefix: str = "") -> None:
        seen = set()
        for name, p in self.named_parameters(prefix):
            if name in seen:
                raise ValueError(f"duplicate parameter name {name}")
            seen.add(name)
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: p.data.copy() for name, p in self.named_parameters()}
        out.update((f"buffer.{name}", b.data.copy()) for name, b in self.named_buffers())
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        params.update((f"buffer.{name}", b) for name, b in self.named_buffers())
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise KeyError(f"state mismatch; missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.data.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = value.astype(p.data.dtype).copy()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _uniform(rng, shape, bound, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32,
                 bias: bool = True, zero: bool = False, gain: float = 1.0):
        bound = gain * np.sqrt(6.0 / (n_in + n_out))
        w = np.zeros((n_in, n_out), dtype) if zero else _uniform(rng, (n_in, n_out), bound, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(n_out, dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float32, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(d, dtype))
        self.beta = Parameter(np.zeros(d, dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = Parameter((rng.standard_normal((n, d)) * 0.1).astype(dtype))

    def __call__(self, ids) -> Tensor:
        return T.embedding(self.weight, ids)


class MLP(Module):
    """Two-layer perceptron with GELU."""

    def __init__(self, n_in: int, hidden: int, n_out: int, rng: np.random.Generator,
                 dtype=np.float32, zero_out: bool = False):
        self.fc1 = Linear(n_in, hidden, rng, dtype)
        self.fc2 = Linear(hidden, n_out, rng, dtype, zero=zero_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if d % heads:
            raise ConfigError(f"model dim {d} not divisible by {heads} heads")
        self.heads = heads
        self.wq = Linear(d, d, rng, dtype)
        self.wk = Linear(d, d, rng, dtype)
        self.wv = Linear(d, d, rng, dtype)
        self.wo = Linear(d, d, rng, dtype)

    def __call__(self, x: Tensor, context: Tensor, key_mask=None, return_weights=False):
        out = attention(self.wq(x), self.wk(context), self.wv(context), self.heads,
                        key_mask=key_mask, return_weights=return_weights)
        if return_weights:
            out, weights = out
            return self.wo(out), weights
        return self.wo(out)


class FeedForward(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.norm = LayerNorm(d, dtype)
        self.mlp = MLP(d, hidden, d, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.mlp(self.norm(x))


class AttentionBlock(Module):
    """Pre-norm residual attention: ``x + Attn(LN(x), LN(context))``."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, dtype=np.float32,
                 cross: bool = False):
        self.norm = LayerNorm(d, dtype)
        self.context_norm = LayerNorm(d, dtype) if cross else None
        self.attn = MultiHeadAttention(d, heads, rng, dtype)

    def __call__(self, x: Tensor, context: Tensor | None = None, key_mask=None) -> Tensor:
        h = self.norm(x)
        if context is None:
            ctx = h
        else:
            ctx = self.context_norm(context) if self.context_norm is not None else context
        return x + self.attn(h, ctx, key_mask=key_mask)


class DecoderLayer(Module):
    """Self-attention, optional cross-attention, then feed-forward."""

    def __init__(self, d: int, heads: int, ffn: int, rng: np.random.Generator,
                 dtype=np.float32, cross: bool = True):
        self.self_attn = AttentionBlock(d, heads, rng, dtype)
        self.cross_attn = AttentionBlock(d, heads, rng, dtype, cross=True) if cross else None
        self.ffn = FeedForward(d, ffn, rng, dtype)

    def __call__(self, x: Tensor, context: Tensor | None = None, self_mask=None,
                 context_mask=None) -> Tensor:
        x = self.self_attn(x, key_mask=self_mask)
        if self.cross_attn is not None and context is not None:
            x = self.cross_attn(x, context, key_mask=context_mask)
        return self.ffn(x)


class EncoderLayer(DecoderLayer):
    def __init__(self, d: int, heads: int, ffn: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__(d, heads, ffn, rng, dtype, cross=False)

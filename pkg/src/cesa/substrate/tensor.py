"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ``ndarray``.  Every primitive that touches a tensor
requiring gradients creates a graph node holding its parents and a
vector-Jacobian product; :func:`backward` walks those nodes in reverse
topological order.  While a :class:`Tape` is active, nodes are also appended
to it in execution order, which is useful for inspection and tests.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True
_TAPES: list["Tape"] = []


class ShapeError(ValueError):
    """Raised when a primitive receives inputs of incompatible shape."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "op", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind in "iub":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self.op = "leaf"

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


class Parameter(Tensor):
    """A named leaf tensor that accumulates gradients."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


class Tape:
    """Ordered record of the graph nodes created while the tape is active."""

    def __init__(self):
        self.records: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def ops(self) -> list[str]:
        return [node.op for node in self.records]


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _coerce(a, b) -> tuple[Tensor, Tensor]:
    """Promote python scalars / arrays so they match the partner tensor dtype."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not isinstance(a, Tensor):
        a, b = Tensor(a), Tensor(b)
    return a, b


def _node(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
        for tape in _TAPES:
            tape.records.append(out)
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise arithmetic -------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b),
                 lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _node(out, (a, b),
                 lambda g: (unbroadcast(g / bd, ad.shape),
                            unbroadcast(-g * out / bd, bd.shape)), "div")


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    return _node(ad ** exponent, (a,),
                 lambda g: (g * exponent * ad ** (exponent - 1),), "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _node(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    ad = a.data
    return _node(np.abs(ad), (a,), lambda g: (g * np.sign(ad),), "abs")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh approximation of GELU."""
    x = a.data
    c = x.dtype.type(_GELU_C) if x.dtype.kind == "f" else _GELU_C
    x2 = x * x
    inner = c * (x + 0.044715 * x2 * x)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def vjp(g):
        dinner = c * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _node(out, (a,), vjp, "gelu")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient is zero where the clamp is active."""
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return _node(np.clip(ad, lo, hi), (a,), lambda g: (g * inside,), "clip")


# -- reductions and shape manipulation --------------------------------------
def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), vjp, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([shape[i] for i in axes]))

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _node(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), vjp, "mean")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {tuple(shape)}") from None
    return _node(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return _node(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),), "swapaxes")


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return _node(a.data[index], (a,), vjp, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {[x.shape for x in tensors]} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([t.data for t in tensors], axis=ax), tensors,
                 lambda g: tuple(np.split(g, bounds, axis=ax)), "concat")


def split(a: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    if sum(sizes) != a.shape[axis]:
        raise ShapeError(f"split: sizes {list(sizes)} do not sum to extent {a.shape[axis]}")
    out, start = [], 0
    ax = axis % a.ndim
    for n in sizes:
        index = (slice(None),) * ax + (slice(start, start + n),)
        out.append(getitem(a, index))
        start += n
    return out


def broadcast_to(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _node(np.broadcast_to(a.data, shape).copy(), (a,),
                 lambda g: (unbroadcast(g, old),), "broadcast")


# -- linear algebra -----------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return unbroadcast(ga, ad.shape), unbroadcast(gb, bd.shape)

    return _node(ad @ bd, (a, b), vjp, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` as a single fused primitive."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        out = out + bias.data

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = xd.reshape(-1, xd.shape[-1])
        gx = (g2 @ wd.T).reshape(xd.shape)
        gw = x2.T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, vjp, "linear")


# -- normalisation / probability ---------------------------------------------
def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), vjp, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def vjp(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), vjp, "log_softmax")


def layer_norm(a: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply an optional affine."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data
    width = x.shape[-1]

    def vjp(g):
        gx = g if gamma is None else g * gamma.data
        gxhat_mean = gx.mean(axis=-1, keepdims=True)
        gxhat_x = (gx * xhat).mean(axis=-1, keepdims=True)
        grads = [inv * (gx - gxhat_mean - xhat * gxhat_x)]
        if gamma is not None:
            grads.append((g * xhat).reshape(-1, width).sum(axis=0))
        if beta is not None:
            grads.append(g.reshape(-1, width).sum(axis=0))
        return tuple(grads)

    parents = [a] + [p for p in (gamma, beta) if p is not None]
    return _node(out, parents, vjp, "layer_norm")


def embedding(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ShapeError(f"embedding: ids out of range for table of {weight.shape[0]} rows")
    shape, dtype = weight.shape, weight.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _node(weight.data[ids], (weight,), vjp, "embedding")


def where(mask: np.ndarray, a, b) -> Tensor:
    """Select elementwise with a constant boolean mask."""
    a, b = _coerce(a, b)
    mask = np.asarray(mask, dtype=bool)
    sa, sb = a.shape, b.shape
    return _node(np.where(mask, a.data, b.data), (a, b),
                 lambda g: (unbroadcast(np.where(mask, g, 0), sa),
                            unbroadcast(np.where(mask, 0, g), sb)), "where")


# -- backward -----------------------------------------------------------------
def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, seed_grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if seed_grad is None:
        if loss.size != 1:
            raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
        seed_grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): seed_grad}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.data)

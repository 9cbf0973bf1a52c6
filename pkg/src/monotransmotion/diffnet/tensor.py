"""Dense float64 tensors with reverse-mode gradients.

A :class:`Value` wraps a numpy array, remembers the values it was computed
from and a closure that pushes its gradient back to them.  Calling
:meth:`Value.backward` on a scalar walks the graph in reverse topological
order and accumulates ``grad`` on every ancestor that requires it.
"""
from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # sum out axes that numpy broadcasting added or stretched
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Value:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple["Value", ...] = (), _backward: Callable | None = None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    # -- basics -----------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Value":
        return Value(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Value(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Value] = []
        seen: set[int] = set()
        stack: list[tuple[Value, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): _as_array(grad)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            if not node._parents:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._backward is None:
                    parent._accumulate(pg)
                elif id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return vsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    def transpose(self, *axes): return transpose(self, axes if axes else None)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (evaluation-only forward passes)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _node(data, parents: Sequence[Value], backward: Callable) -> Value:
    req = grad_enabled() and any(p.requires_grad for p in parents)
    if not req:
        return Value(data)
    return Value(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def _check_broadcast(op: str, a: Value, b: Value) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise binary -----------------------------------------------------
def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast("add", a, b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast("sub", a, b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast("mul", a, b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def matmul(a, b) -> Value:
    """Batched matrix product with numpy ``@`` broadcasting."""
    a, b = as_value(a), as_value(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2 and a.ndim > 2:
            # shared weight: fold the batch axes instead of summing per-batch products
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return _unbroadcast(ga, a.shape), gb

    return _node(out, (a, b), back)


# -- elementwise unary ------------------------------------------------------
def relu(x) -> Value:
    x = as_value(x)
    mask = x.data > 0
    return _node(x.data * mask, (x,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x) -> Value:
    """GELU, tanh approximation."""
    x = as_value(x)
    d = x.data
    d2 = d * d
    t = np.tanh(_GELU_C * d * (1.0 + 0.044715 * d2))
    out = 0.5 * d * (1.0 + t)

    def back(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * d2)
        return (g * (0.5 * (1.0 + t) + 0.5 * d * (1.0 - t ** 2) * dinner),)

    return _node(out, (x,), back)


def identity(x) -> Value:
    return as_value(x)


def exp(x) -> Value:
    x = as_value(x)
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,))


def log(x) -> Value:
    x = as_value(x)
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x) -> Value:
    x = as_value(x)
    out = np.sqrt(x.data)
    return _node(out, (x,), lambda g: (g * 0.5 / out,))


def vabs(x) -> Value:
    x = as_value(x)
    return _node(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def clamp_min(x, lo: float) -> Value:
    x = as_value(x)
    mask = x.data > lo
    return _node(np.where(mask, x.data, lo), (x,), lambda g: (g * mask,))


def softplus(x) -> Value:
    x = as_value(x)
    d = x.data
    out = np.logaddexp(0.0, d)
    sig = np.exp(-np.logaddexp(0.0, -d))
    return _node(out, (x,), lambda g: (g * sig,))


def atan(x) -> Value:
    x = as_value(x)
    return _node(np.arctan(x.data), (x,), lambda g: (g / (1.0 + x.data ** 2),))


def sin(x) -> Value:
    x = as_value(x)
    return _node(np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),))


def cos(x) -> Value:
    x = as_value(x)
    return _node(np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),))


def norm(x, axis: int = -1) -> Value:
    """Euclidean norm over ``axis``; the subgradient at zero is taken as zero."""
    x = as_value(x)
    out = np.sqrt((x.data ** 2).sum(axis=axis))

    def back(g):
        o = np.expand_dims(out, axis)
        safe = np.where(o > 0, o, 1.0)
        return (np.expand_dims(g, axis) * np.where(o > 0, x.data / safe, 0.0),)

    return _node(out, (x,), back)


def square(x) -> Value:
    x = as_value(x)
    return _node(x.data ** 2, (x,), lambda g: (2.0 * g * x.data,))


# -- reductions -------------------------------------------------------------
def _expand(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def vsum(x, axis=None, keepdims: bool = False) -> Value:
    x = as_value(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    return _node(out, (x,), lambda g: (_expand(g, x.shape, axis, keepdims),))


def mean(x, axis=None, keepdims: bool = False) -> Value:
    x = as_value(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    n = x.data.size // max(out.size, 1)
    return _node(out, (x,), lambda g: (_expand(g, x.shape, axis, keepdims) / n,))


# -- normalisation ----------------------------------------------------------
def softmax(x) -> Value:
    """Softmax over the last axis."""
    x = as_value(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _node(out, (x,), back)


def layer_norm(x, gain=None, bias=None, eps: float = 1e-5) -> Value:
    """Normalise over the last axis, then apply optional gain and bias."""
    x = as_value(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def back(g):
        gx = inv * (g - g.mean(axis=-1, keepdims=True)
                    - xhat * (g * xhat).mean(axis=-1, keepdims=True))
        return (gx,)

    out = _node(xhat, (x,), back)
    if gain is not None:
        out = mul(out, gain)
    if bias is not None:
        out = add(out, bias)
    assert out.shape[-1] == n
    return out


# -- shape manipulation -----------------------------------------------------
def reshape(x, shape) -> Value:
    x = as_value(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None
    return _node(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> Value:
    x = as_value(x)
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _node(out, (x,), lambda g: (np.transpose(g, inv),))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def getitem(x, idx) -> Value:
    """Basic or integer-array indexing (slice op)."""
    x = as_value(x)
    out = x.data[idx]

    basic = _is_basic_index(idx)

    def back(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _node(np.array(out, copy=True), (x,), back)


def concat(values: Iterable, axis: int = -1) -> Value:
    vals = [as_value(v) for v in values]
    ax = axis % vals[0].ndim
    for v in vals[1:]:
        if v.ndim != vals[0].ndim or any(
                s != t for i, (s, t) in enumerate(zip(v.shape, vals[0].shape)) if i != ax):
            raise DimensionError(f"concat: incompatible shapes {[w.shape for w in vals]} on axis {axis}")
    out = np.concatenate([v.data for v in vals], axis=ax)
    splits = np.cumsum([v.shape[ax] for v in vals])[:-1]
    return _node(out, vals, lambda g: tuple(np.split(g, splits, axis=ax)))


def stack(values: Iterable, axis: int = 0) -> Value:
    vals = [as_value(v) for v in values]
    expanded = [reshape(v, v.shape[:axis % (v.ndim + 1)] + (1,) + v.shape[axis % (v.ndim + 1):]) for v in vals]
    return concat(expanded, axis=axis)


def where(mask, a, b) -> Value:
    """Select ``a`` where the constant boolean ``mask`` holds, else ``b``."""
    a, b = as_value(a), as_value(b)
    m = np.asarray(mask, dtype=bool)
    out = np.where(m, a.data, b.data)
    return _node(out, (a, b), lambda g: (_unbroadcast(np.where(m, g, 0.0), a.shape),
                                         _unbroadcast(np.where(m, 0.0, g), b.shape)))


ACTIVATIONS: dict[str, Callable[[Value], Value]] = {
    "relu": relu,
    "gelu": gelu,
    "linear": identity,
}

"""Network blocks on top of :mod:`.tensor`: parameters, MLPs, a pre-norm
Transformer encoder and an Adam optimiser."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Value


class ConfigError(ValueError):
    pass


class CapacityError(ValueError):
    pass


class OptimizerStateError(RuntimeError):
    pass


@dataclass
class ParameterStore:
    """Named trainable parameters with Adam moment accumulators."""

    params: dict[str, Value] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: dict[str, int] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, data: np.ndarray) -> Value:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Value(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = p
        self.m[name] = np.zeros_like(p.data)
        self.v[name] = np.zeros_like(p.data)
        self.t[name] = 0
        return p

    def __getitem__(self, name: str) -> Value:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self, prefix: str = "") -> list[str]:
        return sorted(n for n in self.params if n.startswith(prefix))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def copy(self) -> "ParameterStore":
        out = ParameterStore(step=self.step)
        for n in self.params:
            out.params[n] = Value(self.params[n].data.copy(), requires_grad=True, name=n)
            out.m[n] = self.m[n].copy()
            out.v[n] = self.v[n].copy()
            out.t[n] = self.t[n]
        return out

    def merge(self, other: "ParameterStore") -> None:
        for n in other.params:
            if n in self.params:
                raise KeyError(f"duplicate parameter {n!r}")
            self.params[n] = other.params[n]
            self.m[n] = other.m[n]
            self.v[n] = other.v[n]
            self.t[n] = other.t[n]


# -- initialisation ---------------------------------------------------------
def init_linear(store: ParameterStore, name: str, d_in: int, d_out: int,
                rng: np.random.Generator, zero: bool = False) -> None:
    limit = math.sqrt(6.0 / (d_in + d_out))
    w = np.zeros((d_in, d_out)) if zero else rng.uniform(-limit, limit, size=(d_in, d_out))
    store.add(f"{name}.w", w)
    store.add(f"{name}.b", np.zeros(d_out))


def linear(x: Value, store: ParameterStore, name: str) -> Value:
    w = store[f"{name}.w"]
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear {name}: input trailing dim {x.shape[-1]} != {w.shape[0]}")
    return T.add(T.matmul(x, w), store[f"{name}.b"])


def init_mlp(store: ParameterStore, name: str, dims: list[int], rng: np.random.Generator,
             zero_last: bool = False) -> None:
    """``dims`` = [d_in, hidden..., d_out]."""
    for i in range(len(dims) - 1):
        last = i == len(dims) - 2
        init_linear(store, f"{name}.{i}", dims[i], dims[i + 1], rng, zero=zero_last and last)


def mlp_forward(x: Value, store: ParameterStore, name: str, activation: str = "relu") -> Value:
    """Affine/activation chain; the final affine layer has no activation."""
    act = T.ACTIVATIONS[activation]
    n = 0
    while f"{name}.{n}.w" in store:
        n += 1
    if n == 0:
        raise KeyError(f"no MLP named {name!r}")
    h = T.as_value(x)
    for i in range(n):
        h = linear(h, store, f"{name}.{i}")
        if i < n - 1:
            h = act(h)
    return h


# -- Transformer encoder ----------------------------------------------------
def init_encoder(store: ParameterStore, name: str, d_model: int, n_layers: int, t_max: int,
                 ff_hidden: int, rng: np.random.Generator) -> None:
    store.add(f"{name}.pos", rng.normal(0.0, 0.02, size=(t_max, d_model)))
    for layer in range(n_layers):
        p = f"{name}.layer{layer}"
        store.add(f"{p}.ln1.g", np.ones(d_model))
        store.add(f"{p}.ln1.b", np.zeros(d_model))
        init_linear(store, f"{p}.qkv", d_model, 3 * d_model, rng)
        init_linear(store, f"{p}.proj", d_model, d_model, rng)
        store.add(f"{p}.ln2.g", np.ones(d_model))
        store.add(f"{p}.ln2.b", np.zeros(d_model))
        init_linear(store, f"{p}.ff.0", d_model, ff_hidden, rng)
        init_linear(store, f"{p}.ff.1", ff_hidden, d_model, rng)
    store.add(f"{name}.ln_f.g", np.ones(d_model))
    store.add(f"{name}.ln_f.b", np.zeros(d_model))


def self_attention(x: Value, store: ParameterStore, name: str, n_heads: int) -> Value:
    """Full (non-causal) multi-head self-attention over axis -2 of ``x`` [..., L, d]."""
    *lead, L, d = x.shape
    if d % n_heads:
        raise ConfigError(f"d_model={d} not divisible by n_heads={n_heads}")
    dh = d // n_heads
    qkv = linear(x, store, f"{name}.qkv")
    qkv = T.reshape(qkv, (*lead, L, 3, n_heads, dh))
    nl = len(lead)
    # -> [3, ..., heads, L, dh]
    qkv = T.transpose(qkv, (nl + 1, *range(nl), nl + 2, nl, nl + 3))
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = T.mul(T.matmul(q, T.transpose(k, (*range(nl + 1), nl + 2, nl + 1))), 1.0 / math.sqrt(dh))
    attn = T.softmax(scores)
    ctx = T.matmul(attn, v)  # [..., heads, L, dh]
    ctx = T.transpose(ctx, (*range(nl), nl + 1, nl, nl + 2))
    ctx = T.reshape(ctx, (*lead, L, d))
    return linear(ctx, store, f"{name}.proj")


def encoder_forward(tokens: Value, store: ParameterStore, name: str, n_layers: int,
                    n_heads: int, use_pos: bool = True) -> Value:
    """Add positional embeddings, then ``n_layers`` pre-norm attention/GELU
    feed-forward blocks with residuals.  Tokens are [..., L, d_model]."""
    tokens = T.as_value(tokens)
    L, d = tokens.shape[-2:]
    if d % n_heads:
        raise ConfigError(f"d_model={d} not divisible by n_heads={n_heads}")
    h = tokens
    if use_pos:
        pos = store[f"{name}.pos"]
        if L > pos.shape[0]:
            raise CapacityError(f"sequence length {L} exceeds positional capacity {pos.shape[0]}")
        h = T.add(h, pos[:L])
    if n_layers == 0:
        return h
    for layer in range(n_layers):
        p = f"{name}.layer{layer}"
        a = T.layer_norm(h, store[f"{p}.ln1.g"], store[f"{p}.ln1.b"])
        h = T.add(h, self_attention(a, store, p, n_heads))
        f = T.layer_norm(h, store[f"{p}.ln2.g"], store[f"{p}.ln2.b"])
        f = linear(T.gelu(linear(f, store, f"{p}.ff.0")), store, f"{p}.ff.1")
        h = T.add(h, f)
    return T.layer_norm(h, store[f"{name}.ln_f.g"], store[f"{name}.ln_f.b"])


# -- optimisation -----------------------------------------------------------
def clip_grad_norm(store: ParameterStore, max_norm: float, names: list[str] | None = None) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    names = store.names() if names is None else names
    sq = 0.0
    for n in names:
        g = store[n].grad
        if g is not None:
            sq += float(np.sum(g * g))
    norm = math.sqrt(sq)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for n in names:
            if store[n].grad is not None:
                store[n].grad = store[n].grad * scale
    return norm


def adam_update(store: ParameterStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8, names: list[str] | None = None, allow_missing: bool = False) -> None:
    """One bias-corrected Adam step over ``names`` (default: all); each
    parameter keeps its own step count so frozen stretches do not skew the
    bias correction.  Gradients
    are zeroed afterwards.  A parameter with no gradient is an error unless
    ``allow_missing``, in which case it is treated as a zero gradient."""
    names = store.names() if names is None else names
    store.step += 1
    for n in names:
        p = store[n]
        t = store.t[n] = store.t[n] + 1
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        g = p.grad
        if g is None:
            if not allow_missing:
                raise OptimizerStateError(f"parameter {n!r} has no gradient")
            g = np.zeros_like(p.data)
        m = store.m[n] = beta1 * store.m[n] + (1.0 - beta1) * g
        v = store.v[n] = beta2 * store.v[n] + (1.0 - beta2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None

"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Value


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5, indices=None) -> np.ndarray:
    """d f / d arr by central differences; ``arr`` is perturbed in place.

    With ``indices`` only those entries are differenced (the rest stay 0).
    """
    g = np.zeros_like(arr)
    for idx in (np.ndindex(arr.shape) if indices is None else indices):
        orig = arr[idx]
        arr[idx] = orig + h
        fp = f()
        arr[idx] = orig - h
        fm = f()
        arr[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8, scale: float = 0.0) -> float:
    """max |a - n| / max(max |n|, max |a|, scale, floor)."""
    scale = max(float(np.max(np.abs(numeric), initial=0.0)), float(np.max(np.abs(analytic), initial=0.0)),
                scale, floor)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def check_gradients(loss_fn: Callable[[], Value], leaves: Sequence[Value], h: float = 1e-5,
                    max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Worst relative error between backprop and finite differences over ``leaves``.

    ``loss_fn`` must rebuild the graph from the leaves' current data on
    every call and return a scalar :class:`Value`. ``max_entries`` caps the
    number of randomly chosen entries differenced per leaf, which keeps
    checks over whole networks affordable.
    """
    for leaf in leaves:
        leaf.grad = None
    out = loss_fn()
    out.backward()
    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        # subsampled entries are scaled by the whole leaf's gradient, as a full check would be
        leaf_scale = float(np.max(np.abs(analytic), initial=0.0))
        if max_entries is None or leaf.data.size <= max_entries:
            numeric = numeric_grad(lambda: loss_fn().item(), leaf.data, h)
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            flat = rng.choice(leaf.data.size, max_entries, replace=False)
            idx = [np.unravel_index(i, leaf.data.shape) for i in flat]
            numeric = numeric_grad(lambda: loss_fn().item(), leaf.data, h, idx)
            analytic = np.array([analytic[i] for i in idx])
            numeric = np.array([numeric[i] for i in idx])
        worst = max(worst, relative_error(analytic, numeric, scale=leaf_scale))
    for leaf in leaves:
        leaf.grad = None
    return worst

"""Finite-difference gradient checking.

Runs in float64: the production dtype is float32, but central differences
with step 1e-4 need the extra precision to resolve errors below 1e-3.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


def numeric_grad(fn, t: Tensor, step: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar ``fn()`` w.r.t. ``t.data``."""
    flat = t.data.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(fn().data)
        flat[i] = orig - step
        lo = float(fn().data)
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * step)
    return out.reshape(t.data.shape)


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1, |a|, |n|), elementwise."""
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / denom).max(initial=0.0))


def check_gradients(fn, params: list[Tensor], step: float = 1e-4) -> float:
    """Compare backprop against central differences for every parameter.

    ``fn`` must rebuild the graph and return the scalar loss each call.
    Returns the worst relative error across all parameter entries.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError("gradient checks must run in float64")
        p.zero_grad()
    loss = fn()
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        numeric = numeric_grad(fn, p, step=step)
        worst = max(worst, max_rel_error(analytic, numeric))
    return worst

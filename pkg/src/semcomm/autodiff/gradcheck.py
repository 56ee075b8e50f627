"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``; 0 when both vanish."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def numeric_grad(fn: Callable[[], Tensor], target: Tensor, h: float = 1e-3,
                 indices: Sequence[tuple[int, ...]] | None = None) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. ``target`` (all or selected entries)."""
    target.data = np.ascontiguousarray(target.data)
    flat = target.data.reshape(-1)
    picks = range(flat.size) if indices is None else [np.ravel_multi_index(i, target.shape) for i in indices]
    out = []
    for k in picks:
        orig = flat[k]
        flat[k] = orig + h
        fp = float(fn().data)
        flat[k] = orig - h
        fm = float(fn().data)
        flat[k] = orig
        out.append((fp - fm) / (2 * h))
    return np.asarray(out)


def check_gradients(fn: Callable[[], Tensor], targets: Sequence[Tensor], h: float = 1e-3,
                    max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Worst relative error over ``targets`` between backprop and finite differences.

    With ``max_entries`` only a random subset of each target's entries is probed.
    """
    for t in targets:
        t.grad = None
    fn().backward()
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for t in targets:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        if max_entries is not None and t.size > max_entries:
            flat_idx = rng.choice(t.size, size=max_entries, replace=False)
            idx = [np.unravel_index(i, t.shape) for i in flat_idx]
            a = analytic.reshape(-1)[flat_idx]
        else:
            idx = None
            a = analytic.reshape(-1)
        n = numeric_grad(fn, t, h, idx)
        worst = max(worst, relative_error(a, n))
    return worst

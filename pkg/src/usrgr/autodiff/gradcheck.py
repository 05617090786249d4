"""Central finite-difference checks for analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, grad


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, coords: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of ``fn()`` w.r.t. the flat entries ``coords`` of ``x``."""
    flat = x.data.reshape(-1)
    out = np.empty(len(coords))
    for k, i in enumerate(coords):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(fn().data)
        flat[i] = orig - eps
        fm = float(fn().data)
        flat[i] = orig
        out[k] = (fp - fm) / (2 * eps)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``; 0 when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
                    max_coords: int | None = 40, seed: int = 0) -> float:
    """Worst relative error over ``inputs`` between backprop and finite differences.

    ``fn`` must rebuild the graph on each call from the current values of
    ``inputs`` (which should be float64). Large tensors are checked on a
    random subset of ``max_coords`` entries.
    """
    rng = np.random.default_rng(seed)
    analytic = grad(fn(), list(inputs))
    worst = 0.0
    for x, ga in zip(inputs, analytic):
        n = x.size
        if max_coords is None or n <= max_coords:
            coords = np.arange(n)
        else:
            coords = np.sort(rng.choice(n, size=max_coords, replace=False))
        gn = numeric_grad(fn, x, coords, eps)
        worst = max(worst, relative_error(ga.reshape(-1)[coords], gn))
    return worst

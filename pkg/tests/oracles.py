"""Independent reference implementations used only by the tests."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def _compositions(m: int, total: int) -> np.ndarray:
    """All non-negative integer m-tuples with sum <= total, one per row."""
    rows = np.zeros((1, 0), dtype=np.int16)
    for _ in range(m):
        used = rows.sum(axis=1)
        reps = total - used + 1
        head = np.repeat(rows, reps, axis=0)
        tail = np.concatenate([np.arange(r) for r in reps]).astype(np.int16)
        rows = np.column_stack([head, tail])
    return rows


def grid_simplex_objective(X1, X0, V, step: float = 0.01, chunk: int = 400_000) -> float:
    """Brute-force min of ``(X1 - X0 w)' diag(V) (X1 - X0 w)`` over the simplex grid.

    The first ``n - 2`` coordinates are enumerated; along the remaining edge
    the objective is a convex quadratic in one variable, so only the two grid
    points bracketing its minimiser need checking. That is the exact grid
    minimum at a fraction of the cost.
    """
    X1 = np.asarray(X1, float)
    X0 = np.asarray(X0, float)
    V = np.asarray(V, float)
    n = X0.shape[1]
    N = int(round(1.0 / step))
    if n == 1:
        r = X1 - X0[:, 0]
        return float(r @ (V * r))
    head = _compositions(n - 2, N)
    a, b = X0[:, n - 2], X0[:, n - 1]
    d = a - b
    dvd = float(d @ (V * d))
    best = np.inf
    for s in range(0, len(head), chunk):
        H = head[s:s + chunk]
        rest = N - H.sum(axis=1)
        # residual with all remaining mass on the last donor
        R = X1[None, :] - (H * step) @ X0[:, : n - 2].T - (rest * step)[:, None] * b[None, :]
        obj0 = (R * R) @ V
        p = (R * V) @ d
        tstar = p / dvd / step if dvd > 0 else np.zeros(len(H))
        lo = np.clip(np.floor(tstar), 0, rest)
        for t in (lo, np.minimum(lo + 1, rest)):
            x = t * step
            obj = obj0 - 2.0 * x * p + x * x * dvd
            best = min(best, float(obj.min()))
    return best

"""Least squares on the probability simplex.

``min ||A w - b||^2  s.t.  w >= 0, sum(w) = 1`` solved with a Lawson-Hanson
style active-set method: variables enter the passive set one at a time by
largest multiplier violation, and each equality-constrained subproblem is
solved through its KKT system (``lstsq``, so rank-deficient ``A`` is fine).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg.lapack import dgesv

from ..errors import DomainError, NumericError


@dataclass(frozen=True)
class SimplexSolution:
    weights: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int


def _solve_subproblem(H, c, P):
    idx = np.asarray(P)
    k = len(idx)
    kkt = np.ones((k + 1, k + 1))
    kkt[:k, :k] = H[idx[:, None], idx]
    kkt[k, k] = 0.0
    rhs = np.ones(k + 1)
    rhs[:k] = c[idx]
    try:
        sol = np.linalg.solve(kkt, rhs)
        if not np.isfinite(sol).all():
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:k]


def kkt_residual(H: np.ndarray, c: np.ndarray, w: np.ndarray) -> float:
    """Scaled KKT violation of ``w`` for ``min w'Hw - 2c'w`` on the simplex."""
    g = c - H @ w  # half the negative gradient
    support = w > 0
    nu = g[support].max() if support.any() else g.max()
    scale = max(1.0, float(np.abs(H).max(initial=0.0)), float(np.abs(c).max(initial=0.0)))
    stationarity = np.abs(g[support] - nu).max(initial=0.0)
    dual = np.maximum(g[~support] - nu, 0.0).max(initial=0.0)
    primal = max(abs(w.sum() - 1.0), float(np.maximum(-w, 0.0).max(initial=0.0)))
    return max(stationarity, dual) / scale + primal


def simplex_lstsq(A: np.ndarray, b: np.ndarray, tol: float = 1e-8, max_iter: int | None = None,
                  warm_start: Sequence[int] | None = None) -> SimplexSolution:
    """Solve the simplex-constrained least-squares problem.

    ``warm_start`` is an optional support (list of column indices) from a
    nearby problem; it is used only if its subproblem solution is feasible.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    n = A.shape[1]
    if n == 0:
        raise DomainError("no donors")
    if n == 1:
        w = np.ones(1)
        r = A @ w - b
        return SimplexSolution(w, float(r @ r), 0.0, 0)
    H = A.T @ A
    c = A.T @ b
    scale = max(1.0, float(H.diagonal().max()), float(np.abs(c).max()))
    atol = tol * scale
    max_iter = max_iter or 20 * n + 100

    if warm_start is not None and len(warm_start) > 1:
        P = list(warm_start)
        z = _solve_subproblem(H, c, P)
        if np.all(z > 0):
            w = np.zeros(n)
            w[P] = z / z.sum()
            g = c - H @ w
            viol = g - g[P].mean()
            if viol.max() <= atol:
                # warm support is already optimal
                res = float(np.abs(viol[P]).max() / scale + abs(w.sum() - 1.0))
                r = A @ w - b
                return SimplexSolution(w, float(r @ r), res, 0)
    else:
        P = None

    # start at the best single vertex (or at a feasible warm support)
    vertex_obj = H.diagonal() - 2.0 * c
    k0 = int(np.argmin(vertex_obj))
    if P is None or not np.all(z > 0):
        w = np.zeros(n)
        w[k0] = 1.0
        P = [k0]
    it = 0
    last_added = None
    while True:
        it += 1
        if it > max_iter:
            raise NumericError(
                "simplex least squares did not converge",
                dump={"iterations": it, "passive": list(P), "weights": w.tolist(),
                      "kkt": kkt_residual(H, c, w)},
            )
        g = c - H @ w
        nu = float(np.mean(g[P]))
        viol = g - nu
        viol[P] = -np.inf
        if last_added is not None:
            viol[last_added] = -np.inf
        j = int(np.argmax(viol))
        if viol[j] <= atol:
            break
        P.append(j)
        last_added = None
        while True:
            z = _solve_subproblem(H, c, P)
            if np.all(z > 0):
                w = np.zeros(n)
                w[P] = z
                break
            wp = w[P]
            bad = z <= 0
            alpha = np.min(wp[bad] / (wp[bad] - z[bad]))
            wp = wp + alpha * (z - wp)
            w = np.zeros(n)
            w[P] = wp
            keep = [p for p, v in zip(P, wp) if v > 1e-15]
            if len(keep) == len(P):
                # degenerate step: drop the offending index outright
                drop = P[int(np.argmin(z))]
                keep = [p for p in P if p != drop]
                w[drop] = 0.0
            dropped = set(P) - set(keep)
            P = keep
            if j in dropped:
                # entering variable rejected; don't pick it again immediately
                last_added = j
            if not P:
                P = [k0]
                w = np.zeros(n)
                w[k0] = 1.0
                break
            w = np.where(w < 0, 0.0, w)
            w /= w.sum()
    w = np.where(w < 0, 0.0, w)
    w = w / w.sum()
    res = kkt_residual(H, c, w)
    if res > max(tol, 1e-6):
        raise NumericError(
            "simplex least squares stopped at a non-optimal point",
            dump={"iterations": it, "passive": list(P), "weights": w.tolist(), "kkt": res},
        )
    r = A @ w - b
    return SimplexSolution(w, float(r @ r), res, it)


def solve_inner_weights(X1: np.ndarray, X0: np.ndarray, V: np.ndarray, tol: float = 1e-8,
                        warm_start: Sequence[int] | None = None) -> SimplexSolution:
    """Donor weights minimising ``(X1 - X0 W)' diag(V) (X1 - X0 W)`` on the simplex.

    ``X0`` has one column per donor, one row per (standardised) predictor.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    X1 = np.asarray(X1, dtype=float).ravel()
    V = np.asarray(V, dtype=float).ravel()
    if X0.shape[1] == 0:
        raise DomainError("no donors")
    if X0.shape[0] != X1.size or V.size != X1.size:
        raise DomainError("predictor dimensions disagree")
    sv = np.sqrt(np.maximum(V, 0.0))
    return simplex_lstsq(sv[:, None] * X0, sv * X1, tol=tol, warm_start=warm_start)


class InnerProblem:
    """Repeated inner solves for one (X1, X0) pair under varying V.

    Keeps the last optimal support and re-checks it first, which is what the
    outer V search needs: neighbouring V almost always share a support.
    """

    def __init__(self, X1: np.ndarray, X0: np.ndarray, tol: float = 1e-8):
        self.X1 = np.asarray(X1, dtype=float).ravel()
        self.X0 = np.atleast_2d(np.asarray(X0, dtype=float))
        self.X0sq = self.X0**2
        self.tol = tol
        self.support: np.ndarray | None = None
        self.n = self.X0.shape[1]

    def solve(self, V: np.ndarray) -> np.ndarray:
        V = np.maximum(V, 0.0)
        P = self.support
        if P is not None and len(P) > 1:
            D = self.X0[:, P]
            VD = V[:, None] * D
            k = len(P)
            kkt = np.ones((k + 1, k + 1))
            kkt[:k, :k] = D.T @ VD
            kkt[k, k] = 0.0
            rhs = np.ones(k + 1)
            rhs[:k] = VD.T @ self.X1
            _, _, sol, info = dgesv(kkt, rhs)
            z = sol[:k]
            if info == 0 and (z > 0).all():
                Vx = V * self.X1
                r = V * (D @ z) - Vx
                g = self.X0.T @ r
                scale = max(1.0, (V @ self.X0sq).max(), np.abs(self.X0.T @ Vx).max())
                if (g[P].sum() / k - g).max() <= self.tol * scale:
                    w = np.zeros(self.n)
                    w[P] = z / z.sum()
                    return w
        sol = solve_inner_weights(self.X1, self.X0, V, self.tol,
                                  warm_start=None if P is None else list(P))
        self.support = np.flatnonzero(sol.weights > 0)
        return sol.weights

"""Cross-validation of the factor count / regularisation level."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import DomainError
from ..panel import StudyPanel, Unit
from .model import GscConfig, default_lambda_grid, ife_arrays, mc_arrays, panel_arrays, project_arrays


@dataclass(frozen=True)
class CvResult:
    """Selected hyper-parameter and the held-out MSE of every candidate.

    ``factors`` is the factor count for ``ife`` and the grid index for
    ``mc``; ``regularization`` is the matching threshold (``mc`` only).
    Candidates that could not be evaluated score ``inf``.
    """

    estimator: str
    factors: int
    scores: tuple[float, ...]
    regularization: float | None = None
    grid: tuple[float, ...] | None = None


def _select(scores: Sequence[float], tolerance: float) -> int:
    """Smallest candidate within ``tolerance`` (relative) of the best score."""
    s = np.asarray(scores, dtype=float)
    if not np.isfinite(s).any():
        return 0
    best = s[np.isfinite(s)].min()
    return int(np.flatnonzero(s <= best * (1.0 + tolerance) + 1e-300)[0])


def cv_ife(Y: np.ndarray, X: np.ndarray, n_pre: int, cfg: GscConfig) -> CvResult:
    """Held-out-unit CV: fit on the other controls, predict each pre year from the rest."""
    N, T = Y.shape
    if n_pre < 3:
        raise DomainError("cross-validation needs >= 3 pre-treatment years")
    if np.ptp(Y) == 0:
        return CvResult("ife", 0, (0.0,) + (np.inf,) * cfg.max_factors)
    folds = np.array_split(np.random.default_rng(cfg.seed).permutation(N), min(cfg.cv_folds, N))
    pre = np.arange(T) < n_pre
    scores = []
    for r in range(cfg.max_factors + 1):
        sq, count = 0.0, 0
        for hold in folds:
            train = np.setdiff1d(np.arange(N), hold)
            if r > min(len(train), T) - 1 or n_pre - 1 < r + 1:
                sq = np.inf
                break
            _, xi, beta, _, F, _, _ = ife_arrays(Y[train], X[train], r, cfg.tol, cfg.max_iter)
            for i in hold:
                err = project_arrays(xi, beta, F, Y[i], X[i], pre).loo_error
                err = err[np.isfinite(err)]
                sq += float(err @ err)
                count += err.size
        scores.append(sq / count if count and np.isfinite(sq) else np.inf)
    return CvResult("ife", _select(scores, cfg.cv_tolerance), tuple(scores))


def cv_mc(Y: np.ndarray, X: np.ndarray, n_pre: int, cfg: GscConfig) -> CvResult:
    """Random held-out pre-treatment cells, completed at each grid level."""
    N, T = Y.shape
    if n_pre < 3:
        raise DomainError("cross-validation needs >= 3 pre-treatment years")
    full = np.ones_like(Y, dtype=bool)
    # largest threshold first: index order is model size order
    grid = tuple(sorted(cfg.lambda_grid or default_lambda_grid(Y, X, full, cfg.max_factors + 1), reverse=True))
    if np.ptp(Y) == 0:
        return CvResult("mc", 0, (0.0,) + (np.inf,) * (len(grid) - 1), grid[0], tuple(grid))
    rng = np.random.default_rng(cfg.seed)
    k = min(cfg.cv_folds, n_pre)
    # each unit spreads its pre cells over the folds, so no row is ever fully hidden
    fold_of = np.full((N, T), -1)
    for i in range(N):
        fold_of[i, :n_pre] = rng.permutation(np.arange(n_pre) % k)
    sq = np.zeros(len(grid))
    for f in range(k):
        hidden = fold_of == f
        init = None
        for g in range(len(grid)):
            # warm start from the previous (larger) threshold
            _, _, _, _, fit, _ = mc_arrays(Y, X, ~hidden, grid[g], cfg.tol, cfg.max_iter, init)
            init = fit
            d = (Y - fit)[hidden]
            sq[g] += float(d @ d)
    scores = tuple(sq / (N * n_pre))
    choice = _select(scores, cfg.cv_tolerance)
    return CvResult("mc", choice, scores, grid[choice], tuple(grid))


def cross_validate_rank(controls: StudyPanel | Sequence[Unit], cfg: GscConfig, n_pre: int | None = None) -> CvResult:
    """Pick the factor count (``ife``) or regularisation level (``mc``) for ``controls``.

    Only the first ``n_pre`` years (default: all) count as pre-treatment
    cells. Ties within ``cfg.cv_tolerance`` go to the smaller model.
    """
    units = list(controls.units) if isinstance(controls, StudyPanel) else list(controls)
    names = cfg.covariates if cfg.covariates is not None else ()
    Y, X = panel_arrays(units, names)
    n_pre = Y.shape[1] if n_pre is None else int(n_pre)
    if cfg.estimator == "ife":
        return cv_ife(Y, X, n_pre, cfg)
    return cv_mc(Y, X, n_pre, cfg)

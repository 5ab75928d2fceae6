"""Factor-model counterfactuals for panels of relative deforestation.

Outcomes are annual deforestation in percent of unit area. Two estimators
share one result type:

* interactive fixed effects (``ife``): two-way fixed effects, time-varying
  covariates and ``r`` latent factors, fitted on control units only by
  alternating least squares; treated loadings come from a projection of
  their pre-treatment outcomes on the estimated factors.
* matrix completion (``mc``): treated post-treatment cells are missing and
  the low-rank part is recovered by soft-thresholded SVD (nuclear-norm
  regularisation) with the same fixed effects and covariates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConfigError, DomainError, NumericError
from ..panel import StudyPanel, Unit, relative_outcome

ESTIMATORS = ("ife", "mc")
MAX_FACTORS = 5


@dataclass(frozen=True)
class GscConfig:
    """Settings for :func:`~redd_eval.gsc.estimate_att`.

    ``factors`` fixes the factor count (``ife``) or the index into the
    regularisation grid (``mc``); ``None`` lets cross-validation choose
    from ``0..max_factors``.
    """

    estimator: str = "mc"
    factors: int | None = None
    max_factors: int = MAX_FACTORS
    lambda_grid: tuple[float, ...] | None = None
    covariates: tuple[str, ...] | None = None
    bootstrap_runs: int = 1000
    seed: int = 0
    cv_folds: int = 5
    cv_tolerance: float = 0.01
    tol: float = 1e-8
    max_iter: int = 5000
    n_jobs: int = 1

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if not 0 <= self.max_factors <= MAX_FACTORS:
            raise ConfigError(f"max_factors must lie in 0..{MAX_FACTORS}")
        if self.factors is not None and not 0 <= self.factors <= self.max_factors:
            raise ConfigError("factors must lie in 0..max_factors")
        if self.bootstrap_runs < 1:
            raise ConfigError("bootstrap_runs must be >= 1")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be >= 2")
        if self.lambda_grid is not None:
            grid = tuple(float(x) for x in self.lambda_grid)
            if not grid or min(grid) < 0:
                raise ConfigError("lambda_grid must be non-empty and non-negative")
            object.__setattr__(self, "lambda_grid", grid)
        if self.covariates is not None:
            object.__setattr__(self, "covariates", tuple(self.covariates))


@dataclass(frozen=True, eq=False)
class GscModel:
    """Fitted ``Y = alpha_i + xi_t + X beta + lambda_i' f_t + eps``.

    For ``ife`` the factors satisfy ``f'f / T = I``. For ``mc`` the low-rank
    term is stored whole in ``low_rank`` and ``factors``/``loadings`` are its
    scaled SVD, so both estimators expose the same fields.
    """

    estimator: str
    unit_ids: tuple[str, ...]
    years: np.ndarray
    covariate_names: tuple[str, ...]
    alpha: np.ndarray
    xi: np.ndarray
    beta: np.ndarray
    loadings: np.ndarray
    factors: np.ndarray
    residuals: np.ndarray
    iterations: int = 0
    regularization: float | None = None
    low_rank: np.ndarray | None = field(default=None, repr=False)

    @property
    def rank(self) -> int:
        return int(self.factors.shape[1])

    def fitted(self, X: np.ndarray | None = None) -> np.ndarray:
        """Fitted values for the units the model was estimated on."""
        low = self.low_rank if self.low_rank is not None else self.loadings @ self.factors.T
        out = self.alpha[:, None] + self.xi[None, :] + low
        if self.beta.size:
            if X is None:
                raise DomainError("covariate array required")
            out = out + X @ self.beta
        return out


# ------------------------------------------------------------------ arrays


def panel_arrays(units: Sequence[Unit], covariates: Sequence[str] = ()) -> tuple[np.ndarray, np.ndarray]:
    """Outcome matrix ``(N, T)`` in %/yr and covariate array ``(N, T, p)``."""
    if not units:
        raise DomainError("no units")
    Y = np.vstack([relative_outcome(u).values for u in units])
    X = np.zeros(Y.shape + (len(covariates),))
    for i, u in enumerate(units):
        for k, name in enumerate(covariates):
            try:
                X[i, :, k] = u.covariates.dynamic[name]
            except KeyError:
                raise DomainError(f"unit {u.id}: missing time-varying covariate {name!r}") from None
    return Y, X


def _units(data: StudyPanel | Sequence[Unit]) -> list[Unit]:
    return list(data.units) if isinstance(data, StudyPanel) else list(data)


def _dd(A: np.ndarray) -> np.ndarray:
    """Two-way demeaning over the first two axes."""
    return A - A.mean(axis=0, keepdims=True) - A.mean(axis=1, keepdims=True) + A.mean(axis=(0, 1), keepdims=True)


def _demeaned_covariates(X: np.ndarray) -> np.ndarray:
    """Two-way demeaned covariates; columns the fixed effects absorb are zeroed.

    Otherwise least squares would fit round-off and return a huge slope;
    a zero column gets a zero coefficient from the minimum-norm solution.
    """
    if not X.shape[-1]:
        return X
    Xd = _dd(X)
    raw = np.sqrt(np.mean((X - X.mean(axis=(0, 1))) ** 2, axis=(0, 1)))
    left = np.sqrt(np.mean(Xd**2, axis=(0, 1)))
    Xd[..., left <= 1e-9 * np.maximum(raw, 1e-300)] = 0.0
    return Xd


def _ols(y: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Least squares of a matrix on a stack of regressors ``(..., p)``."""
    p = X.shape[-1]
    if p == 0:
        return np.zeros(0)
    A = X.reshape(-1, p)
    return np.linalg.lstsq(A, y.ravel(), rcond=None)[0]


def _top_factors(E: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    T = E.shape[1]
    if r == 0:
        return np.zeros((E.shape[0], 0)), np.zeros((T, 0))
    _, _, vt = np.linalg.svd(E, full_matrices=False)
    F = np.sqrt(T) * vt[:r].T
    # sign convention: the largest-magnitude entry of each factor is positive
    flip = np.sign(F[np.abs(F).argmax(axis=0), np.arange(r)])
    F = F * np.where(flip == 0, 1.0, flip)
    return E @ F / T, F


# --------------------------------------------------------------------- IFE


def ife_arrays(Y: np.ndarray, X: np.ndarray, r: int, tol: float = 1e-8, max_iter: int = 5000):
    """Interactive fixed effects on a balanced ``(N, T)`` panel.

    Returns ``(alpha, xi, beta, loadings, factors, residuals, iterations)``.
    """
    N, T = Y.shape
    if r < 0 or r > min(N, T) - 1:
        raise DomainError(f"factor count {r} outside 0..{min(N, T) - 1} for a {N}x{T} panel")
    Yd = _dd(Y)
    Xd = _demeaned_covariates(X)
    beta = _ols(Yd, Xd)
    it = 0
    prev = np.inf
    # the relative test never fires on an exact fit, so also stop at round-off size
    floor = 1e-24 * max(float(np.sum(Yd**2)), 1e-300)
    while True:
        it += 1
        E = Yd - Xd @ beta if beta.size else Yd
        L, F = _top_factors(E, r)
        low = L @ F.T
        if not beta.size:
            break
        beta = _ols(Yd - low, Xd)
        obj = float(np.sum((Yd - Xd @ beta - low) ** 2))
        if abs(prev - obj) <= tol * max(obj, 1e-300) or obj <= floor:
            break
        if it >= max_iter:
            raise NumericError("interactive fixed effects did not converge",
                               dump={"iterations": it, "objective": obj, "previous": prev})
        prev = obj
    R = Y - X @ beta if beta.size else Y
    xi = R.mean(axis=0)
    alpha = R.mean(axis=1) - R.mean()
    resid = R - alpha[:, None] - xi[None, :] - low
    return alpha, xi, beta, L, F, resid, it


def fit_ife(controls: StudyPanel | Sequence[Unit], r: int, covariates: Sequence[str] = (),
            tol: float = 1e-8, max_iter: int = 5000) -> GscModel:
    """Fit the interactive fixed-effects model on control units only."""
    units = _units(controls)
    Y, X = panel_arrays(units, covariates)
    alpha, xi, beta, L, F, resid, it = ife_arrays(Y, X, r, tol, max_iter)
    return GscModel("ife", tuple(u.id for u in units), units[0].years.copy(), tuple(covariates),
                    alpha, xi, beta, L, F, resid, it)


@dataclass(frozen=True)
class Projection:
    """Treated-unit intercept and loadings, plus leave-one-out pre-period errors."""

    alpha: float
    loadings: np.ndarray
    counterfactual: np.ndarray
    loo_error: np.ndarray


def project_arrays(xi: np.ndarray, beta: np.ndarray, F: np.ndarray, y: np.ndarray, X: np.ndarray,
                   pre: np.ndarray) -> Projection:
    """Regress pre-treatment ``y - xi - X beta`` on ``[1, F]``.

    The unit intercept is estimated alongside the loadings, so ``r + 1``
    pre-treatment years are needed. ``loo_error`` holds the out-of-sample
    error for each pre-treatment year when that year is left out (NaN when
    the regression is saturated).
    """
    r = F.shape[1]
    n_pre = int(pre.sum())
    if n_pre < r + 1:
        raise DomainError(f"{n_pre} pre-treatment years cannot identify {r} loadings plus an intercept")
    base = xi + (X @ beta if beta.size else 0.0)
    target = (y - base)[pre]
    D = np.column_stack([np.ones(n_pre), F[pre]])
    coef, *_ = np.linalg.lstsq(D, target, rcond=None)
    cf = base + coef[0] + F @ coef[1:]
    e = target - D @ coef
    pinv = np.linalg.pinv(D.T @ D)
    h = np.einsum("ij,jk,ik->i", D, pinv, D)
    with np.errstate(divide="ignore", invalid="ignore"):
        loo = np.where(h < 1 - 1e-9, e / (1 - h), np.nan)
    return Projection(float(coef[0]), coef[1:], cf, loo)


def project_loadings(model: GscModel, treated: Unit) -> np.ndarray:
    """Loadings of ``treated`` on the model's factors from its pre-treatment years."""
    if model.estimator != "ife":
        raise DomainError("loadings are projected only for the interactive fixed-effects model")
    Y, X = panel_arrays([treated], model.covariate_names)
    pre = treated.years < (treated.treatment_year if treated.treatment_year is not None else np.inf)
    return project_arrays(model.xi, model.beta, model.factors, Y[0], X[0], pre).loadings


def counterfactual(model: GscModel, unit: Unit) -> np.ndarray:
    """Untreated outcome path (%/yr) for ``unit``; fitted values for controls."""
    if unit.id in model.unit_ids:
        i = model.unit_ids.index(unit.id)
        _, X = panel_arrays([unit], model.covariate_names)
        return _row_fit(model, i, X[0])
    if model.estimator != "ife":
        raise DomainError(f"unit {unit.id} was not part of the completed matrix")
    Y, X = panel_arrays([unit], model.covariate_names)
    pre = unit.years < (unit.treatment_year if unit.treatment_year is not None else np.inf)
    return project_arrays(model.xi, model.beta, model.factors, Y[0], X[0], pre).counterfactual


def _row_fit(model: GscModel, i: int, x: np.ndarray) -> np.ndarray:
    low = model.low_rank[i] if model.low_rank is not None else model.factors @ model.loadings[i]
    out = model.alpha[i] + model.xi + low
    return out + x @ model.beta if model.beta.size else out


# ------------------------------------------------------- matrix completion


def _svt(M: np.ndarray, lam: float) -> np.ndarray:
    U, s, vt = np.linalg.svd(M, full_matrices=False)
    s = np.maximum(s - lam, 0.0)
    k = int((s > 0).sum())
    return (U[:, :k] * s[:k]) @ vt[:k]


def _twfe_observed(Y, X, mask, iters: int = 200):
    """Additive fit on observed cells by alternating means (and OLS for beta)."""
    N, T = Y.shape
    alpha = np.zeros(N)
    xi = np.zeros(T)
    beta = np.zeros(X.shape[-1])
    w = mask.astype(float)
    rows = np.maximum(w.sum(axis=1), 1)
    cols = np.maximum(w.sum(axis=0), 1)
    for _ in range(iters):
        R = Y - (X @ beta if beta.size else 0.0)
        xi_new = ((R - alpha[:, None]) * w).sum(axis=0) / cols
        alpha_new = ((R - xi_new[None, :]) * w).sum(axis=1) / rows
        if beta.size:
            resid = Y - alpha_new[:, None] - xi_new[None, :]
            beta = np.linalg.lstsq(X[mask], resid[mask], rcond=None)[0]
        done = np.allclose(alpha_new, alpha, atol=1e-12) and np.allclose(xi_new, xi, atol=1e-12)
        alpha, xi = alpha_new, xi_new
        if done and not beta.size:
            break
    return alpha, xi, beta


def mc_arrays(Y: np.ndarray, X: np.ndarray, observed: np.ndarray, lam: float, tol: float = 1e-8,
              max_iter: int = 5000, init: np.ndarray | None = None):
    """Soft-impute with two-way fixed effects and covariates.

    Missing cells start from an additive fit on the observed cells (or
    ``init``) and are refilled from the current fit each iteration.
    Returns ``(alpha, xi, beta, low_rank, fitted, iterations)``.
    """
    observed = np.asarray(observed, dtype=bool)
    if not observed.any(axis=1).all():
        raise DomainError("every unit needs at least one observed cell")
    if not observed.any(axis=0).all():
        raise DomainError("every year needs at least one observed cell")
    p = X.shape[-1]
    Xd = _demeaned_covariates(X)
    if init is None:
        a0, x0, b0 = _twfe_observed(Y, X, observed)
        init = a0[:, None] + x0[None, :] + (X @ b0 if p else 0.0)
    fit = np.where(observed, Y, init)
    low = np.zeros_like(Y)
    beta = np.zeros(p)
    it = 0
    while True:
        it += 1
        Z = np.where(observed, Y, fit)
        Zd = _dd(Z)
        if p:
            beta = _ols(Zd - low, Xd)
            low = _svt(Zd - Xd @ beta, lam)
        else:
            low = _svt(Zd, lam)
        R = Z - low - (X @ beta if p else 0.0)
        xi = R.mean(axis=0)
        alpha = R.mean(axis=1) - R.mean()
        new = alpha[:, None] + xi[None, :] + low + (X @ beta if p else 0.0)
        change = float(np.sum((new - fit) ** 2))
        scale = max(float(np.sum(new**2)), 1e-300)
        fit = new
        if change <= tol * tol * scale or observed.all() and change == 0.0:
            break
        if it >= max_iter:
            raise NumericError("matrix completion did not converge",
                               dump={"iterations": it, "relative_change": (change / scale) ** 0.5, "lambda": lam})
    return alpha, xi, beta, low, fit, it


def default_lambda_grid(Y: np.ndarray, X: np.ndarray, observed: np.ndarray, size: int = MAX_FACTORS + 1):
    """Geometric grid from the largest singular value of the additive residual.

    Index 0 shrinks the low-rank part to zero (the two-way fixed-effects
    model); each further index lowers the threshold by a factor of
    ``sqrt(10)``, admitting more factors.
    """
    a, x, b = _twfe_observed(Y, X, observed)
    fit = a[:, None] + x[None, :] + (X @ b if b.size else 0.0)
    R = _dd(np.where(observed, Y, fit)) - (_dd(X) @ b if b.size else 0.0)
    s1 = float(np.linalg.svd(R, compute_uv=False)[0]) if R.size else 0.0
    return tuple(s1 * 10.0 ** (-k / 2.0) for k in range(size))


def fit_matrix_completion(panel: StudyPanel | Sequence[Unit], treated_mask: np.ndarray, lam: float,
                          covariates: Sequence[str] = (), tol: float = 1e-8, max_iter: int = 5000) -> GscModel:
    """Complete the panel with ``treated_mask`` cells treated as missing."""
    units = _units(panel)
    Y, X = panel_arrays(units, covariates)
    mask = np.asarray(treated_mask, dtype=bool)
    if mask.shape != Y.shape:
        raise DomainError("treated_mask shape does not match the panel")
    if mask.all(axis=1).any():
        bad = [u.id for u, m in zip(units, mask) if m.all()]
        raise DomainError(f"all cells masked for {bad}")
    alpha, xi, beta, low, fit, it = mc_arrays(Y, X, ~mask, lam, tol, max_iter)
    U, s, vt = np.linalg.svd(low, full_matrices=False)
    k = int((s > 1e-10 * max(s.max(initial=0.0), 1.0)).sum())
    T = Y.shape[1]
    F = np.sqrt(T) * vt[:k].T
    loadings = (U[:, :k] * s[:k]) / np.sqrt(T)
    resid = np.where(mask, 0.0, Y - fit)
    return GscModel("mc", tuple(u.id for u in units), units[0].years.copy(), tuple(covariates),
                    alpha, xi, beta, loadings, F, resid, it, lam, low)

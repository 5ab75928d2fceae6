"""Per-project synthetic control: donor screening, nested V/W optimisation, split validation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from ..errors import DomainError, ScreeningExhausted
from ..panel import OutcomeSeries, Unit
from .simplex import InnerProblem, solve_inner_weights

OUTCOME_ANNUAL = "deforestation_annual"
OUTCOME_CUMULATIVE = "deforestation_cumulative"


@dataclass(frozen=True)
class ScConfig:
    covariate_list: tuple[str, ...] | None = None
    pressure_covariate: str | None = None
    pressure_tolerance_init: float = 0.10
    pressure_tolerance_step: float = 0.10
    max_tolerance: float = 1.0
    validation_threshold: float = 0.005
    mspe_discard_ratio: float = 5.0
    outer_starts: int = 8
    outer_screen: int = 0  # extra random V candidates ranked before choosing starts
    outer_max_iter: int = 400
    outer_tol: float = 1e-8
    outer_xtol: float = 1e-3
    inner_tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.covariate_list is not None:
            object.__setattr__(self, "covariate_list", tuple(self.covariate_list))
        if min(self.pressure_tolerance_init, self.pressure_tolerance_step, self.max_tolerance) <= 0:
            raise DomainError("pressure tolerances must be positive")
        if not 0 < self.validation_threshold < 1:
            raise DomainError("validation_threshold must lie in (0, 1)")
        if self.mspe_discard_ratio <= 1:
            raise DomainError("mspe_discard_ratio must exceed 1")
        if self.outer_starts < 1 or self.outer_screen < 0:
            raise DomainError("outer_starts must be >= 1 and outer_screen >= 0")


@dataclass(frozen=True)
class ScWeights:
    donor_weights: dict[str, float]
    covariate_weights: dict[str, float]


@dataclass(frozen=True, eq=False)
class ScFit:
    project_id: str
    treatment_year: int
    weights: ScWeights
    treated: OutcomeSeries
    synthetic: OutcomeSeries
    gap: np.ndarray
    mspe_pre: float
    mspe_post: float
    predictors: tuple[str, ...]
    predictor_years: tuple[int, ...]

    @property
    def years(self) -> np.ndarray:
        return self.synthetic.years

    @property
    def donor_ids_used(self) -> list[str]:
        return [d for d, w in self.weights.donor_weights.items() if w > 1e-6]

    @property
    def terminal_gap(self) -> float:
        return float(self.gap[-1])

    def post_mask(self) -> np.ndarray:
        return self.years >= self.treatment_year


@dataclass(frozen=True)
class BalanceRow:
    covariate: str
    v_weight: float
    project_value: float
    synthetic_value: float
    donor_mean: float


# ---------------------------------------------------------------- predictors


def default_predictors(units: Sequence[Unit]) -> list[str]:
    static = sorted({k for u in units for k in u.covariates.static})
    dynamic = sorted({k for u in units for k in u.covariates.dynamic})
    return static + dynamic + [OUTCOME_ANNUAL, OUTCOME_CUMULATIVE]


def predictor_value(unit: Unit, name: str, years: Sequence[int]) -> float:
    """Value of one SC predictor for ``unit`` averaged over ``years``.

    Static covariates are used as-is; dynamic covariates and the outcome are
    averaged; ``<dynamic>_cumulative`` averages the running total since the
    first panel year.
    """
    idx = np.asarray(years, dtype=int) - unit.outcome.first_year
    if len(idx) == 0:
        raise DomainError("no predictor years")
    if name == OUTCOME_ANNUAL:
        return float(unit.outcome.values[idx].mean())
    if name == OUTCOME_CUMULATIVE:
        return float(np.cumsum(unit.outcome.values)[idx].mean())
    cov = unit.covariates
    if name in cov.static:
        return cov.static[name]
    if name in cov.dynamic:
        return float(cov.dynamic[name][idx].mean())
    if name.endswith("_cumulative") and name[: -len("_cumulative")] in cov.dynamic:
        return float(np.cumsum(cov.dynamic[name[: -len("_cumulative")]])[idx].mean())
    raise DomainError(f"unit {unit.id}: unknown predictor {name!r}")


def predictor_matrix(project: Unit, donors: Sequence[Unit], names: Sequence[str], years: Sequence[int]):
    X1 = np.array([predictor_value(project, n, years) for n in names])
    X0 = np.array([[predictor_value(d, n, years) for d in donors] for n in names]).reshape(len(names), len(donors))
    return X1, X0


def standardize(X1: np.ndarray, X0: np.ndarray, names: Sequence[str]):
    """Z-score each predictor over treated + donors; drop constant predictors."""
    allx = np.column_stack([X1, X0])
    mu = allx.mean(axis=1)
    sd = allx.std(axis=1)
    keep = sd > 1e-12 * np.maximum(1.0, np.abs(mu))
    dropped = [n for n, k in zip(names, keep) if not k]
    if dropped:
        warnings.warn(f"dropping zero-variance predictors: {', '.join(dropped)}", stacklevel=3)
    kept = [n for n, k in zip(names, keep) if k]
    Z1 = (X1[keep] - mu[keep]) / sd[keep]
    Z0 = (X0[keep] - mu[keep, None]) / sd[keep, None]
    return Z1, Z0, kept


# ----------------------------------------------------------------- screening


def pressure_name(units: Sequence[Unit], cfg: ScConfig) -> str:
    if cfg.pressure_covariate:
        return cfg.pressure_covariate
    buffers = sorted(
        {k for u in units for k in u.covariates.dynamic if k.startswith("buffer_r")},
        key=lambda k: int(k[len("buffer_r"):]) if k[len("buffer_r"):].isdigit() else 0,
    )
    if not buffers:
        raise DomainError("no buffer-pressure covariate available for screening")
    return buffers[-1]


def buffer_pressure(unit: Unit, name: str, years: Sequence[int]) -> float:
    if name not in unit.covariates.dynamic:
        raise DomainError(f"unit {unit.id}: missing pressure covariate {name!r}")
    return predictor_value(unit, name, years)


def _tolerance_schedule(cfg: ScConfig, start: float | None = None):
    tol = cfg.pressure_tolerance_init if start is None else start
    k = 0
    while tol <= cfg.max_tolerance + 1e-12:
        yield round(tol, 12)
        k += 1
        tol = (cfg.pressure_tolerance_init if start is None else start) + k * cfg.pressure_tolerance_step


def screen_donors(project: Unit, pool: Sequence[Unit], cfg: ScConfig, tolerance: float | None = None):
    """Donors whose mean pre-treatment buffer pressure is within ±tolerance of the project's.

    Starts at ``tolerance`` (default the configured initial band) and widens
    by the configured step while the band is empty.
    """
    pre = project.pre_years()
    if len(pre) < 2:
        raise DomainError(f"project {project.id}: needs >= 2 pre-treatment years")
    pool = sorted((u for u in pool if u.id != project.id), key=lambda u: u.id)
    if not pool:
        raise DomainError("donor pool is empty")
    name = pressure_name([project, *pool], cfg)
    target = buffer_pressure(project, name, pre)
    pressures = [buffer_pressure(u, name, pre) for u in pool]
    for tol in _tolerance_schedule(cfg, tolerance):
        band = tol * abs(target)
        chosen = [u for u, p in zip(pool, pressures) if abs(p - target) <= band * (1 + 1e-12)]
        if chosen:
            return chosen, tol
    raise ScreeningExhausted(
        f"project {project.id}: no donors within ±{cfg.max_tolerance:.0%} of buffer pressure {target:g}"
    )


# -------------------------------------------------------------------- nested


def _v_from_theta(theta: np.ndarray) -> np.ndarray:
    a = np.abs(theta)
    s = a.sum()
    return a / s if s > 0 else np.full(len(a), 1.0 / len(a))


def solve_nested(project: Unit, donors: Sequence[Unit], cfg: ScConfig,
                 treatment_year: int | None = None) -> ScFit:
    """Fit one synthetic control.

    The outer loop searches covariate weights V (Nelder-Mead from several
    seeded starts, V = |theta| / sum|theta|) for the smallest pre-treatment
    MSPE of cumulative deforestation; the inner loop returns the donor
    weights W(V) on the simplex.
    """
    ty = project.treatment_year if treatment_year is None else treatment_year
    if ty is None:
        raise DomainError(f"unit {project.id}: no treatment year")
    donors = sorted(donors, key=lambda u: u.id)
    if not donors:
        raise DomainError("no donors")
    pre = [int(y) for y in project.pre_years(ty)]
    if len(pre) < 2:
        raise DomainError(f"project {project.id}: needs >= 2 pre-treatment years")
    names = list(cfg.covariate_list or default_predictors([project, *donors]))

    cum1 = np.cumsum(project.outcome.values)
    cum0 = np.column_stack([np.cumsum(d.outcome.values) for d in donors])
    pre_idx = np.asarray(pre) - project.outcome.first_year
    y1, Y0 = cum1[pre_idx], cum0[pre_idx]

    X1, X0 = predictor_matrix(project, donors, names, pre)
    Z1, Z0, kept = standardize(X1, X0, names)
    K = len(kept)

    def mspe_of(W):
        r = y1 - Y0 @ W
        return float(r @ r) / len(r)

    if len(donors) == 1 or K == 0:
        V = np.full(K, 1.0 / K) if K else np.zeros(0)
        W = np.ones(len(donors)) if len(donors) == 1 else np.full(len(donors), 1.0 / len(donors))
        if K and len(donors) > 1:
            W = solve_inner_weights(Z1, Z0, V, cfg.inner_tol).weights
    elif K == 1:
        V = np.ones(1)
        W = solve_inner_weights(Z1, Z0, V, cfg.inner_tol).weights
    else:
        V, W = _outer_search(Z1, Z0, mspe_of, cfg)

    synth = cum0 @ W
    gap = cum1 - synth
    post = project.years >= ty
    return ScFit(
        project_id=project.id,
        treatment_year=ty,
        weights=ScWeights(
            donor_weights={d.id: float(w) for d, w in zip(donors, W)},
            covariate_weights={n: float(v) for n, v in zip(kept, V)},
        ),
        treated=OutcomeSeries(project.outcome.first_year, cum1),
        synthetic=OutcomeSeries(project.outcome.first_year, np.maximum.accumulate(np.maximum(synth, 0.0))),
        gap=gap,
        mspe_pre=mspe_of(W),
        mspe_post=float(np.mean(gap[post] ** 2)) if post.any() else math.nan,
        predictors=tuple(kept),
        predictor_years=tuple(pre),
    )


def _outer_search(Z1, Z0, mspe_of, cfg: ScConfig):
    K = len(Z1)
    rng = np.random.default_rng(cfg.seed)
    cache: dict[bytes, tuple[float, np.ndarray]] = {}
    inner = InnerProblem(Z1, Z0, cfg.inner_tol)

    def evaluate(V):
        key = V.tobytes()
        hit = cache.get(key)
        if hit is None:
            W = inner.solve(V)
            hit = (mspe_of(W), W)
            cache[key] = hit
        return hit

    # optional cheap screen: draw extra candidates and descend from the best few
    draws = [rng.dirichlet(np.ones(K)) for _ in range(cfg.outer_starts - 1 + cfg.outer_screen)]
    if cfg.outer_screen:
        draws = sorted(draws, key=lambda V: evaluate(V)[0])
    starts = [np.full(K, 1.0 / K)] + draws[: cfg.outer_starts - 1]
    scale = max(evaluate(starts[0])[0], 1e-300)
    best = None
    for start in starts:
        res = minimize(lambda th: evaluate(_v_from_theta(th))[0], start, method="Nelder-Mead",
                       options={"maxiter": cfg.outer_max_iter, "xatol": cfg.outer_xtol, "fatol": cfg.outer_tol * scale})
        for V in (_v_from_theta(res.x), start):
            m, W = evaluate(V)
            best = _better(best, (m, V, W))
    return best[1], best[2]


def _better(best, cand):
    """Keep the lower MSPE; near-ties go to the lexicographically smaller V."""
    if best is None:
        return cand
    m0, V0, _ = best
    m1, V1, _ = cand
    tie = abs(m1 - m0) <= 1e-9 * max(m0, m1) + 1e-18
    if tie:
        return cand if tuple(V1) < tuple(V0) else best
    return cand if m1 < m0 else best


# ---------------------------------------------------------------- validation


@dataclass(frozen=True)
class ValidationResult:
    project_id: str
    final_year: int
    project_ha: float
    sc_ha: float
    area_ha: float
    passes: bool
    fit: ScFit | None = field(default=None, compare=False)

    @property
    def diff_ha(self) -> float:
        return self.project_ha - self.sc_ha

    @property
    def terminal_gap_pct(self) -> float:
        """Signed gap as a fraction of project area."""
        return self.diff_ha / self.area_ha


def validation_rule(project_ha: float, sc_ha: float, area_ha: float, threshold: float = 0.005) -> tuple[bool, float]:
    """``(passes, gap fraction)``: the SC passes when |gap| / area < threshold."""
    if area_ha <= 0:
        raise DomainError("area must be positive")
    frac = (project_ha - sc_ha) / area_ha
    return abs(frac) < threshold, frac


def validate_split(project: Unit, pool: Sequence[Unit], cfg: ScConfig) -> ValidationResult:
    """Train on the first half of the pre-period, test over the second half.

    With an odd number of pre-treatment years the extra year goes to training.
    """
    pre = project.pre_years()
    if len(pre) < 4:
        raise DomainError(f"project {project.id}: validation needs >= 4 pre-treatment years, has {len(pre)}")
    n_train = (len(pre) + 1) // 2
    pseudo_ty = int(pre[n_train])
    fit = solve_nested(project, pool, cfg, treatment_year=pseudo_ty)
    final_year = int(pre[-1])
    k = final_year - project.outcome.first_year
    project_ha = float(fit.treated.values[k])
    sc_ha = project_ha - float(fit.gap[k])
    passes, _ = validation_rule(project_ha, sc_ha, project.area_ha, cfg.validation_threshold)
    return ValidationResult(project.id, final_year, project_ha, sc_ha, project.area_ha, passes, fit)


@dataclass(frozen=True)
class ScreenedFit:
    donors: list[Unit]
    tolerance: float
    validation: ValidationResult
    fit: ScFit


def fit_with_screening(project: Unit, pool: Sequence[Unit], cfg: ScConfig) -> ScreenedFit:
    """Screen, validate, widen the pressure band on failure, then fit on the full pre-period.

    If validation never passes up to ``max_tolerance`` the last attempt is
    returned with ``validation.passes`` False.
    """
    tol = None
    last = None
    while True:
        donors, used = screen_donors(project, pool, cfg, tol)
        val = validate_split(project, donors, cfg)
        last = (donors, used, val)
        if val.passes:
            break
        tol = round(used + cfg.pressure_tolerance_step, 12)
        if tol > cfg.max_tolerance + 1e-12:
            break
    donors, used, val = last
    return ScreenedFit(donors, used, val, solve_nested(project, donors, cfg))


def balance_table(fit: ScFit, project: Unit, donors: Sequence[Unit]) -> list[BalanceRow]:
    donors = sorted(donors, key=lambda u: u.id)
    W = np.array([fit.weights.donor_weights[d.id] for d in donors])
    rows = []
    for name in fit.predictors:
        vals = np.array([predictor_value(d, name, fit.predictor_years) for d in donors])
        rows.append(BalanceRow(
            covariate=name,
            v_weight=fit.weights.covariate_weights[name],
            project_value=predictor_value(project, name, fit.predictor_years),
            synthetic_value=float(W @ vals),
            donor_mean=float(vals.mean()),
        ))
    return rows

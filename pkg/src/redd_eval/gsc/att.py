"""Per-lead ATT with bootstrap uncertainty."""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import DomainError
from ..panel import StudyPanel, Unit
from .cv import CvResult, cv_ife, cv_mc
from .model import GscConfig, default_lambda_grid, ife_arrays, mc_arrays, panel_arrays, project_arrays

Z95 = 1.959963984540054
ATT_COLUMNS = ("lead", "att_pct", "std_err", "ci_low", "ci_high", "p_value", "n_projects")


def normal_p_value(est: float, se: float) -> float:
    """Two-sided normal-approximation p-value."""
    if not (se > 0 and math.isfinite(se) and math.isfinite(est)):
        return math.nan
    return math.erfc(abs(est / se) / math.sqrt(2.0))


@dataclass(frozen=True, eq=False)
class AttSeries:
    """ATT by lead relative to treatment (lead 1 = first treated year).

    Leads ``<= 0`` are pre-treatment placebo estimates. ``n_projects``
    counts treated unit-years at each lead, so it is zero before treatment.
    ``mean_*`` summarise all treated unit-years (cell-weighted); ``pre_mean_*``
    do the same for the pre-treatment placebo cells.
    """

    leads: np.ndarray
    att: np.ndarray
    std_err: np.ndarray
    n_projects: np.ndarray
    mean_att: float
    mean_se: float
    pre_mean_att: float
    pre_mean_se: float
    estimator: str
    factors: int
    regularization: float | None
    bootstrap_runs: int
    cv: CvResult | None = None

    @property
    def ci_low(self) -> np.ndarray:
        return self.att - Z95 * self.std_err

    @property
    def ci_high(self) -> np.ndarray:
        return self.att + Z95 * self.std_err

    @property
    def p_value(self) -> np.ndarray:
        return np.array([normal_p_value(a, s) for a, s in zip(self.att, self.std_err)])

    @property
    def mean_ci(self) -> tuple[float, float]:
        return self.mean_att - Z95 * self.mean_se, self.mean_att + Z95 * self.mean_se

    @property
    def mean_p_value(self) -> float:
        return normal_p_value(self.mean_att, self.mean_se)

    def pretreatment_diagnostic(self, threshold: float = 2.0) -> tuple[bool, float]:
        """Zero-mean check of the pre-treatment placebo ATT: ``(|t| < threshold, t)``."""
        if not (self.pre_mean_se > 0):
            return False, math.nan
        t = self.pre_mean_att / self.pre_mean_se
        return abs(t) < threshold, t

    def rows(self) -> list[dict]:
        """Table rows in lead order followed by the mean row."""
        out = []
        for k, a, s, lo, hi, p, n in zip(self.leads, self.att, self.std_err, self.ci_low, self.ci_high,
                                         self.p_value, self.n_projects):
            out.append(dict(lead=int(k), att_pct=a, std_err=s, ci_low=lo, ci_high=hi, p_value=p, n_projects=int(n)))
        lo, hi = self.mean_ci
        out.append(dict(lead="mean", att_pct=self.mean_att, std_err=self.mean_se, ci_low=lo, ci_high=hi,
                        p_value=self.mean_p_value, n_projects="-"))
        return out

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ATT_COLUMNS)
            for row in self.rows():
                w.writerow([_fmt(row[c]) for c in ATT_COLUMNS])
        return path


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if not math.isfinite(v) else f"{float(v):.6g}"


# ------------------------------------------------------------------ core


@dataclass(frozen=True)
class _Design:
    """Arrays shared by the point estimate and every bootstrap replicate."""

    Yc: np.ndarray
    Xc: np.ndarray
    Yt: np.ndarray
    Xt: np.ndarray
    lead: np.ndarray  # (n_treated, T) lead of each cell
    estimator: str
    factors: int
    lam: float | None
    tol: float
    max_iter: int

    @property
    def post(self) -> np.ndarray:
        return self.lead >= 1


def _effects(d: _Design, Yc, Xc, Yt):
    """Cell effects for treated units (NaN where undefined) and control residuals."""
    n_tr, T = Yt.shape
    post = d.post
    delta = np.full((n_tr, T), np.nan)
    if d.estimator == "ife":
        _, xi, beta, _, F, resid, _ = ife_arrays(Yc, Xc, d.factors, d.tol, d.max_iter)
        cf = np.empty((n_tr, T))
        for i in range(n_tr):
            pr = project_arrays(xi, beta, F, Yt[i], d.Xt[i], ~post[i])
            cf[i] = pr.counterfactual
            delta[i, post[i]] = Yt[i, post[i]] - cf[i, post[i]]
            delta[i, ~post[i]] = pr.loo_error
        return delta, cf, resid
    Y = np.vstack([Yc, Yt])
    X = np.concatenate([Xc, d.Xt])
    observed = np.vstack([np.ones_like(Yc, dtype=bool), ~post])
    _, _, _, _, fit, _ = mc_arrays(Y, X, observed, d.lam, d.tol, d.max_iter)
    cf = fit[len(Yc):]
    delta = Yt - cf
    return delta, cf, (Yc - fit[: len(Yc)])


def _summaries(delta: np.ndarray, lead: np.ndarray, leads: np.ndarray) -> np.ndarray:
    """Per-lead means, then the post-treatment and pre-treatment cell means."""
    out = np.full(len(leads) + 2, np.nan)
    for j, k in enumerate(leads):
        v = delta[lead == k]
        v = v[np.isfinite(v)]
        if v.size:
            out[j] = v.mean()
    post = delta[(lead >= 1) & np.isfinite(delta)]
    pre = delta[(lead <= 0) & np.isfinite(delta)]
    out[-2] = post.mean() if post.size else np.nan
    out[-1] = pre.mean() if pre.size else np.nan
    return out


@dataclass(frozen=True)
class _BootstrapJob:
    design: _Design
    cf: np.ndarray
    delta_post: np.ndarray
    resid: np.ndarray
    leads: np.ndarray
    seed: int


def _replicate(job: _BootstrapJob, b: int) -> np.ndarray:
    d = job.design
    rng = np.random.default_rng([job.seed, b])
    nc = len(d.Yc)
    idx = rng.integers(nc, size=nc)
    donor_rows = rng.integers(len(job.resid), size=len(d.Yt))
    Yt = job.cf + job.delta_post + job.resid[donor_rows]
    delta, _, _ = _effects(d, d.Yc[idx], d.Xc[idx], Yt)
    return _summaries(delta, d.lead, job.leads)


def _run_chunk(args):
    job, bs = args
    return [_replicate(job, b) for b in bs]


def _split_units(panel: StudyPanel, controls: Sequence[str] | None) -> tuple[list[Unit], list[Unit]]:
    treated = [u for u in panel.projects]
    if not treated:
        raise DomainError("no treated units in panel")
    if controls is None:
        ctrl = panel.controls
    else:
        ctrl = [panel[c] for c in controls]
        bad = [u.id for u in ctrl if u.role == "project"]
        if bad:
            raise DomainError(f"treated units listed as controls: {bad}")
    if len(ctrl) < 2:
        raise DomainError("GSC needs >= 2 control units")
    return treated, ctrl


def estimate_att(panel: StudyPanel, cfg: GscConfig, controls: Sequence[str] | None = None) -> AttSeries:
    """ATT of every treated unit in ``panel`` against ``controls`` (default: all non-projects).

    The bootstrap resamples control units with replacement and rebuilds
    each treated unit as its estimated counterfactual plus its estimated
    effect plus the residual row of a randomly drawn control. Replicate
    ``b`` draws from ``default_rng([seed, b])`` so results do not depend on
    ``n_jobs``.
    """
    treated, ctrl = _split_units(panel, controls)
    names = cfg.covariates if cfg.covariates is not None else tuple(panel.dynamic_names())
    Yc, Xc = panel_arrays(ctrl, names)
    Yt, Xt = panel_arrays(treated, names)
    years = panel.years
    lead = np.vstack([years - u.treatment_year + 1 for u in treated])
    n_pre = int((years < min(u.treatment_year for u in treated)).sum())

    cv = None
    factors = cfg.factors
    lam = None
    if cfg.estimator == "ife":
        if factors is None:
            cv = cv_ife(Yc, Xc, n_pre, cfg)
            factors = cv.factors
    else:
        if factors is None:
            cv = cv_mc(Yc, Xc, n_pre, cfg)
            factors, lam = cv.factors, cv.regularization
        else:
            grid = sorted(cfg.lambda_grid or default_lambda_grid(Yc, Xc, np.ones_like(Yc, bool), cfg.max_factors + 1),
                          reverse=True)
            if factors >= len(grid):
                raise DomainError(f"factor index {factors} outside the {len(grid)}-point regularisation grid")
            lam = grid[factors]

    design = _Design(Yc, Xc, Yt, Xt, lead, cfg.estimator, factors, lam, cfg.tol, cfg.max_iter)
    delta, cf, resid = _effects(design, Yc, Xc, Yt)
    leads = np.arange(int(lead.min()), int(lead.max()) + 1)
    point = _summaries(delta, lead, leads)

    # residual rows are deflated by the fitted parameters; rescale to unbiased size
    nc, T = Yc.shape
    used = nc + T - 1 + len(names) + factors * (nc + T - factors) if cfg.estimator == "ife" else nc + T - 1 + len(names)
    dof = max(nc * T - used, 1)
    resid = resid * math.sqrt(nc * T / dof)
    job = _BootstrapJob(design, cf, np.where(design.post, np.nan_to_num(delta), 0.0), resid, leads, cfg.seed)

    B = cfg.bootstrap_runs
    if cfg.n_jobs > 1 and B > 1:
        chunks = [(job, list(range(s, B, cfg.n_jobs))) for s in range(cfg.n_jobs)]
        with ProcessPoolExecutor(max_workers=cfg.n_jobs) as pool:
            parts = list(pool.map(_run_chunk, chunks))
        reps = np.empty((B, len(point)))
        for (_, bs), rows in zip(chunks, parts):
            reps[bs] = rows
    else:
        reps = np.vstack([_replicate(job, b) for b in range(B)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN leads
        se = np.nanstd(reps, axis=0, ddof=1) if B > 1 else np.full(len(point), np.nan)

    n_projects = np.array([int(((lead == k) & (k >= 1)).sum()) for k in leads])
    return AttSeries(
        leads=leads,
        att=point[:-2],
        std_err=se[:-2],
        n_projects=n_projects,
        mean_att=float(point[-2]),
        mean_se=float(se[-2]),
        pre_mean_att=float(point[-1]),
        pre_mean_se=float(se[-1]),
        estimator=cfg.estimator,
        factors=int(factors),
        regularization=lam,
        bootstrap_runs=B,
        cv=cv,
    )

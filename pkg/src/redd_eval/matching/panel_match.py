"""Matching treated units to not-yet-treated units on their recent history.

For a unit treated in year ``T`` and evaluation lead ``k`` (lead 1 is the
treatment year itself), candidates are units that stay untreated through
year ``T + k - 1``. Similarity uses the ``history_window`` years before
``T``; the difference-in-differences reference year is ``T - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConfigError, DomainError
from ..panel import StudyPanel, Unit
from .balance import MatchSet
from .genetic import nearest

PANEL_METHODS = ("mahalanobis", "ps-match", "ps-weight")


@dataclass(frozen=True)
class PanelMatchConfig:
    history_window: int = 5
    max_controls: int = 10
    methods: tuple[str, ...] = ("mahalanobis",)
    max_lead: int = 5
    covariates: tuple[str, ...] | None = None
    bootstrap_runs: int = 1000
    seed: int = 0
    ridge: float = 1e-6

    def __post_init__(self):
        if self.history_window < 1:
            raise ConfigError("history_window must be >= 1")
        if self.max_lead < 1:
            raise ConfigError("max_lead must be >= 1")
        if self.max_controls < 1:
            raise ConfigError("max_controls must be >= 1")
        methods = tuple(self.methods)
        bad = [m for m in methods if m not in PANEL_METHODS]
        if bad or not methods:
            raise ConfigError(f"panel-match methods must be drawn from {PANEL_METHODS}, got {methods}")
        object.__setattr__(self, "methods", methods)
        if self.covariates is not None:
            object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.bootstrap_runs < 1:
            raise ConfigError("bootstrap_runs must be >= 1")


@dataclass(frozen=True)
class PanelMatchResult:
    matches: tuple[MatchSet, ...]
    excluded: tuple[tuple[str, int, str], ...] = field(default_factory=tuple)  # (unit, lead, reason)

    def for_lead(self, lead: int) -> list[MatchSet]:
        return [m for m in self.matches if m.lead == lead]


def eligible(panel: StudyPanel, treated: Unit, lead: int) -> list[Unit]:
    """Units untreated through the evaluation year of ``lead``, sorted by id."""
    T = treated.treatment_year
    if T is None:
        raise DomainError(f"unit {treated.id} is not treated")
    horizon = T + lead - 1
    return [u for u in panel if u.id != treated.id and (u.treatment_year is None or u.treatment_year > horizon)]


def _history(u: Unit, names: Sequence[str], years: np.ndarray) -> np.ndarray:
    """``(len(years), 1 + len(names))``: annual outcome then dynamic covariates."""
    sel = np.isin(u.years, years)
    cols = [u.outcome.values[sel]]
    for n in names:
        try:
            cols.append(np.asarray(u.covariates.dynamic[n])[sel])
        except KeyError:
            raise DomainError(f"unit {u.id}: missing time-varying covariate {n!r}") from None
    return np.column_stack(cols)


def mahalanobis_history(panel: StudyPanel, treated: Unit, candidates: Sequence[Unit], names: Sequence[str],
                        years: np.ndarray) -> np.ndarray:
    """Mean over window years of the Mahalanobis distance to ``treated``.

    Each year's covariance is taken across all units in the panel; a
    pseudo-inverse handles degenerate years.
    """
    H = {u.id: _history(u, names, years) for u in panel}
    h1 = H[treated.id]
    out = np.zeros(len(candidates))
    for t in range(len(years)):
        Xt = np.vstack([H[u.id][t] for u in panel])
        S = np.atleast_2d(np.cov(Xt, rowvar=False))
        Sinv = np.linalg.pinv(S, hermitian=True)
        for j, c in enumerate(candidates):
            d = H[c.id][t] - h1[t]
            out[j] += np.sqrt(max(float(d @ Sinv @ d), 0.0))
    return out / len(years)


def logit_irls(X: np.ndarray, y: np.ndarray, ridge: float = 1e-6, max_iter: int = 100, tol: float = 1e-10) -> np.ndarray:
    """Ridge-penalised logistic regression (intercept in column 0, unpenalised)."""
    n, p = X.shape
    beta = np.zeros(p)
    pen = np.full(p, ridge)
    pen[0] = 0.0
    for _ in range(max_iter):
        eta = np.clip(X @ beta, -30, 30)
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = np.maximum(mu * (1 - mu), 1e-12)
        grad = X.T @ (y - mu) - pen * beta
        H = (X * w[:, None]).T @ X + np.diag(pen) + 1e-12 * np.eye(p)
        step = np.linalg.solve(H, grad)
        beta = beta + step
        if np.abs(step).max() < tol:
            break
    return beta


def _ps_scores(panel: StudyPanel, sets: list[tuple[Unit, list[Unit], np.ndarray]], names: Sequence[str],
               ridge: float) -> list[tuple[float, np.ndarray]]:
    """One pooled logit per lead: treated rows vs. their candidates, on window means."""
    rows, ys = [], []
    for u, cands, years in sets:
        rows.append(_history(u, names, years).mean(axis=0))
        ys.append(1.0)
        for c in cands:
            rows.append(_history(c, names, years).mean(axis=0))
            ys.append(0.0)
    A = np.vstack(rows)
    mu, sd = A.mean(axis=0), A.std(axis=0)
    A = (A - mu) / np.where(sd > 0, sd, 1.0)
    X = np.column_stack([np.ones(len(A)), A])
    beta = logit_irls(X, np.array(ys), ridge)
    ps = 1.0 / (1.0 + np.exp(-np.clip(X @ beta, -30, 30)))
    out, i = [], 0
    for _, cands, _ in sets:
        out.append((float(ps[i]), ps[i + 1: i + 1 + len(cands)]))
        i += 1 + len(cands)
    return out


def panel_match(panel: StudyPanel, cfg: PanelMatchConfig, method: str | None = None) -> PanelMatchResult:
    """Matched sets for every treated unit and lead ``1..cfg.max_lead``."""
    method = method or cfg.methods[0]
    if method not in PANEL_METHODS:
        raise ConfigError(f"unknown panel-match method {method!r}")
    names = cfg.covariates if cfg.covariates is not None else tuple(panel.dynamic_names())
    treated = [u for u in panel if u.role == "project"]
    if not treated:
        raise DomainError("panel has no treated units")
    matches, excluded = [], []
    for lead in range(1, cfg.max_lead + 1):
        sets = []
        for u in treated:
            T = u.treatment_year
            years = np.arange(T - cfg.history_window, T)
            if years[0] < panel.first_year:
                excluded.append((u.id, lead, "history window before panel start"))
                continue
            if T + lead - 1 > panel.last_year:
                excluded.append((u.id, lead, "evaluation year after panel end"))
                continue
            cands = eligible(panel, u, lead)
            if not cands:
                excluded.append((u.id, lead, "no eligible candidates"))
                continue
            sets.append((u, cands, years))
        if not sets:
            continue
        if method == "mahalanobis":
            for u, cands, years in sets:
                d = mahalanobis_history(panel, u, cands, names, years)
                pick = nearest(d, [c.id for c in cands], cfg.max_controls)
                m = len(pick)
                matches.append(MatchSet(u.id, {cands[i].id: 1.0 / m for i in sorted(pick)}, method, lead))
        else:
            for (u, cands, years), (p1, p0) in zip(sets, _ps_scores(panel, sets, names, cfg.ridge)):
                pick = sorted(nearest(np.abs(p0 - p1), [c.id for c in cands], cfg.max_controls))
                if method == "ps-match":
                    w = np.full(len(pick), 1.0 / len(pick))
                else:
                    odds = p0[pick] / (1.0 - p0[pick])
                    w = odds / odds.sum() if odds.sum() > 0 else np.full(len(pick), 1.0 / len(pick))
                matches.append(MatchSet(u.id, {cands[i].id: float(x) for i, x in zip(pick, w)}, method, lead))
    return PanelMatchResult(tuple(matches), tuple(excluded))


# --------------------------------------------------------------------- ATT


@dataclass(frozen=True, eq=False)
class PanelAtt:
    """DiD ATT by lead, in ha/yr and in %/yr of unit area, with percentile CIs."""

    leads: np.ndarray
    n_treated: np.ndarray
    att_ha: np.ndarray
    ci_low_ha: np.ndarray
    ci_high_ha: np.ndarray
    att_pct: np.ndarray
    ci_low_pct: np.ndarray
    ci_high_pct: np.ndarray

    COLUMNS = ("lead", "n_treated", "att_ha", "ci_low_ha", "ci_high_ha", "att_pct", "ci_low_pct", "ci_high_pct")

    def rows(self) -> list[dict]:
        return [dict(zip(self.COLUMNS, vals)) for vals in zip(
            self.leads, self.n_treated, self.att_ha, self.ci_low_ha, self.ci_high_ha,
            self.att_pct, self.ci_low_pct, self.ci_high_pct)]


def _did(panel: StudyPanel, m: MatchSet, relative: bool) -> float:
    u = panel[m.treated]
    T = u.treatment_year
    k = m.lead or 1

    def change(unit: Unit) -> float:
        y = unit.outcome.values * (100.0 / unit.area_ha if relative else 1.0)
        return float(y[T + k - 1 - unit.outcome.first_year] - y[T - 1 - unit.outcome.first_year])

    # rounded so exact cancellations print as 0 rather than float residue
    return round(change(u) - sum(w * change(panel[c]) for c, w in m.controls.items()), 9)


def panel_att(panel: StudyPanel, matches: Sequence[MatchSet] | PanelMatchResult, max_lead: int = 5,
              bootstrap_runs: int = 1000, seed: int = 0, level: float = 0.95) -> PanelAtt:
    """Per-lead DiD averaged over treated units, bootstrap over treated units.

    Replicate ``b`` uses ``default_rng([seed, b])``.
    """
    if isinstance(matches, PanelMatchResult):
        matches = matches.matches
    if not matches:
        raise DomainError("no matched sets")
    leads = np.arange(1, max_lead + 1)
    cols = {n: np.full(len(leads), np.nan) for n in ("ha", "lo_ha", "hi_ha", "pct", "lo_pct", "hi_pct")}
    n_treated = np.zeros(len(leads), dtype=int)
    q = [(1 - level) / 2 * 100, (1 + level) / 2 * 100]
    for j, k in enumerate(leads):
        ms = sorted((m for m in matches if m.lead == k), key=lambda m: m.treated)
        n_treated[j] = len(ms)
        if not ms:
            continue
        for rel, key in ((False, "ha"), (True, "pct")):
            eff = np.array([_did(panel, m, rel) for m in ms])
            cols[key][j] = eff.mean()
            boot = np.array([eff[np.random.default_rng([seed, b]).integers(len(eff), size=len(eff))].mean()
                             for b in range(bootstrap_runs)])
            cols["lo_" + key][j], cols["hi_" + key][j] = np.percentile(boot, q)
    return PanelAtt(leads, n_treated, cols["ha"], cols["lo_ha"], cols["hi_ha"], cols["pct"], cols["lo_pct"],
                    cols["hi_pct"])

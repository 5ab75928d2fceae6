"""Matched sets, covariate summaries and standardized mean differences."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..errors import DomainError
from ..panel import Unit

METHODS = ("genetic", "ps-match", "mahalanobis", "ps-weight")


@dataclass(frozen=True)
class MatchSet:
    """Controls matched to one treated unit, with simplex weights.

    ``lead`` is set for panel matches (evaluation period ``1..L``) and
    ``None`` for cross-sectional genetic matches.
    """

    treated: str
    controls: Mapping[str, float]
    method: str
    lead: int | None = None
    caliper: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown matching method {self.method!r}")
        ctrl = dict(self.controls)
        if not ctrl:
            raise DomainError(f"{self.treated}: empty matched set")
        w = np.array(list(ctrl.values()), dtype=float)
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise DomainError(f"{self.treated}: matched weights must be a simplex")
        object.__setattr__(self, "controls", ctrl)

    @property
    def ids(self) -> list[str]:
        return list(self.controls)

    def to_json(self) -> dict:
        return {"treated": self.treated, "method": self.method, "lead": self.lead, "caliper": self.caliper,
                "controls": {k: self.controls[k] for k in sorted(self.controls)}}


@dataclass(frozen=True)
class BalanceRow:
    covariate: str
    smd_before: float
    smd_after: float


@dataclass(frozen=True)
class BalanceReport:
    rows: tuple[BalanceRow, ...] = field(default_factory=tuple)

    @property
    def covariates(self) -> list[str]:
        return [r.covariate for r in self.rows]

    @property
    def worst_before(self) -> float:
        return max((abs(r.smd_before) for r in self.rows), default=0.0)

    @property
    def worst_after(self) -> float:
        return max((abs(r.smd_after) for r in self.rows), default=0.0)


def covariate_matrix(units: Sequence[Unit], names: Sequence[str], years: np.ndarray | None = None) -> np.ndarray:
    """One row per unit: static values, and dynamic series averaged over ``years``.

    A name with no static or dynamic entry but equal to ``deforestation``
    gives the mean annual outcome over ``years``.
    """
    X = np.empty((len(units), len(names)))
    for i, u in enumerate(units):
        sel = np.ones(len(u.years), bool) if years is None else np.isin(u.years, years)
        if not sel.any():
            raise DomainError(f"unit {u.id}: no observations in the matching years")
        for k, name in enumerate(names):
            if name in u.covariates.static:
                X[i, k] = u.covariates.static[name]
            elif name in u.covariates.dynamic:
                X[i, k] = float(np.mean(np.asarray(u.covariates.dynamic[name])[sel]))
            elif name == "deforestation":
                X[i, k] = float(u.outcome.values[sel].mean())
            else:
                raise DomainError(f"unit {u.id}: no covariate {name!r}")
    return X


def smd(treated: np.ndarray, controls: np.ndarray, weights: np.ndarray | None = None,
        scale: np.ndarray | None = None) -> np.ndarray:
    """Standardized mean differences, column by column.

    The denominator is the treated-group standard deviation; with fewer
    than two treated rows (or a constant treated column) ``scale`` is used
    instead. Columns with a zero denominator report 0 when the means agree
    and ``inf`` otherwise.
    """
    treated = np.atleast_2d(treated)
    controls = np.atleast_2d(controls)
    w = np.full(len(controls), 1.0 / len(controls)) if weights is None else np.asarray(weights, float)
    diff = treated.mean(axis=0) - w @ controls
    sd = treated.std(axis=0, ddof=1) if len(treated) > 1 else np.zeros(treated.shape[1])
    if scale is not None:
        sd = np.where(sd > 0, sd, scale)
    out = np.empty_like(diff)
    for k, (d, s) in enumerate(zip(diff, sd)):
        if s > 0:
            out[k] = d / s
        else:
            out[k] = 0.0 if abs(d) <= 1e-12 else math.copysign(math.inf, d)
    return out


def balance_report(names: Sequence[str], treated: np.ndarray, pool: np.ndarray, matched: np.ndarray,
                   weights: np.ndarray | None = None, scale: np.ndarray | None = None) -> BalanceReport:
    before = smd(treated, pool, scale=scale)
    after = smd(treated, matched, weights, scale=scale)
    return BalanceReport(tuple(BalanceRow(n, float(b), float(a)) for n, b, a in zip(names, before, after)))

"""In-space placebo inference for a fitted synthetic control."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import DomainError
from ..panel import Unit
from .core import ScConfig, ScFit, solve_nested

Z95 = 1.959963984540054


@dataclass(frozen=True, eq=False)
class PlaceboReport:
    project_id: str
    years: np.ndarray
    post_years: np.ndarray
    project_gap: np.ndarray
    placebo_gaps: dict[str, np.ndarray]
    placebo_mspe: dict[str, float]
    discarded: list[str]
    band_mean: np.ndarray | None
    band_low: np.ndarray | None
    band_high: np.ndarray | None
    status: str
    exceedances: np.ndarray | None

    @property
    def survivors(self) -> list[str]:
        return [d for d in self.placebo_gaps if d not in set(self.discarded)]

    @property
    def significant(self) -> bool:
        return self.status == "significant"

    @property
    def reduction(self) -> bool:
        """Significant with the project below its synthetic control."""
        return self.significant and self.project_gap[-1] < self.band_low[-1]


def _placebo_fit(args):
    donor, others, ty, cfg = args
    return solve_nested(donor, others, cfg, treatment_year=ty)


def run_placebos(project_fit: ScFit, project: Unit, donors: Sequence[Unit], cfg: ScConfig,
                 n_jobs: int = 1) -> PlaceboReport:
    """Refit an SC for every donor against the other donors and band the gaps.

    Placebos whose pre-treatment MSPE exceeds ``mspe_discard_ratio`` times
    the project's are dropped; the survivors' gaps give a per-year band
    ``mean ± 1.96 sd``. Significance is decided at the final observed year.
    """
    donors = sorted(donors, key=lambda u: u.id)
    if len(donors) < 2:
        raise DomainError("placebo inference needs >= 2 donors")
    ty = project_fit.treatment_year
    jobs = [(d, [o for o in donors if o.id != d.id], ty, cfg) for d in donors]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            fits = list(pool.map(_placebo_fit, jobs))
    else:
        fits = [_placebo_fit(j) for j in jobs]

    gaps = {d.id: f.gap for d, f in zip(donors, fits)}
    mspe = {d.id: f.mspe_pre for d, f in zip(donors, fits)}
    limit = cfg.mspe_discard_ratio * project_fit.mspe_pre
    discarded = [d for d, m in mspe.items() if m > limit]
    survivors = [d for d in gaps if d not in set(discarded)]

    years = project_fit.years
    post = years >= ty
    if len(survivors) < 2:
        return PlaceboReport(project.id, years, years[post], project_fit.gap, gaps, mspe, discarded,
                             None, None, None, "inconclusive", None)
    G = np.vstack([gaps[d][post] for d in survivors])
    mean = G.mean(axis=0)
    sd = G.std(axis=0, ddof=1)
    low, high = mean - Z95 * sd, mean + Z95 * sd
    pg = project_fit.gap[post]
    exceed = (pg < low) | (pg > high)
    status = "significant" if exceed[-1] else "not-significant"
    return PlaceboReport(project.id, years, years[post], project_fit.gap, gaps, mspe, discarded,
                         mean, low, high, status, exceed)

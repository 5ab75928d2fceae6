"""Plot-ready CSV/JSON emission for every stage result.

All floats go through :func:`fmt6` (six significant digits) so output
bytes depend only on the computed values, not on platform float printing.
The reporter only formats numbers already held by stage results.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .crediting import CreditLedger, fmt6, write_ledger
from .gsc import AttSeries
from .landscape import write_manifest
from .matching import BalanceReport, MatchSet, PanelAtt
from .panel import StudyPanel, write_panel
from .sc import BalanceRow, PlaceboReport, ScFit, ValidationResult

VALIDATION_COLUMNS = ("project", "final_year", "project_ha", "sc_ha", "diff_ha", "diff_pct_area", "pass")


@dataclass
class StageResults:
    """Whatever the executed stages produced; absent stages stay ``None``/empty."""

    panel: StudyPanel | None = None
    panel_generated: bool = False
    sites: dict | None = None
    screening: dict[str, tuple[list[str], float, str]] = field(default_factory=dict)
    validation: dict[str, ValidationResult] = field(default_factory=dict)
    donors: dict[str, list[str]] = field(default_factory=dict)
    sc: dict[str, ScFit] = field(default_factory=dict)
    placebo: dict[str, PlaceboReport] = field(default_factory=dict)
    att: AttSeries | None = None
    gsc_controls: list[str] | None = None
    genetic: dict | None = None
    sc_balance: dict[str, list[BalanceRow]] = field(default_factory=dict)
    validation_balance: dict[str, list[BalanceRow]] = field(default_factory=dict)
    matchsets: list[MatchSet] | None = None
    match_excluded: list[tuple[str, int, str]] = field(default_factory=list)
    match_balance: list[tuple[str, BalanceReport]] = field(default_factory=list)
    panel_att: PanelAtt | None = None
    ledger: CreditLedger | None = None
    baselines: dict[str, np.ndarray] = field(default_factory=dict)
    stages: list[str] = field(default_factory=list)
    only: tuple[str, ...] | None = None  # restrict per-project stages to these ids


def _num(v: Any) -> Any:
    """JSON-safe number rounded like the CSVs (None for non-finite)."""
    if v is None:
        return None
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    return float(fmt6(v)) if math.isfinite(v) else None


def _csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt6(x) if isinstance(x, (float, np.floating)) else x for x in r])
    return path


def _json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def validation_rows(results: dict[str, ValidationResult]) -> list[list]:
    rows = []
    for pid in sorted(results):
        v = results[pid]
        rows.append([pid, v.final_year, v.project_ha, v.sc_ha, v.diff_ha, 100.0 * v.terminal_gap_pct,
                     "yes" if v.passes else "no"])
    return rows


SECTIONS = ("simulate", "screen", "validate", "sc", "gaps", "placebo", "gsc", "match", "credit")


def emit_section(res: StageResults, out_dir: str | Path, section: str) -> list[Path]:
    """Write the files owned by one stage (``gaps`` is the per-project gap series)."""
    if section not in SECTIONS:
        raise ValueError(f"unknown report section {section!r}")
    return _WRITERS[section](res, Path(out_dir))


def _simulate(res, out):
    if res.panel is None or not res.panel_generated:
        return []
    out.mkdir(parents=True, exist_ok=True)
    paths = [write_panel(res.panel, out / "panel.csv")]
    if res.sites is not None:
        paths.append(write_manifest(res.sites, out / "sites.json"))
    return paths


def _screen(res, out):
    if not res.screening:
        return []
    rows = [[pid, name, tol, len(ids), ";".join(ids)] for pid, (ids, tol, name) in sorted(res.screening.items())]
    return [_csv(out / "screening.csv", ("project", "pressure_covariate", "tolerance", "n_donors", "donors"), rows)]


def _validate(res, out):
    if not res.validation:
        return []
    paths = [_csv(out / "validation.csv", VALIDATION_COLUMNS, validation_rows(res.validation))]
    for pid in sorted(res.validation):
        fit = res.validation[pid].fit
        if fit is None:
            continue
        rows = [[int(y), float(a), float(b), float(g)]
                for y, a, b, g in zip(fit.years, fit.treated.values, fit.synthetic.values, fit.gap)]
        paths.append(_csv(out / "validation_gaps" / f"{pid}.csv", ("year", "project_ha", "sc_ha", "gap_ha"), rows))
        if pid in res.validation_balance:
            paths.append(_balance_csv(out / "validation_balance" / f"{pid}.csv", res.validation_balance[pid]))
    return paths


def _balance_csv(path: Path, rows: list[BalanceRow]) -> Path:
    return _csv(path, ("covariate", "v_weight", "project", "synthetic", "donor_mean"),
                [[b.covariate, b.v_weight, b.project_value, b.synthetic_value, b.donor_mean] for b in rows])


def _sc(res, out):
    paths = []
    for pid in sorted(res.sc):
        fit = res.sc[pid]
        base = res.baselines.get(pid)
        rows = [[int(y), float(a), float(b), "" if base is None else float(base[i])]
                for i, (y, a, b) in enumerate(zip(fit.years, fit.treated.values, fit.synthetic.values))]
        paths.append(_csv(out / "trajectories" / f"{pid}.csv", ("year", "project_ha", "sc_ha", "baseline_ha"), rows))
        paths.append(_json(out / "weights" / f"{pid}.json", {
            "project": pid,
            "treatment_year": fit.treatment_year,
            "mspe_pre": _num(fit.mspe_pre),
            "mspe_post": _num(fit.mspe_post),
            "donor_weights": {k: _num(v) for k, v in fit.weights.donor_weights.items() if v > 0},
            "covariate_weights": {k: _num(v) for k, v in fit.weights.covariate_weights.items()},
            "predictor_years": [int(y) for y in fit.predictor_years],
        }))
        if pid in res.sc_balance:
            paths.append(_balance_csv(out / "sc_balance" / f"{pid}.csv", res.sc_balance[pid]))
    return paths


def _gaps(res, out):
    paths = []
    for pid in sorted(res.sc):
        fit = res.sc[pid]
        rep = res.placebo.get(pid)
        status = "" if rep is None else rep.status
        rows = []
        for i, y in enumerate(fit.years):
            band = ["", "", "", ""]
            if rep is not None and rep.band_mean is not None and y >= fit.treatment_year:
                j = int(y - fit.treatment_year)
                band = [float(rep.band_mean[j]), float(rep.band_low[j]), float(rep.band_high[j]),
                        "yes" if rep.exceedances[j] else "no"]
            rows.append([int(y), float(fit.gap[i]), *band, status])
        paths.append(_csv(out / "gaps" / f"{pid}.csv",
                          ("year", "gap_ha", "band_mean", "band_low", "band_high", "outside_band", "status"), rows))
    return paths


def _placebo(res, out):
    if not res.placebo:
        return []
    rows = []
    for pid in sorted(res.placebo):
        r = res.placebo[pid]
        lo = float(r.band_low[-1]) if r.band_low is not None else ""
        hi = float(r.band_high[-1]) if r.band_high is not None else ""
        rows.append([pid, r.status, len(r.placebo_gaps), len(r.discarded), float(r.project_gap[-1]), lo, hi,
                     ";".join(r.discarded)])
    paths = [_csv(out / "placebo.csv", ("project", "status", "n_placebos", "n_discarded", "terminal_gap_ha",
                                        "band_low_terminal", "band_high_terminal", "discarded"), rows)]
    mspe = [[pid, d, float(m), "yes" if d in res.placebo[pid].discarded else "no"]
            for pid in sorted(res.placebo) for d, m in sorted(res.placebo[pid].placebo_mspe.items())]
    paths.append(_csv(out / "placebo_mspe.csv", ("project", "placebo", "mspe_pre", "discarded"), mspe))
    return paths + _gaps(res, out)


def _gsc(res, out):
    if res.att is None:
        return []
    out.mkdir(parents=True, exist_ok=True)
    return [res.att.write_csv(out / "att.csv")]


def _match(res, out):
    if res.matchsets is None:
        return []
    sets = []
    for m in res.matchsets:
        s = m.to_json()
        s["controls"] = {k: _num(v) for k, v in s["controls"].items()}
        sets.append(s)
    excluded = [{"unit": u, "lead": k, "reason": why} for u, k, why in res.match_excluded]
    paths = [_json(out / "matchsets.json", {"matchsets": sets, "excluded": excluded})]
    rows = [[pid, b.covariate, b.smd_before, b.smd_after] for pid, rep in res.match_balance for b in rep.rows]
    paths.append(_csv(out / "balance.csv", ("project", "covariate", "smd_before", "smd_after"), rows))
    if res.panel_att is not None:
        rows = [[int(r["lead"]), int(r["n_treated"])] + [float(r[c]) for c in PanelAtt.COLUMNS[2:]]
                for r in res.panel_att.rows()]
        paths.append(_csv(out / "att_by_lead.csv", PanelAtt.COLUMNS, rows))
    return paths


def _credit(res, out):
    if res.ledger is None:
        return []
    out.mkdir(parents=True, exist_ok=True)
    return [write_ledger(res.ledger, out / "ledger.csv")]


_WRITERS = {"simulate": _simulate, "screen": _screen, "validate": _validate, "sc": _sc, "gaps": _gaps,
            "placebo": _placebo, "gsc": _gsc, "match": _match, "credit": _credit}


def emit_report(res: StageResults, out_dir: str | Path) -> list[Path]:
    """Write every available output plus ``summary.json``; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for section in SECTIONS:
        if section == "gaps" and res.placebo:
            continue  # written with the placebo tables
        written += emit_section(res, out, section)
    written.append(write_summary(res, out))
    return written


def write_summary(res: StageResults, out_dir: str | Path) -> Path:
    return _json(Path(out_dir) / "summary.json", summarize(res))


def summarize(res: StageResults) -> dict:
    from .config import STAGES

    s: dict[str, Any] = {"stages_run": list(res.stages),
                         "stages_missing": [st for st in STAGES if st not in res.stages]}
    if res.panel is not None:
        s["panel"] = {"units": len(res.panel), "projects": [u.id for u in res.panel.projects],
                      "first_year": res.panel.first_year, "last_year": res.panel.last_year}
    if res.validation:
        s["validation"] = {p: {"passes": v.passes, "diff_pct_area": _num(100 * v.terminal_gap_pct)}
                           for p, v in sorted(res.validation.items())}
    if res.sc:
        s["sc"] = {p: {"mspe_pre": _num(f.mspe_pre), "terminal_gap_ha": _num(f.terminal_gap),
                       "donors_used": f.donor_ids_used} for p, f in sorted(res.sc.items())}
    if res.placebo:
        s["placebo"] = {p: {"status": r.status, "discarded": len(r.discarded), "reduction": bool(r.reduction)}
                        for p, r in sorted(res.placebo.items())}
    if res.att is not None:
        lo, hi = res.att.mean_ci
        ok, t = res.att.pretreatment_diagnostic()
        s["gsc"] = {"estimator": res.att.estimator, "factors": res.att.factors,
                    "regularization": _num(res.att.regularization), "mean_att_pct": _num(res.att.mean_att),
                    "std_err": _num(res.att.mean_se), "ci": [_num(lo), _num(hi)],
                    "p_value": _num(res.att.mean_p_value), "pretreatment_t": _num(t), "pretreatment_ok": ok,
                    "controls": res.gsc_controls}
    if res.matchsets is not None:
        s["match"] = {"method": res.matchsets[0].method if res.matchsets else None, "sets": len(res.matchsets),
                      "worst_smd_after": {p: _num(r.worst_after) for p, r in res.match_balance}}
    if res.panel_att is not None:
        s["panel_match"] = {"att_ha": [_num(x) for x in res.panel_att.att_ha],
                            "att_pct": [_num(x) for x in res.panel_att.att_pct],
                            "n_treated": [int(x) for x in res.panel_att.n_treated]}
    if res.ledger is not None:
        L = res.ledger
        s["credit"] = {"total_exante": _num(L.total_exante), "total_proportional": _num(L.total_proportional),
                       "total_sc_offsets": _num(L.total_sc_offsets),
                       "share_nonsignificant": _num(L.share_nonsignificant), "flagged": list(L.flagged)}
    return s

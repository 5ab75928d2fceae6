"""Stage orchestration: dependency closure, per-stage emission and the run manifest."""

from __future__ import annotations

import hashlib
import json
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import STAGES, RunConfig
from .crediting import CreditInputs, aggregate_ledger, read_credit_inputs
from .errors import ConfigError, DomainError, StageFailed
from .gsc import estimate_att
from .landscape import simulate_study
from .matching import (
    MatchSet,
    balance_report,
    covariate_matrix,
    eligible,
    genetic_match,
    panel_att,
    panel_match,
)
from .panel import StudyPanel, Unit, load_panel
from .report import StageResults, emit_section, write_summary
from .sc import balance_table, run_placebos, screen_donors, solve_nested, validate_split
from .sc.core import pressure_name

# stages each stage needs before it can run
DEPENDS = {
    "simulate": (),
    "screen": ("panel",),
    "validate": ("screen",),
    "sc": ("validate",),
    "placebo": ("sc",),
    "gsc": ("panel",),
    "match": ("panel",),
    "credit": (),
    "report": (),
}


@dataclass
class StageRecord:
    name: str
    seconds: float
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    versions: dict[str, str]
    stages: list[StageRecord]
    out_dir: Path
    results: StageResults | None = field(default=None, repr=False)

    @property
    def outputs(self) -> dict[str, str]:
        return {k: v for s in self.stages for k, v in s.outputs.items()}

    def to_json(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "versions": self.versions,
            "stages": [{"name": s.name, "seconds": round(s.seconds, 3), "inputs": s.inputs, "outputs": s.outputs}
                       for s in self.stages],
        }

    def write(self, path: str | Path | None = None) -> Path:
        path = Path(path) if path is not None else self.out_dir / "manifest.json"
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def verify_manifest(manifest_path: str | Path) -> list[str]:
    """Relative paths whose current digest differs from the manifest (empty when all match)."""
    manifest_path = Path(manifest_path)
    data = json.loads(manifest_path.read_text(encoding="utf-8"))
    root = manifest_path.parent
    bad = []
    for st in data["stages"]:
        for rel, digest in st["outputs"].items():
            p = root / rel
            if not p.is_file() or sha256(p) != digest:
                bad.append(rel)
    return bad


def resolve_stages(cfg: RunConfig) -> list[str]:
    """Requested stages plus their prerequisites, in canonical order."""
    need = set(cfg.stages)
    has_panel = cfg.panel_path is not None
    if has_panel and "simulate" in need:
        raise ConfigError("the simulate stage cannot run when an input panel is given")
    if "credit" in need and cfg.credits_path is None:
        need |= {"sc", "placebo"}
    if "gsc" in need and cfg.gsc_controls == "from-sc":
        need.add("validate")
    changed = True
    while changed:
        changed = False
        for st in list(need):
            for dep in DEPENDS[st]:
                if dep == "panel":
                    dep = None if has_panel else "simulate"
                if dep and dep not in need:
                    need.add(dep)
                    changed = True
    return [s for s in STAGES if s in need]


def preflight(cfg: RunConfig) -> list[str]:
    stages = resolve_stages(cfg)
    if cfg.panel_path is not None and not Path(cfg.panel_path).is_file():
        raise ConfigError(f"panel file not found: {cfg.panel_path}")
    if cfg.credits_path is not None and not Path(cfg.credits_path).is_file():
        raise ConfigError(f"credits file not found: {cfg.credits_path}")
    if cfg.match.method not in ("genetic", "mahalanobis", "ps-match", "ps-weight"):
        raise ConfigError(f"unknown matching method {cfg.match.method!r}")
    return stages


# ------------------------------------------------------------------ stages


def _projects(res: StageResults) -> list[Unit]:
    projects = res.panel.projects
    if not projects:
        raise DomainError("panel has no project units")
    if res.only is not None:
        missing = sorted(set(res.only) - {p.id for p in projects})
        if missing:
            raise DomainError(f"not project units in this panel: {missing}")
        projects = [p for p in projects if p.id in set(res.only)]
    return projects


def _pool(panel: StudyPanel) -> list[Unit]:
    return [u for u in panel if u.role == "donor-candidate"]


def _stage_simulate(cfg: RunConfig, res: StageResults) -> None:
    res.panel, res.sites = simulate_study(cfg.landscape, cfg.design)
    res.panel_generated = True


def _stage_screen(cfg: RunConfig, res: StageResults) -> None:
    pool = _pool(res.panel)
    for p in _projects(res):
        donors, tol = screen_donors(p, pool, cfg.sc)
        res.screening[p.id] = ([d.id for d in donors], tol, pressure_name([p, *pool], cfg.sc))
        res.donors[p.id] = [d.id for d in donors]


def _stage_validate(cfg: RunConfig, res: StageResults) -> None:
    """Validate each project's screened pool, widening the pressure band on failure."""
    pool = _pool(res.panel)
    for p in _projects(res):
        tol = res.screening[p.id][1]
        while True:
            donors, used = screen_donors(p, pool, cfg.sc, tol)
            val = validate_split(p, donors, cfg.sc)
            res.validation[p.id] = val
            res.donors[p.id] = [d.id for d in donors]
            res.validation_balance[p.id] = balance_table(val.fit, p, donors)
            tol = round(used + cfg.sc.pressure_tolerance_step, 12)
            if val.passes or tol > cfg.sc.max_tolerance + 1e-12:
                break


def baseline_series(unit: Unit, cfg: RunConfig) -> np.ndarray:
    """Cumulative ex-ante baseline: pre-period mean rate, inflated, projected past treatment."""
    cum = np.cumsum(unit.outcome.values)
    pre = unit.years < unit.treatment_year
    rate = float(unit.outcome.values[pre].mean()) * cfg.credit.baseline_inflation
    start = cum[pre][-1] if pre.any() else 0.0
    steps = np.clip(unit.years - unit.treatment_year + 1, 0, None)
    return np.where(pre, cum, start + rate * steps)


def _stage_sc(cfg: RunConfig, res: StageResults) -> None:
    for p in _projects(res):
        donors = [res.panel[d] for d in res.donors[p.id]]
        fit = solve_nested(p, donors, cfg.sc)
        res.sc[p.id] = fit
        res.sc_balance[p.id] = balance_table(fit, p, donors)
        res.baselines[p.id] = baseline_series(p, cfg)


def _stage_placebo(cfg: RunConfig, res: StageResults) -> None:
    for p in _projects(res):
        donors = [res.panel[d] for d in res.donors[p.id]]
        res.placebo[p.id] = run_placebos(res.sc[p.id], p, donors, cfg.sc)


def _genetic(cfg: RunConfig, res: StageResults) -> dict:
    if res.genetic is None:
        pool = _pool(res.panel)
        res.genetic = {}
        for p in _projects(res):
            k = min(cfg.match.k, len(pool))
            res.genetic[p.id] = genetic_match(p, pool, k, cfg.match.covariates, config=cfg.match.genetic)
    return res.genetic


def _stage_gsc(cfg: RunConfig, res: StageResults) -> None:
    sel = cfg.gsc_controls
    if sel == "all":
        controls = None
    elif sel == "from-sc":
        controls = sorted({d for ids in res.donors.values() for d in ids})
    elif sel == "from-genmatch":
        controls = sorted({c for g in _genetic(cfg, res).values() for c in g.match.ids})
    else:
        missing = [c for c in sel if c not in res.panel]
        if missing:
            raise DomainError(f"gsc controls not in panel: {missing}")
        controls = list(sel)
    res.att = estimate_att(res.panel, cfg.gsc, controls)
    res.gsc_controls = controls if controls is not None else [u.id for u in res.panel.controls]


def _stage_match(cfg: RunConfig, res: StageResults) -> None:
    panel = res.panel
    pm = cfg.match.panel
    if cfg.match.method == "genetic":
        gen = _genetic(cfg, res)
        res.matchsets = [gen[p].match for p in sorted(gen)]
        res.match_balance = [(p, gen[p].balance) for p in sorted(gen)]
        # reuse the cross-sectional match at every lead the panel covers
        leads = []
        for m in res.matchsets:
            T = panel[m.treated].treatment_year
            leads += [MatchSet(m.treated, m.controls, "genetic", k) for k in range(1, pm.max_lead + 1)
                      if T + k - 1 <= panel.last_year and T - 1 >= panel.first_year]
        excluded = []
    else:
        result = panel_match(panel, pm, cfg.match.method)
        res.matchsets = list(result.matches)
        excluded = list(result.excluded)
        leads = res.matchsets
        res.match_balance = []
        names = [*(pm.covariates if pm.covariates is not None else panel.dynamic_names()), "deforestation"]
        for m in result.for_lead(1):
            u = panel[m.treated]
            years = np.arange(u.treatment_year - pm.history_window, u.treatment_year)
            cands = eligible(panel, u, 1)
            x1 = covariate_matrix([u], names, years)
            X0 = covariate_matrix(cands, names, years)
            idx = {c.id: i for i, c in enumerate(cands)}
            rows = [idx[c] for c in m.controls]
            w = np.array(list(m.controls.values()))
            scale = np.vstack([x1, X0]).std(axis=0, ddof=1)
            res.match_balance.append((u.id, balance_report(names, x1, X0, X0[rows], w, scale)))
    res.match_excluded = excluded
    if leads:
        res.panel_att = panel_att(panel, leads, pm.max_lead, pm.bootstrap_runs, pm.seed)


def derived_credit_inputs(cfg: RunConfig, res: StageResults) -> list[CreditInputs]:
    """Crediting inputs built from the SC fits when no credits file is given."""
    out = []
    for pid, fit in sorted(res.sc.items()):
        u = res.panel[pid]
        i0 = int(fit.treatment_year - fit.years[0]) - 1
        base = res.baselines[pid]
        baseline = float(base[-1] - (base[i0] if i0 >= 0 else 0.0))
        observed = float(fit.treated.values[-1] - (fit.treated.values[i0] if i0 >= 0 else 0.0))
        sc_ha = float(fit.synthetic.values[-1] - (fit.synthetic.values[i0] if i0 >= 0 else 0.0))
        rep = res.placebo.get(pid)
        out.append(CreditInputs(
            project=pid,
            exante_credits=baseline * cfg.credit.carbon_density,
            baseline_defor=max(baseline, 1e-12),
            observed_defor=max(observed, 0.0),
            sc_defor=max(sc_ha, 0.0),
            significant=bool(rep is not None and rep.reduction),
            horizon_year=cfg.credit.horizon_year or int(fit.years[-1]),
        ))
    return out


def _stage_credit(cfg: RunConfig, res: StageResults) -> None:
    if cfg.credits_path is not None:
        inputs = read_credit_inputs(cfg.credits_path, cfg.credit.horizon_year or 2020)
    else:
        inputs = derived_credit_inputs(cfg, res)
    res.ledger = aggregate_ledger(inputs)


_RUNNERS = {
    "simulate": _stage_simulate,
    "screen": _stage_screen,
    "validate": _stage_validate,
    "sc": _stage_sc,
    "placebo": _stage_placebo,
    "gsc": _stage_gsc,
    "match": _stage_match,
    "credit": _stage_credit,
}


def _remove(paths: list[Path], out: Path) -> None:
    for p in paths:
        p.unlink(missing_ok=True)
    for d in sorted({p.parent for p in paths}, key=lambda d: len(d.parts), reverse=True):
        while d != out and d.is_dir() and not any(d.iterdir()):
            d.rmdir()
            d = d.parent


def run_pipeline(cfg: RunConfig, write_manifest: bool = True) -> RunManifest:
    """Run the configured stages in order and return the manifest.

    Every stage writes its own files under ``cfg.out_dir`` as soon as it
    finishes. If a stage raises, files written by this run are removed and
    :class:`StageFailed` carries the stage name and the original error.
    """
    stages = preflight(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = StageResults(only=cfg.projects)
    records: list[StageRecord] = []
    written: list[Path] = []
    inputs = {}
    if cfg.panel_path is not None:
        inputs[str(cfg.panel_path)] = sha256(cfg.panel_path)
    try:
        if cfg.panel_path is not None and any(s != "credit" and s != "report" for s in stages):
            res.panel = load_panel(cfg.panel_path)
    except Exception as e:
        raise StageFailed("load", e) from e

    res.genetic = None
    for st in stages:
        t0 = time.perf_counter()
        paths: list[Path] = []
        try:
            if st == "report":
                res.stages.append(st)
                paths = [write_summary(res, out)]
            else:
                _RUNNERS[st](cfg, res)
                res.stages.append(st)
                paths = emit_section(res, out, st)
                if st == "sc" and "placebo" not in stages:
                    paths += emit_section(res, out, "gaps")
        except Exception as e:
            _remove(written + paths, out)
            raise StageFailed(st, e) from e
        written += paths
        rec = StageRecord(st, time.perf_counter() - t0,
                          outputs={p.relative_to(out).as_posix(): sha256(p) for p in paths})
        if st not in ("simulate", "credit", "report"):
            rec.inputs = dict(inputs)
        if st == "credit" and cfg.credits_path is not None:
            rec.inputs = {str(cfg.credits_path): sha256(cfg.credits_path)}
        records.append(rec)

    manifest = RunManifest(
        config_hash=cfg.digest(),
        seed=cfg.seed,
        versions={"redd_eval": __version__, "python": platform.python_version(), "numpy": np.__version__,
                  "scipy": scipy.__version__},
        stages=records,
        out_dir=out,
        results=res,
    )
    if write_manifest:
        manifest.write()
    return manifest


"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line."""

from __future__ import annotations

import dataclasses
import time
import warnings

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from dgp import gsc_study, sc_study
from oracles import grid_simplex_objective
from published_tables import CREDIT_ROWS, CREDIT_TOTALS, VALIDATION_ROWS, credit_inputs
from redd_eval.config import config_from_mapping
from redd_eval.crediting import aggregate_ledger
from redd_eval.gsc import GscConfig, estimate_att
from redd_eval.matching import GeneticConfig, PanelMatchConfig, eligible, genetic_match, panel_match, smd
from redd_eval.matching.balance import covariate_matrix
from redd_eval.panel import CovariateVector, OutcomeSeries, StudyPanel, Unit
from redd_eval.pipeline import run_pipeline
from redd_eval.sc import ScConfig, run_placebos, solve_inner_weights, solve_nested, validation_rule

SC_CFG = ScConfig(covariate_list=("slope", "elevation", "deforestation_cumulative"))


# ------------------------------------------------------------ 1. crediting


def test_criterion_1_crediting_reproduction(acceptance):
    t0 = time.perf_counter()
    ledger = aggregate_ledger(credit_inputs())
    elapsed = time.perf_counter() - t0
    bad = []
    for row in CREDIT_ROWS:
        pid, prop, offsets = row[1], row[6], row[9]
        r = ledger.row(pid)
        if abs(r.proportional_offsets - prop) > 0.005 * prop:
            bad.append(f"{pid} proportional")
        # 1395 is published with offsets despite a non-significant verdict: must be flagged,
        # and its ungated value must match the published figure
        got = r.ungated_sc_offsets if pid == "1395" else r.sc_offsets
        if abs(got - offsets) > max(0.005 * offsets, 0.5):
            bad.append(f"{pid} sc offsets")
    flagged_ok = ledger.flagged == ("1395",) and ledger.row("1395").sc_offsets == 0.0
    totals = {
        "exante": ledger.total_exante,
        "proportional": ledger.total_proportional,
        "sc_offsets": ledger.total_sc_offsets,
    }
    off = {k: abs(totals[k] / CREDIT_TOTALS[k] - 1) for k in totals}
    ok = not bad and flagged_ok and max(off.values()) <= 0.01 and elapsed < 1.0
    acceptance(1, ok, f"rows off {bad or 'none'}; 1395 flagged {flagged_ok}; worst total "
                      f"{max(off.values()):.3%}; {elapsed * 1e3:.1f} ms")
    assert ok


# ----------------------------------------------------------- 2. validation


def test_criterion_2_validation_rule(acceptance):
    t0 = time.perf_counter()
    wrong = []
    for pid, _, project_ha, sc_ha, area, pct, reported_fail in VALIDATION_ROWS:
        passes, frac = validation_rule(project_ha, sc_ha, area)
        if passes == reported_fail:
            wrong.append(pid)
    failures = sorted(r[0] for r in VALIDATION_ROWS if not validation_rule(r[2], r[3], r[4])[0])
    elapsed = time.perf_counter() - t0
    ok = not wrong and failures == ["1325", "1897"] and elapsed < 1.0
    acceptance(2, ok, f"failures {failures}; misclassified {wrong or 'none'}; {elapsed * 1e3:.1f} ms")
    assert ok


# --------------------------------------------------------- 3. inner solver


def test_criterion_3_inner_solver_oracle(acceptance):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_gap, worst_inv, below = 0.0, 0.0, 0
    for _ in range(200):
        k, n = int(rng.integers(1, 5)), int(rng.integers(2, 7))
        X0 = rng.normal(size=(k, n))
        X1 = rng.normal(size=k)
        V = rng.dirichlet(np.ones(k))
        w = solve_inner_weights(X1, X0, V).weights
        r = X1 - X0 @ w
        obj = float(r @ (V * r))
        grid = grid_simplex_objective(X1, X0, V)
        worst_gap = max(worst_gap, abs(obj - grid))
        below += obj > grid + 1e-12
        worst_inv = max(worst_inv, -w.min(), abs(w.sum() - 1))
    elapsed = time.perf_counter() - t0
    ok = worst_gap <= 1e-4 and below == 0 and worst_inv <= 1e-9 and elapsed < 30
    acceptance(3, ok, f"max |solver - grid| {worst_gap:.2e}; solver above grid {below}x; "
                      f"simplex violation {worst_inv:.1e}; {elapsed:.1f} s")
    assert ok


# ------------------------------------------------------ 4. perfect donor


def test_criterion_4_clone_donor(acceptance):
    hits = 0
    worst_w, worst_mspe = 1.0, 0.0
    for seed in range(50):
        panel = sc_study(seed)
        project = panel["project"]
        donors = [u for u in panel if u.id != "project"]
        clone = Unit("clone", project.area_ha, project.outcome, project.covariates, None)
        fit = solve_nested(project, donors + [clone], SC_CFG)
        w = fit.weights.donor_weights["clone"]
        worst_w, worst_mspe = min(worst_w, w), max(worst_mspe, fit.mspe_pre)
        hits += w >= 0.999 and fit.mspe_pre < 1e-8
    ok = hits == 50
    acceptance(4, ok, f"{hits}/50 fixtures; min clone weight {worst_w:.6f}; max MSPE {worst_mspe:.1e}")
    assert ok


# ------------------------------------------------------ 5. placebo calibration


def test_criterion_5_placebo_calibration(acceptance):
    t0 = time.perf_counter()
    significant, exact = 0, 0
    misses = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for seed in range(100):
            panel = sc_study(seed, n_inflated=3)
            project = panel["project"]
            donors = [u for u in panel if u.id != "project"]
            fit = solve_nested(project, donors, SC_CFG)
            rep = run_placebos(fit, project, donors, SC_CFG)
            significant += rep.significant
            inflated = {d.id for d in donors if d.id.startswith("inflated")}
            if set(rep.discarded) == inflated:
                exact += 1
            else:
                misses.append(seed)
    elapsed = time.perf_counter() - t0
    ok = significant <= 10 and exact == 100 and elapsed < 300
    acceptance(5, ok, f"significant {significant}/100; exact discard {exact}/100 (misses at seeds {misses}); "
                      f"{elapsed:.0f} s")
    assert ok


# ------------------------------------------------------------ 6. GSC recovery


def test_criterion_6_gsc_recovery(acceptance):
    t0 = time.perf_counter()
    picks2 = 0
    for seed in range(20):
        att = estimate_att(gsc_study(seed), GscConfig(estimator="ife", bootstrap_runs=2, seed=seed))
        picks2 += att.factors == 2
    covered, diag = 0, 0
    for seed in range(50):
        att = estimate_att(gsc_study(100 + seed), GscConfig(estimator="ife", bootstrap_runs=1000, seed=seed))
        lo, hi = att.mean_ci
        covered += lo <= -0.3 <= hi
        diag += att.pretreatment_diagnostic()[0]
    elapsed = time.perf_counter() - t0
    ok = picks2 >= 14 and covered >= 45 and diag >= 45 and elapsed < 600
    acceptance(6, ok, f"2 factors chosen {picks2}/20; CI covers -0.3 {covered}/50; "
                      f"pre-period diagnostic {diag}/50; {elapsed:.0f} s")
    assert ok


# ------------------------------------------------------- 7. panel matching


def _unit(uid, ty, level):
    years = np.arange(2001, 2013)
    return Unit(uid, 1000.0, OutcomeSeries(2001, level + 0.1 * (years - 2001)),
                CovariateVector(dynamic={"precip": 1500.0 + level + np.zeros(12)}), ty)


HAND = {  # (treated, lead) -> eligible controls, enumerated by hand
    ("A", 1): ["B", "C", "D", "E"], ("A", 2): ["B", "C", "D", "E"], ("A", 3): ["C", "D", "E"],
    ("A", 4): ["C", "D", "E"], ("A", 5): ["D", "E"],
    ("B", 1): ["C", "D", "E"], ("B", 2): ["C", "D", "E"], ("B", 3): ["D", "E"], ("B", 4): ["D", "E"],
    ("B", 5): ["D", "E"],
    ("C", 1): ["D", "E"], ("C", 2): ["D", "E"], ("C", 3): ["D", "E"], ("C", 4): ["D", "E"],
}


def test_criterion_7_panel_matching_oracle(acceptance):
    panel = StudyPanel([_unit("A", 2005, 5), _unit("B", 2007, 6), _unit("C", 2009, 7), _unit("D", None, 8),
                        _unit("E", None, 9)])
    res = panel_match(panel, PanelMatchConfig(history_window=3, max_lead=5, max_controls=10))
    got = {(m.treated, m.lead): sorted(m.controls) for m in res.matches}
    weights_ok = all(abs(w - 1 / len(m.controls)) < 1e-15 for m in res.matches for w in m.controls.values())
    hand_ok = got == HAND and weights_ok and {(u, k) for u, k, _ in res.excluded} == {("C", 5)}

    rng = np.random.default_rng(7)
    mono_fail = 0
    for _ in range(100):
        n = int(rng.integers(3, 15))
        tys = [int(t) if t < 2013 else None for t in rng.integers(2003, 2016, n)]
        tys[0] = tys[0] or 2006
        p = StudyPanel([_unit(f"u{i:02d}", ty, 5.0) for i, ty in enumerate(tys)])
        for t in p.projects:
            sets = [{u.id for u in eligible(p, t, k)} for k in range(1, 8)]
            mono_fail += any(not b <= a for a, b in zip(sets, sets[1:]))
    ok = hand_ok and mono_fail == 0
    acceptance(7, ok, f"hand panel {'matches' if hand_ok else 'differs'} on {len(HAND)} (unit, lead) sets; "
                      f"monotonicity violations {mono_fail} over 100 panels")
    assert ok


# -------------------------------------------------------- 8. genetic matching


def _mahalanobis_identity(treated, pool, names, k):
    """Worst |SMD| of the plain Mahalanobis k-nearest match, computed independently."""
    years = treated.pre_years()
    x1 = covariate_matrix([treated], names, years)
    X0 = covariate_matrix(pool, names, years)
    allx = np.vstack([x1, X0])
    VI = np.linalg.pinv(np.cov(allx, rowvar=False))
    d = cdist(x1, X0, "mahalanobis", VI=VI)[0]
    order = sorted(range(len(pool)), key=lambda i: (round(d[i], 12), pool[i].id))[:k]
    return float(np.abs(smd(x1, X0[order], scale=allx.std(axis=0, ddof=1))).max())


def _genetic_fixture(seed, clones=0):
    rng = np.random.default_rng(seed)
    years = 12

    def mk(uid, ty, s, e, p):
        return Unit(uid, 1000.0, OutcomeSeries(2001, np.full(years, 5.0)),
                    CovariateVector({"slope": s, "elevation": e}, {"precip": p + np.zeros(years)}), ty)

    pool = sorted((mk(f"d{i:03d}", None, rng.normal(5, 2), rng.normal(300, 80), rng.normal(1500, 100))
                   for i in range(40)), key=lambda u: u.id)
    treated = mk("T", 2007, rng.normal(7, 1), rng.normal(360, 40), rng.normal(1580, 50))
    pool += [Unit(f"clone{j}", 1000.0, treated.outcome, treated.covariates, None) for j in range(clones)]
    return treated, pool


def test_criterion_8_genetic_dominance(acceptance):
    names = ["elevation", "precip", "slope"]
    dominated, clone_zero = 0, 0
    for seed in range(20):
        treated, pool = _genetic_fixture(seed)
        res = genetic_match(treated, pool, k=5, covariates=names, config=GeneticConfig(seed=seed))
        ident = _mahalanobis_identity(treated, pool, names, 5)
        dominated += res.balance.worst_after <= ident + 1e-12
        treated, pool = _genetic_fixture(seed, clones=3)
        res = genetic_match(treated, pool, k=3, covariates=names,
                            config=GeneticConfig(seed=seed, generations=10))
        clone_zero += res.balance.worst_after < 1e-12
    ok = dominated == 20 and clone_zero == 20
    acceptance(8, ok, f"optimized <= identity on {dominated}/20; SMD 0 with clones on {clone_zero}/20")
    assert ok


# ------------------------------------------------------------ 9. determinism

FULL = {
    "run": {"seed": 11},
    "simulate": {"rows": 80, "cols": 80, "years": 16, "intensity": 0.02, "n_projects": 2, "n_donors": 24,
                 "radius": 3, "buffer_radii": [4]},
    "sc": {"covariate_list": ["slope", "elevation", "deforestation_cumulative"]},
    "gsc": {"estimator": "mc", "bootstrap_runs": 100},
    "match": {"method": "genetic", "k": 4, "genetic": {"population": 20, "generations": 20},
              "panel": {"max_lead": 4, "bootstrap_runs": 200}},
}


def test_criterion_9_end_to_end_determinism(acceptance, tmp_path):
    cfg = config_from_mapping(FULL)
    bundles = []
    for name in ("first", "second"):
        m = run_pipeline(dataclasses.replace(cfg, out_dir=tmp_path / name))
        files = {p.relative_to(m.out_dir).as_posix(): p.read_bytes()
                 for p in sorted(m.out_dir.rglob("*")) if p.is_file()}
        files.pop("manifest.json")  # holds timings
        bundles.append(files)
    same = bundles[0] == bundles[1]
    differ = sorted(k for k in set(bundles[0]) | set(bundles[1]) if bundles[0].get(k) != bundles[1].get(k))
    ok = same and len(bundles[0]) > 20
    acceptance(9, ok, f"{len(bundles[0])} files compared; differing {differ or 'none'}")
    assert ok

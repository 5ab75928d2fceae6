from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from redd_eval.errors import ConfigError, DomainError
from redd_eval.matching import (
    PANEL_METHODS,
    GeneticConfig,
    MatchSet,
    PanelMatchConfig,
    eligible,
    genetic_match,
    logit_irls,
    panel_att,
    panel_match,
    smd,
)
from redd_eval.panel import CovariateVector, OutcomeSeries, StudyPanel, Unit

FIRST, YEARS = 2001, 12
AREA = 10_000.0


def _unit(uid, ty=None, values=None, precip=None, static=None):
    values = np.full(YEARS, 10.0) if values is None else np.asarray(values, float)
    precip = np.full(YEARS, 1500.0) if precip is None else np.asarray(precip, float)
    return Unit(uid, AREA, OutcomeSeries(FIRST, values), CovariateVector(static or {}, {"precip": precip}), ty)


# -------------------------------------------------------------- eligibility


def test_hand_panel_eligibility():
    panel = StudyPanel([_unit("A", 2005), _unit("B", 2006), _unit("C"), _unit("D", 2004), _unit("E")])
    A = panel["A"]
    assert [u.id for u in eligible(panel, A, 1)] == ["B", "C", "E"]
    assert [u.id for u in eligible(panel, A, 2)] == ["C", "E"]
    assert "D" not in {u.id for k in range(1, 6) for u in eligible(panel, A, k)}


def test_lead_two_exclusion_in_matched_sets():
    panel = StudyPanel([_unit("A", 2007), _unit("B", 2008), _unit("C"), _unit("E")])
    res = panel_match(panel, PanelMatchConfig(max_lead=2, max_controls=5))
    by_lead = {m.lead: set(m.controls) for m in res.matches if m.treated == "A"}
    assert by_lead[1] == {"B", "C", "E"}
    assert by_lead[2] == {"C", "E"}


@settings(max_examples=100, deadline=None)
@given(st.lists(st.one_of(st.none(), st.integers(2003, 2012)), min_size=2, max_size=12))
def test_eligibility_shrinks_with_lead(tys):
    tys[0] = tys[0] or 2006
    panel = StudyPanel([_unit(f"u{i:02d}", ty) for i, ty in enumerate(tys)])
    treated = panel["u00"]
    prev = None
    for k in range(1, 8):
        ids = {u.id for u in eligible(panel, treated, k)}
        assert treated.id not in ids
        if prev is not None:
            assert ids <= prev
        prev = ids


def test_excluded_when_window_or_horizon_outside_panel():
    panel = StudyPanel([_unit("A", 2003), _unit("B", 2012), _unit("C")])
    res = panel_match(panel, PanelMatchConfig(history_window=5, max_lead=2, max_controls=1))
    reasons = {(u, k): r for u, k, r in res.excluded}
    assert reasons[("A", 1)] == "history window before panel start"
    assert reasons[("B", 2)] == "evaluation year after panel end"


# ------------------------------------------------------------------ methods


@pytest.mark.parametrize("method", PANEL_METHODS)
def test_single_identical_candidate(method):
    panel = StudyPanel([_unit("A", 2007), _unit("Z")])
    res = panel_match(panel, PanelMatchConfig(max_lead=1, max_controls=3), method)
    assert [dict(m.controls) for m in res.matches] == [{"Z": 1.0}]


def test_single_identical_candidate_genetic():
    a = _unit("A", 2007, static={"slope": 3.0})
    res = genetic_match(a, [_unit("Z", static={"slope": 3.0})], k=1, covariates=["slope", "precip"],
                        config=GeneticConfig(population=6, generations=3))
    assert dict(res.match.controls) == {"Z": 1.0}


def _random_panel(seed, n_treated=6, n_controls=30):
    rng = np.random.default_rng(seed)
    units = []
    for i in range(n_treated + n_controls):
        y = rng.uniform(5, 15) + rng.normal(0, 1, YEARS).cumsum() * 0.2
        p = 1500 + rng.normal(0, 50, YEARS)
        ty = 2007 + i % 3 if i < n_treated else None
        units.append(_unit(f"{'t' if i < n_treated else 'c'}{i:02d}", ty, np.clip(y, 0, None), p))
    return StudyPanel(units)


def test_ps_weight_sets_are_simplex_weighted():
    res = panel_match(_random_panel(1), PanelMatchConfig(max_lead=3, max_controls=4), "ps-weight")
    assert res.matches
    for m in res.matches:
        w = np.array(list(m.controls.values()))
        assert len(w) == 4 and w.min() >= 0 and abs(w.sum() - 1) < 1e-12


def test_mahalanobis_prefers_the_twin():
    panel = _random_panel(2)
    t = panel["t00"]
    twin = Unit("twin", AREA, t.outcome, t.covariates, None)
    res = panel_match(StudyPanel(list(panel) + [twin]), PanelMatchConfig(max_lead=1, max_controls=1))
    assert next(m for m in res.matches if m.treated == "t00").ids == ["twin"]


def test_logit_recovers_separation_direction():
    rng = np.random.default_rng(0)
    x = rng.normal(size=400)
    y = (rng.random(400) < 1 / (1 + np.exp(-(0.5 + 2 * x)))).astype(float)
    beta = logit_irls(np.column_stack([np.ones(400), x]), y)
    assert beta[1] == pytest.approx(2.0, abs=0.5)


def test_config_rejects_unknown_method():
    with pytest.raises(ConfigError):
        PanelMatchConfig(methods=("nearest",))
    with pytest.raises(DomainError):
        MatchSet("A", {"B": 0.7}, "mahalanobis")


# ---------------------------------------------------------------------- ATT


def test_did_recovers_known_drop():
    base = np.linspace(20, 30, YEARS)
    t = base + np.where(np.arange(FIRST, FIRST + YEARS) >= 2007, -5.0, 0.0)
    panel = StudyPanel([_unit("A", 2007, t), _unit("B", None, base), _unit("C", None, base + 3)])
    res = panel_match(panel, PanelMatchConfig(max_lead=3, max_controls=2))
    att = panel_att(panel, res, max_lead=3, bootstrap_runs=50)
    assert np.allclose(att.att_ha, -5.0, atol=1e-9)
    assert np.allclose(att.att_pct, -5.0 * 100 / AREA, atol=1e-12)


def test_did_fifty_hectare_drop_across_units():
    years = np.arange(FIRST, FIRST + YEARS)
    units = []
    for i, ty in enumerate((2006, 2007, 2008)):
        base = 100.0 + 10 * i + np.arange(YEARS)
        units.append(_unit(f"t{i}", ty, base - 50.0 * (years >= ty)))
        units.append(_unit(f"c{i}", None, base))
    panel = StudyPanel(units)
    res = panel_match(panel, PanelMatchConfig(max_lead=4, max_controls=1))
    att = panel_att(panel, res, max_lead=4, bootstrap_runs=100)
    assert np.allclose(att.att_ha, -50.0)
    assert np.allclose(att.ci_low_ha, -50.0) and np.allclose(att.ci_high_ha, -50.0)


def test_identical_trajectories_give_exact_zero():
    panel = _random_panel(3)
    t = panel["t01"]
    twin = Unit("twin", AREA, t.outcome, t.covariates, None)
    m = MatchSet("t01", {"twin": 1.0}, "mahalanobis", 2)
    att = panel_att(StudyPanel(list(panel) + [twin]), [m], max_lead=2, bootstrap_runs=10)
    assert att.att_ha[1] == 0.0
    assert att.n_treated.tolist() == [0, 1]


def test_zero_effect_interval_coverage():
    covered = 0
    for seed in range(40):
        rng = np.random.default_rng(seed)
        units = [_unit(f"u{i:02d}", 2007 if i < 20 else None, 30 + rng.normal(0, 2, YEARS)) for i in range(60)]
        panel = StudyPanel(units)
        res = panel_match(panel, PanelMatchConfig(max_lead=1, max_controls=5))
        att = panel_att(panel, res, max_lead=1, bootstrap_runs=300, seed=seed)
        covered += att.ci_low_ha[0] <= 0 <= att.ci_high_ha[0]
    assert covered >= 32


# ------------------------------------------------------------------ genetic


def _genetic_pool(seed, n=40):
    rng = np.random.default_rng(seed)
    pool = [_unit(f"d{i:03d}", None, precip=1500 + rng.normal(0, 100, YEARS),
                  static={"slope": rng.normal(5, 2), "elevation": rng.normal(300, 80)}) for i in range(n)]
    treated = _unit("T", 2007, precip=np.full(YEARS, 1580.0), static={"slope": 7.0, "elevation": 350.0})
    return treated, pool


def test_genetic_clones_give_zero_smd():
    treated, pool = _genetic_pool(0)
    clones = [Unit(f"clone{i}", AREA, treated.outcome, treated.covariates, None) for i in range(3)]
    res = genetic_match(treated, pool + clones, k=3, config=GeneticConfig(generations=10))
    assert set(res.match.controls) == {"clone0", "clone1", "clone2"}
    assert res.balance.worst_after < 1e-12


def test_genetic_k_equal_to_pool_takes_everyone():
    treated, pool = _genetic_pool(1, n=8)
    res = genetic_match(treated, pool, k=8, config=GeneticConfig(generations=5))
    assert set(res.match.controls) == {u.id for u in pool}


def test_genetic_never_worse_than_identity_and_history_monotone():
    for seed in range(5):
        treated, pool = _genetic_pool(10 + seed)
        res = genetic_match(treated, pool, k=5, config=GeneticConfig(generations=30, seed=seed))
        assert res.balance.worst_after <= res.identity_fitness + 1e-12
        assert np.all(np.diff(res.history) <= 1e-15)


def test_genetic_is_deterministic_and_pool_order_free():
    treated, pool = _genetic_pool(4)
    a = genetic_match(treated, pool, k=4, config=GeneticConfig(generations=15, seed=7))
    b = genetic_match(treated, pool[::-1], k=4, config=GeneticConfig(generations=15, seed=7))
    assert a.match == b.match


def test_genetic_rejects_bad_k():
    treated, pool = _genetic_pool(5, n=3)
    with pytest.raises(DomainError):
        genetic_match(treated, pool, k=4)


def test_smd_single_treated_uses_scale():
    out = smd(np.array([[2.0, 1.0]]), np.array([[1.0, 1.0], [1.0, 1.0]]), scale=np.array([0.5, 0.0]))
    assert out.tolist() == [2.0, 0.0]

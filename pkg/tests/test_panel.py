from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from redd_eval.errors import DomainError, IntegrityError, SchemaError
from redd_eval.panel import (
    CovariateVector,
    OutcomeSeries,
    StudyPanel,
    Unit,
    load_panel,
    relative_outcome,
    to_annual,
    to_cumulative,
    write_panel,
)


def _write(tmp_path, rows, header="unit,year,deforestation_ha,area_ha,treatment_year,precipitation,slope"):
    p = tmp_path / "panel.csv"
    p.write_text(header + "\n" + "\n".join(rows) + "\n")
    return p


def _grid(units=("a", "b", "c"), years=range(2001, 2006), skip=None, value=1.0):
    rows = []
    for i, u in enumerate(units):
        for y in years:
            if skip == (u, y):
                continue
            ty = "2004" if u == "a" else ""
            rows.append(f"{u},{y},{value},1000,{ty},{1500 + y - 2000 + i},{3 + i}")
    return rows


def test_load_well_formed(tmp_path):
    panel = load_panel(_write(tmp_path, _grid()))
    assert len(panel) == 3
    assert panel.ids == ["a", "b", "c"]
    assert list(panel.years) == [2001, 2002, 2003, 2004, 2005]
    assert panel["a"].role == "project"
    assert panel["b"].role == "donor-candidate"
    assert panel["a"].covariates.static == {"slope": 3.0}
    assert set(panel["a"].covariates.dynamic) == {"precipitation"}


def test_missing_year_names_unit_and_year(tmp_path):
    with pytest.raises(IntegrityError, match="a/2003"):
        load_panel(_write(tmp_path, _grid(skip=("a", 2003))))


def test_negative_outcome_rejected(tmp_path):
    with pytest.raises(DomainError):
        load_panel(_write(tmp_path, _grid(value=-1)))


def test_missing_column(tmp_path):
    with pytest.raises(SchemaError):
        load_panel(_write(tmp_path, ["a,2001,1"], header="unit,year,deforestation_ha"))


def test_missing_covariate_value_rejected(tmp_path):
    rows = _grid()
    rows[0] = rows[0].rsplit(",", 1)[0] + ","
    with pytest.raises(DomainError, match="missing value"):
        load_panel(_write(tmp_path, rows))


def test_roundtrip_is_structurally_equal(tmp_path):
    panel = load_panel(_write(tmp_path, _grid()))
    again = load_panel(write_panel(panel, tmp_path / "again.csv"))
    assert again == panel


def test_cumulative_examples():
    assert list(to_cumulative(OutcomeSeries(2001, [1, 2, 3])).values) == [1, 3, 6]
    assert list(to_cumulative(OutcomeSeries(2001, [0, 0, 0])).values) == [0, 0, 0]
    s = OutcomeSeries(2001, [5.5, 0, 2.25])
    assert list(to_annual(to_cumulative(s)).values) == [5.5, 0, 2.25]


def _unit(area, annual):
    return Unit("u", area, OutcomeSeries(2001, annual))


def test_relative_outcome_examples():
    assert np.allclose(relative_outcome(_unit(1000, [10, 20])).values, [1.0, 2.0])
    # a 40,103 ha site losing 155.8 ha in one year
    assert round(float(relative_outcome(_unit(40_103, [155.8])).values[0]), 3) == 0.388
    assert np.all(relative_outcome(_unit(50, [0, 0, 0])).values == 0)


def test_cumulative_exceeding_area_rejected():
    with pytest.raises(DomainError):
        _unit(10, [6, 6])


def test_unit_order_is_deterministic():
    units = [Unit(u, 100, OutcomeSeries(2001, [1, 2])) for u in ("c", "a", "b")]
    assert StudyPanel(units).ids == StudyPanel(units[::-1]).ids == ["a", "b", "c"]


def test_misaligned_dynamic_covariate():
    with pytest.raises(IntegrityError):
        Unit("u", 100, OutcomeSeries(2001, [1, 2]), CovariateVector(dynamic={"p": [1.0, 2.0, 3.0]}))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=30))
def test_cumulative_monotone_and_invertible(values):
    s = OutcomeSeries(2001, values)
    cum = to_cumulative(s).values
    assert np.all(np.diff(cum) >= 0)
    back = to_annual(to_cumulative(s)).values
    assert np.allclose(back, values, rtol=0, atol=np.spacing(max(cum.max(), 1.0)) * 4)

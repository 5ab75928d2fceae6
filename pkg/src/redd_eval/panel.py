"""Spatial panel data model: units x years of deforestation, covariates, treatment timing."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, IntegrityError, SchemaError

ROLES = ("project", "donor-candidate", "not-yet-treated")

# covariates stored as cover fractions; checked against [0, 1] at construction
FRACTION_SUFFIXES = ("_cover", "_fraction")


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


def _is_fraction(name: str) -> bool:
    return name.endswith(FRACTION_SUFFIXES)


@dataclass(frozen=True, eq=False)
class OutcomeSeries:
    """Contiguous annual series starting at ``first_year``."""

    first_year: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.ndim != 1:
            raise DomainError("outcome series must be one-dimensional")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("outcome series contains non-finite values")
        if np.any(self.values < 0):
            raise DomainError("outcome series contains negative values")

    @property
    def last_year(self) -> int:
        return self.first_year + len(self.values) - 1

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.first_year, self.first_year + len(self.values))

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, OutcomeSeries):
            return NotImplemented
        return self.first_year == other.first_year and np.array_equal(self.values, other.values)

    def at(self, year: int) -> float:
        return float(self.values[year - self.first_year])


@dataclass(frozen=True, eq=False)
class CovariateVector:
    static: Mapping[str, float] = field(default_factory=dict)
    dynamic: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        static = {k: float(v) for k, v in sorted(self.static.items())}
        dynamic = {k: _frozen(v) for k, v in sorted(self.dynamic.items())}
        for name, value in static.items():
            if not math.isfinite(value):
                raise DomainError(f"static covariate {name!r} is not finite")
            if _is_fraction(name) and not 0.0 <= value <= 1.0:
                raise DomainError(f"fraction covariate {name!r}={value} outside [0, 1]")
        for name, series in dynamic.items():
            if not np.all(np.isfinite(series)):
                raise DomainError(f"dynamic covariate {name!r} has non-finite values")
        object.__setattr__(self, "static", static)
        object.__setattr__(self, "dynamic", dynamic)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CovariateVector):
            return NotImplemented
        return (
            self.static == other.static
            and self.dynamic.keys() == other.dynamic.keys()
            and all(np.array_equal(self.dynamic[k], other.dynamic[k]) for k in self.dynamic)
        )


@dataclass(frozen=True, eq=False)
class Unit:
    id: str
    area_ha: float
    outcome: OutcomeSeries
    covariates: CovariateVector = field(default_factory=CovariateVector)
    treatment_year: int | None = None
    role: str | None = None

    def __post_init__(self):
        if not self.id:
            raise DomainError("unit id must be non-empty")
        if not (self.area_ha > 0 and math.isfinite(self.area_ha)):
            raise DomainError(f"unit {self.id}: area_ha must be positive")
        outcome = self.outcome
        role = self.role
        if role is None:
            if self.treatment_year is None:
                role = "donor-candidate"
            elif self.treatment_year <= outcome.last_year:
                role = "project"
            else:
                role = "not-yet-treated"
            object.__setattr__(self, "role", role)
        if role not in ROLES:
            raise DomainError(f"unit {self.id}: unknown role {role!r}")
        if role == "project":
            if self.treatment_year is None:
                raise DomainError(f"unit {self.id}: project without treatment_year")
            if not outcome.first_year <= self.treatment_year <= outcome.last_year:
                raise DomainError(f"unit {self.id}: treatment_year outside panel years")
        total = float(outcome.values.sum())
        if total > self.area_ha * (1 + 1e-9):
            raise DomainError(
                f"unit {self.id}: cumulative deforestation {total:g} ha exceeds area {self.area_ha:g} ha"
            )
        for name, series in self.covariates.dynamic.items():
            if len(series) != len(outcome):
                raise IntegrityError(f"unit {self.id}: dynamic covariate {name!r} misaligned with outcome")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Unit):
            return NotImplemented
        return (
            self.id == other.id
            and self.area_ha == other.area_ha
            and self.outcome == other.outcome
            and self.covariates == other.covariates
            and self.treatment_year == other.treatment_year
            and self.role == other.role
        )

    def __hash__(self) -> int:
        return hash(self.id)

    @property
    def years(self) -> np.ndarray:
        return self.outcome.years

    def pre_years(self, treatment_year: int | None = None) -> np.ndarray:
        """Calendar years strictly before ``treatment_year`` (default: own)."""
        ty = self.treatment_year if treatment_year is None else treatment_year
        if ty is None:
            return self.years
        return self.years[self.years < ty]

    def with_treatment(self, treatment_year: int | None, role: str | None = None) -> "Unit":
        return Unit(self.id, self.area_ha, self.outcome, self.covariates, treatment_year, role)


@dataclass(frozen=True, eq=False)
class StudyPanel:
    units: tuple[Unit, ...]
    first_year: int
    last_year: int

    def __init__(self, units: Iterable[Unit]):
        units = tuple(sorted(units, key=lambda u: u.id))
        if not units:
            raise IntegrityError("panel has no units")
        ids = [u.id for u in units]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise IntegrityError(f"duplicate unit ids: {dupes}")
        first = units[0].outcome.first_year
        last = units[0].outcome.last_year
        for u in units:
            if (u.outcome.first_year, u.outcome.last_year) != (first, last):
                raise IntegrityError(f"unit {u.id} spans {u.outcome.first_year}-{u.outcome.last_year}, expected {first}-{last}")
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "first_year", first)
        object.__setattr__(self, "last_year", last)
        object.__setattr__(self, "_index", {u.id: u for u in units})

    def __eq__(self, other) -> bool:
        if not isinstance(other, StudyPanel):
            return NotImplemented
        return self.units == other.units

    def __len__(self) -> int:
        return len(self.units)

    def __iter__(self):
        return iter(self.units)

    def __contains__(self, unit_id: str) -> bool:
        return unit_id in self._index

    def __getitem__(self, unit_id: str) -> Unit:
        try:
            return self._index[unit_id]
        except KeyError:
            raise DomainError(f"unknown unit {unit_id!r}") from None

    @property
    def ids(self) -> list[str]:
        return [u.id for u in self.units]

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.first_year, self.last_year + 1)

    @property
    def projects(self) -> list[Unit]:
        return [u for u in self.units if u.role == "project"]

    @property
    def controls(self) -> list[Unit]:
        return [u for u in self.units if u.role != "project"]

    def subset(self, ids: Iterable[str]) -> "StudyPanel":
        return StudyPanel(self[i] for i in ids)

    def static_names(self) -> list[str]:
        return sorted({k for u in self.units for k in u.covariates.static})

    def dynamic_names(self) -> list[str]:
        return sorted({k for u in self.units for k in u.covariates.dynamic})


# ---------------------------------------------------------------- transforms


def to_cumulative(s: OutcomeSeries) -> OutcomeSeries:
    return OutcomeSeries(s.first_year, np.cumsum(s.values))


def to_annual(s: OutcomeSeries) -> OutcomeSeries:
    """Inverse of :func:`to_cumulative`; tiny negative rounding residue is clipped."""
    diff = np.diff(s.values, prepend=0.0)
    return OutcomeSeries(s.first_year, np.maximum(diff, 0.0))


def relative_outcome(u: Unit) -> OutcomeSeries:
    """Annual deforestation in percent of the unit area per year."""
    if u.area_ha <= 0:
        raise DomainError(f"unit {u.id}: zero area")
    return OutcomeSeries(u.outcome.first_year, 100.0 * u.outcome.values / u.area_ha)


# ---------------------------------------------------------------------- I/O


@dataclass(frozen=True)
class PanelSchema:
    """Column names of the long-format panel file.

    ``static``/``dynamic`` list covariate columns explicitly; when both are
    ``None`` every extra column is a covariate and a column that is constant
    within every unit is read as static.
    """

    unit: str = "unit"
    year: str = "year"
    outcome: str = "deforestation_ha"
    area: str = "area_ha"
    treatment_year: str = "treatment_year"
    role: str = "role"
    static: Sequence[str] | None = None
    dynamic: Sequence[str] | None = None

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, object]) -> "PanelSchema":
        return cls(**{k: v for k, v in mapping.items() if k in cls.__dataclass_fields__})


def _parse_float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DomainError(f"{where}: not a number: {text!r}") from None


def load_panel(path: str | Path, schema: PanelSchema | Mapping | None = None) -> StudyPanel:
    if schema is None:
        schema = PanelSchema()
    elif not isinstance(schema, PanelSchema):
        schema = PanelSchema.from_mapping(schema)
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"panel file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)

    required = [schema.unit, schema.year, schema.outcome, schema.area]
    for col in required:
        if col not in header:
            raise SchemaError(f"missing column {col!r}")
    reserved = {schema.unit, schema.year, schema.outcome, schema.area, schema.treatment_year, schema.role}
    if schema.static is not None or schema.dynamic is not None:
        static_cols = list(schema.static or [])
        dynamic_cols = list(schema.dynamic or [])
        for col in static_cols + dynamic_cols:
            if col not in header:
                raise SchemaError(f"missing column {col!r}")
    else:
        static_cols, dynamic_cols = None, None
    cov_cols = [c for c in header if c not in reserved] if static_cols is None else static_cols + dynamic_cols

    by_unit: dict[str, list[dict]] = {}
    for row in rows:
        by_unit.setdefault(row[schema.unit].strip(), []).append(row)

    # years of the whole panel
    all_years = sorted({int(r[schema.year]) for r in rows})
    if not all_years:
        raise IntegrityError("panel file has no data rows")
    first, last = all_years[0], all_years[-1]

    parsed: dict[str, dict] = {}
    for uid in sorted(by_unit):
        urows = sorted(by_unit[uid], key=lambda r: int(r[schema.year]))
        years = [int(r[schema.year]) for r in urows]
        if len(set(years)) != len(years):
            raise IntegrityError(f"{uid}: duplicate years")
        present = set(years)
        for y in range(first, last + 1):
            if y not in present:
                raise IntegrityError(f"{uid}/{y}")
        values = []
        for r, y in zip(urows, years):
            v = _parse_float(r[schema.outcome], f"{uid}/{y}")
            if v < 0:
                raise DomainError(f"{uid}/{y}: negative deforestation {v}")
            values.append(v)
        area = _parse_float(urows[0][schema.area], f"{uid}/area")
        ty_text = (urows[0].get(schema.treatment_year) or "").strip()
        ty = int(float(ty_text)) if ty_text else None
        role = (urows[0].get(schema.role) or "").strip() or None
        covs = {}
        for col in cov_cols:
            col_vals = []
            for r, y in zip(urows, years):
                text = (r.get(col) or "").strip()
                if text == "":
                    raise DomainError(f"{uid}/{y}: missing value for covariate {col!r}")
                col_vals.append(_parse_float(text, f"{uid}/{y}/{col}"))
            covs[col] = np.array(col_vals)
        parsed[uid] = dict(values=values, area=area, ty=ty, role=role, covs=covs)

    if static_cols is None:
        static_cols = [c for c in cov_cols if all(np.all(p["covs"][c] == p["covs"][c][0]) for p in parsed.values())]
        dynamic_cols = [c for c in cov_cols if c not in static_cols]

    units = []
    for uid, p in parsed.items():
        cv = CovariateVector(
            static={c: p["covs"][c][0] for c in static_cols},
            dynamic={c: p["covs"][c] for c in dynamic_cols},
        )
        units.append(Unit(uid, p["area"], OutcomeSeries(first, p["values"]), cv, p["ty"], p["role"]))
    return StudyPanel(units)


def write_panel(panel: StudyPanel, path: str | Path) -> Path:
    """Write the long-format panel file read by :func:`load_panel`."""
    path = Path(path)
    static = panel.static_names()
    dynamic = panel.dynamic_names()
    header = ["unit", "year", "deforestation_ha", "area_ha", "treatment_year", "role", *static, *dynamic]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for u in panel.units:
            for k, year in enumerate(u.years):
                row = [u.id, int(year), repr(float(u.outcome.values[k])), repr(float(u.area_ha)),
                       "" if u.treatment_year is None else u.treatment_year, u.role]
                row += [repr(float(u.covariates.static[c])) for c in static]
                row += [repr(float(u.covariates.dynamic[c][k])) for c in dynamic]
                w.writerow(row)
    return path

"""Carbon-offset arithmetic under a linear per-hectare crediting model.

Ex-ante credits are spread evenly over the ex-ante baseline deforestation,
giving a rate in Mg CO2 per hectare. Offsets are then re-priced against
the synthetic-control counterfactual: proportionally (credits scaled by
SC / baseline deforestation) and by avoided hectares (SC minus observed),
the latter only for projects with a significant placebo verdict.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DomainError, InputError, SchemaError

# relative disagreement above which a reported figure is flagged
REPORT_TOLERANCE = 0.005


@dataclass(frozen=True)
class CreditInputs:
    project: str
    exante_credits: float
    baseline_defor: float
    observed_defor: float
    sc_defor: float
    significant: bool
    horizon_year: int = 2020
    country: str = ""
    reported_proportional: float | None = None
    reported_avoided_ha: float | None = None
    reported_sc_offsets: float | None = None

    def __post_init__(self):
        if not self.project:
            raise DomainError("project id must be non-empty")
        for name in ("exante_credits", "observed_defor", "sc_defor"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise DomainError(f"{self.project}: {name} must be finite and >= 0, got {v}")
        if not (math.isfinite(self.baseline_defor) and self.baseline_defor > 0):
            raise DomainError(f"{self.project}: baseline deforestation must be > 0, got {self.baseline_defor}")


def per_ha_rate(x: CreditInputs) -> float:
    """Mg CO2 credited per hectare of ex-ante baseline deforestation."""
    if x.baseline_defor <= 0:
        raise DomainError(f"{x.project}: zero baseline")
    return x.exante_credits / x.baseline_defor


def proportional_offsets(x: CreditInputs) -> float:
    return x.exante_credits * (x.sc_defor / x.baseline_defor)


def ungated_sc_offsets(x: CreditInputs) -> tuple[float, float]:
    """``(avoided_ha, offsets)`` ignoring the significance verdict."""
    avoided = max(0.0, x.sc_defor - x.observed_defor)
    return avoided, avoided * per_ha_rate(x)


def sc_offsets(x: CreditInputs) -> tuple[float, float]:
    """``(avoided_ha, offsets)``; zero unless the reduction is significant."""
    if not x.significant:
        return 0.0, 0.0
    return ungated_sc_offsets(x)


@dataclass(frozen=True)
class LedgerRow:
    inputs: CreditInputs
    per_ha_rate: float
    proportional_offsets: float
    avoided_ha: float
    sc_offsets: float
    ungated_avoided_ha: float
    ungated_sc_offsets: float
    flags: tuple[str, ...] = ()

    @property
    def project(self) -> str:
        return self.inputs.project


def _disagrees(reported: float | None, computed: float) -> bool:
    if reported is None:
        return False
    return abs(reported - computed) > REPORT_TOLERANCE * max(abs(reported), abs(computed), 1.0)


def ledger_row(x: CreditInputs) -> LedgerRow:
    avoided, offsets = sc_offsets(x)
    u_avoided, u_offsets = ungated_sc_offsets(x)
    flags = []
    prop = proportional_offsets(x)
    if _disagrees(x.reported_proportional, prop):
        flags.append("reported proportional offsets differ from computed")
    if _disagrees(x.reported_sc_offsets, offsets) or _disagrees(x.reported_avoided_ha, avoided):
        if not x.significant and not _disagrees(x.reported_sc_offsets, u_offsets) \
                and not _disagrees(x.reported_avoided_ha, u_avoided):
            flags.append("reported offsets credited without a significant reduction")
        else:
            flags.append("reported SC offsets differ from computed")
    return LedgerRow(x, per_ha_rate(x), prop, avoided, offsets, u_avoided, u_offsets, tuple(flags))


@dataclass(frozen=True)
class CreditLedger:
    rows: tuple[LedgerRow, ...]
    total_exante: float
    total_proportional: float
    total_sc_offsets: float
    exante_nonsignificant: float
    flagged: tuple[str, ...] = field(default_factory=tuple)

    @property
    def share_nonsignificant(self) -> float:
        return self.exante_nonsignificant / self.total_exante if self.total_exante else 0.0

    def row(self, project: str) -> LedgerRow:
        for r in self.rows:
            if r.project == project:
                return r
        raise DomainError(f"no ledger row for {project!r}")


def aggregate_ledger(inputs: Iterable[CreditInputs]) -> CreditLedger:
    """Per-project rows sorted by project id, with compensated-sum totals."""
    inputs = list(inputs)
    if not inputs:
        raise DomainError("no crediting inputs")
    ids = [x.project for x in inputs]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise DomainError(f"duplicate project ids: {dupes}")
    rows = tuple(ledger_row(x) for x in sorted(inputs, key=lambda x: x.project))
    return CreditLedger(
        rows=rows,
        total_exante=math.fsum(r.inputs.exante_credits for r in rows),
        total_proportional=math.fsum(r.proportional_offsets for r in rows),
        total_sc_offsets=math.fsum(r.sc_offsets for r in rows),
        exante_nonsignificant=math.fsum(r.inputs.exante_credits for r in rows if not r.inputs.significant),
        flagged=tuple(r.project for r in rows if r.flags),
    )


# ---------------------------------------------------------------------- I/O

# credits.csv, left to right as in the published ledger; reported_* columns are optional
INPUT_COLUMNS = ("country", "project", "observed_ha", "baseline_ha", "sc_ha", "exante_credits",
                 "proportional_offsets", "significant", "avoided_ha", "sc_offsets")
REQUIRED_COLUMNS = ("project", "observed_ha", "baseline_ha", "sc_ha", "exante_credits", "significant")
LEDGER_COLUMNS = INPUT_COLUMNS + ("per_ha_rate", "proportional_offsets_calc", "avoided_ha_calc",
                                  "sc_offsets_calc", "flags")


def _num(text: str, where: str) -> float:
    try:
        return float(text.replace(",", "").strip())
    except ValueError:
        raise InputError(f"{where}: not a number: {text!r}") from None


def _flag(text: str, where: str) -> bool:
    t = text.strip().lower()
    if t in ("yes", "true", "1", "y"):
        return True
    if t in ("no", "false", "0", "n"):
        return False
    raise InputError(f"{where}: significance must be yes/no, got {text!r}")


def read_credit_inputs(path: str | Path, horizon_year: int = 2020) -> list[CreditInputs]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        out = []
        for n, row in enumerate(reader, start=2):
            if row["project"].strip().upper() == "TOTAL":
                continue
            where = f"{path}:{n}"

            def opt(col):
                v = (row.get(col) or "").strip()
                return _num(v, where) if v else None

            out.append(CreditInputs(
                project=row["project"].strip(),
                exante_credits=_num(row["exante_credits"], where),
                baseline_defor=_num(row["baseline_ha"], where),
                observed_defor=_num(row["observed_ha"], where),
                sc_defor=_num(row["sc_ha"], where),
                significant=_flag(row["significant"], where),
                horizon_year=horizon_year,
                country=(row.get("country") or "").strip(),
                reported_proportional=opt("proportional_offsets"),
                reported_avoided_ha=opt("avoided_ha"),
                reported_sc_offsets=opt("sc_offsets"),
            ))
    return out


def fmt6(v: float | None) -> str:
    """Six significant digits; blank for missing values."""
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return ""
    return f"{v:.6g}"


def write_credit_inputs(inputs: Sequence[CreditInputs], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INPUT_COLUMNS)
        for x in inputs:
            w.writerow([x.country, x.project, repr(x.observed_defor), repr(x.baseline_defor), repr(x.sc_defor),
                        repr(x.exante_credits), "" if x.reported_proportional is None else repr(x.reported_proportional),
                        "Yes" if x.significant else "No",
                        "" if x.reported_avoided_ha is None else repr(x.reported_avoided_ha),
                        "" if x.reported_sc_offsets is None else repr(x.reported_sc_offsets)])
    return path


def ledger_records(ledger: CreditLedger) -> list[list[str]]:
    rows = []
    for r in ledger.rows:
        x = r.inputs
        rows.append([x.country, x.project, fmt6(x.observed_defor), fmt6(x.baseline_defor), fmt6(x.sc_defor),
                     fmt6(x.exante_credits), fmt6(x.reported_proportional), "Yes" if x.significant else "No",
                     fmt6(x.reported_avoided_ha), fmt6(x.reported_sc_offsets), fmt6(r.per_ha_rate),
                     fmt6(r.proportional_offsets), fmt6(r.avoided_ha), fmt6(r.sc_offsets), "; ".join(r.flags)])
    rows.append(["", "TOTAL", "", "", "", fmt6(ledger.total_exante), "", "", "", "", "",
                 fmt6(ledger.total_proportional), "", fmt6(ledger.total_sc_offsets), ""])
    return rows


def write_ledger(ledger: CreditLedger, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEDGER_COLUMNS)
        w.writerows(ledger_records(ledger))
    return path

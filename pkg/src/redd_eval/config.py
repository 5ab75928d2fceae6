"""Run configuration: one TOML file with a section per stage.

Every key is optional; missing keys fall back to the module defaults. A
global ``seed`` (``[run]`` or ``--seed``) is threaded into every seeded
component so a single number fixes the whole run.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError
from .gsc import GscConfig
from .landscape import LandscapeConfig, StudyDesign
from .matching import GeneticConfig, PanelMatchConfig
from .sc import ScConfig

STAGES = ("simulate", "screen", "validate", "sc", "placebo", "gsc", "match", "credit", "report")


@dataclass(frozen=True)
class MatchSection:
    method: str = "mahalanobis"
    k: int = 10
    covariates: tuple[str, ...] | None = None
    genetic: GeneticConfig = field(default_factory=GeneticConfig)
    panel: PanelMatchConfig = field(default_factory=PanelMatchConfig)


@dataclass(frozen=True)
class CreditSection:
    """Ex-ante inputs synthesised from SC results when no credits file is given.

    The baseline extrapolates the pre-treatment mean annual deforestation
    over the post-treatment years, inflated by ``baseline_inflation``;
    credits are that baseline times ``carbon_density`` (Mg CO2/ha).
    """

    carbon_density: float = 300.0
    baseline_inflation: float = 1.5
    horizon_year: int | None = None


@dataclass(frozen=True)
class RunConfig:
    stages: tuple[str, ...] = STAGES
    seed: int = 0
    out_dir: Path = Path("out")
    panel_path: Path | None = None
    credits_path: Path | None = None
    projects: tuple[str, ...] | None = None
    landscape: LandscapeConfig = field(default_factory=LandscapeConfig)
    design: StudyDesign = field(default_factory=StudyDesign)
    sc: ScConfig = field(default_factory=ScConfig)
    gsc: GscConfig = field(default_factory=GscConfig)
    gsc_controls: str | tuple[str, ...] = "from-sc"
    match: MatchSection = field(default_factory=MatchSection)
    credit: CreditSection = field(default_factory=CreditSection)

    def __post_init__(self):
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise ConfigError(f"unknown stage(s) {bad}; expected a subset of {list(STAGES)}")
        if not self.stages:
            raise ConfigError("no stages requested")
        if isinstance(self.gsc_controls, str) and self.gsc_controls not in ("from-sc", "from-genmatch", "all"):
            raise ConfigError("gsc controls must be 'from-sc', 'from-genmatch', 'all' or a list of unit ids")

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the configuration."""
        text = json.dumps(_plain(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def with_seed(self, seed: int) -> "RunConfig":
        """Copy with ``seed`` pushed into every seeded component."""
        rep = dataclasses.replace
        return rep(
            self,
            seed=seed,
            landscape=rep(self.landscape, seed=seed),
            sc=rep(self.sc, seed=seed),
            gsc=rep(self.gsc, seed=seed),
            match=rep(self.match, genetic=rep(self.match.genetic, seed=seed), panel=rep(self.match.panel, seed=seed)),
        )


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(x) for x in obj]
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "tolist"):
        return obj.tolist()
    return obj


def _build(cls, section: Mapping[str, Any] | None, where: str, **extra):
    section = dict(section or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - names)
    if unknown:
        raise ConfigError(f"[{where}]: unknown key(s) {unknown}")
    for k, v in list(section.items()):
        if isinstance(v, list):
            section[k] = tuple(v)
    section.update(extra)
    try:
        return cls(**section)
    except TypeError as e:
        raise ConfigError(f"[{where}]: {e}") from None


_DESIGN_KEYS = {f.name for f in dataclasses.fields(StudyDesign)}
_SECTIONS = {"run", "inputs", "simulate", "sc", "gsc", "match", "credit"}


def config_from_mapping(data: Mapping[str, Any], base_dir: Path | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from parsed TOML; relative paths resolve against ``base_dir``."""
    unknown = sorted(set(data) - _SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s) {unknown}")
    base = base_dir or Path.cwd()
    run = dict(data.get("run", {}))
    inputs = dict(data.get("inputs", {}))
    extra_run = sorted(set(run) - {"stages", "seed", "out_dir"})
    if extra_run:
        raise ConfigError(f"[run]: unknown key(s) {extra_run}")
    extra_in = sorted(set(inputs) - {"panel", "credits", "projects"})
    if extra_in:
        raise ConfigError(f"[inputs]: unknown key(s) {extra_in}")

    def path(v):
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else base / p

    sim = dict(data.get("simulate", {}))
    design = {k: sim.pop(k) for k in list(sim) if k in _DESIGN_KEYS}
    gsc = dict(data.get("gsc", {}))
    controls = gsc.pop("controls", "from-sc")
    match = dict(data.get("match", {}))
    genetic = match.pop("genetic", None)
    panel = match.pop("panel", None)
    cfg = RunConfig(
        stages=tuple(run.get("stages", STAGES)),
        seed=int(run.get("seed", 0)),
        out_dir=path(run.get("out_dir", "out")),
        panel_path=path(inputs.get("panel")),
        credits_path=path(inputs.get("credits")),
        projects=tuple(inputs["projects"]) if "projects" in inputs else None,
        landscape=_build(LandscapeConfig, sim, "simulate"),
        design=_build(StudyDesign, design, "simulate"),
        sc=_build(ScConfig, data.get("sc"), "sc"),
        gsc=_build(GscConfig, gsc, "gsc"),
        gsc_controls=tuple(controls) if isinstance(controls, list) else controls,
        match=_build(MatchSection, match, "match",
                     genetic=_build(GeneticConfig, genetic, "match.genetic"),
                     panel=_build(PanelMatchConfig, panel, "match.panel")),
        credit=_build(CreditSection, data.get("credit"), "credit"),
    )
    return cfg.with_seed(cfg.seed)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return config_from_mapping(data, path.parent)

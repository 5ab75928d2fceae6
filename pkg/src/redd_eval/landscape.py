"""Synthetic raster landscapes and circular project/donor sites.

Stands in for the remote-sensing pipeline at desk scale: a seeded grid of
forest cells with spatially autocorrelated deforestation risk, from which
circular sites are sampled and turned into panel units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DomainError
from .panel import CovariateVector, OutcomeSeries, StudyPanel, Unit

NEVER = -1


@dataclass(frozen=True)
class LandscapeConfig:
    rows: int = 200
    cols: int = 200
    years: int = 20
    first_year: int = 2001
    intensity: float | np.ndarray = 0.01
    heterogeneity: float = 1.0
    kernel_width: float = 8.0
    temporal_sd: float = 0.0
    forest_cover_mean: float = 0.9
    forest_cover_sd: float = 0.05
    forest_threshold: float = 0.3
    cell_size_ha: float = 1.0
    seed: int = 0


@dataclass(frozen=True, eq=False)
class Landscape:
    """Per-cell layers on a ``rows x cols`` grid.

    ``defor_year`` holds the year index (0-based) in which the cell was
    cleared, or ``NEVER``; it is only set on initially forested cells.
    """

    forest_cover: np.ndarray
    forested: np.ndarray
    defor_year: np.ndarray
    layers: dict
    precip_base: np.ndarray
    precip_anomaly: np.ndarray
    cell_size_ha: float
    first_year: int
    years: int
    seed: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.forest_cover.shape

    def deforested_fraction(self) -> float:
        n = self.forested.sum()
        return float((self.defor_year != NEVER).sum() / n) if n else 0.0


@dataclass(frozen=True)
class CircularSite:
    center: tuple[int, int]
    radius_cells: int
    cell_size_ha: float = 1.0

    def __post_init__(self):
        if self.radius_cells <= 0:
            raise DomainError("site radius must be positive")

    @property
    def cell_count(self) -> int:
        return len(disc_offsets(self.radius_cells))

    @property
    def area_ha(self) -> float:
        return self.cell_count * self.cell_size_ha

    def fits(self, shape: tuple[int, int]) -> bool:
        r, (cr, cc) = self.radius_cells, self.center
        return r <= cr < shape[0] - r and r <= cc < shape[1] - r

    def to_json(self) -> dict:
        return {"center": list(self.center), "radius": self.radius_cells, "area_ha": self.area_ha}


@lru_cache(maxsize=None)
def disc_offsets(radius: int) -> np.ndarray:
    """Integer offsets (dr, dc) with dr^2 + dc^2 <= radius^2."""
    r = int(radius)
    dr, dc = np.mgrid[-r : r + 1, -r : r + 1]
    keep = dr**2 + dc**2 <= r * r
    out = np.column_stack([dr[keep], dc[keep]])
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def annulus_offsets(inner: int, outer: int) -> np.ndarray:
    dr, dc = np.mgrid[-outer : outer + 1, -outer : outer + 1]
    d2 = dr**2 + dc**2
    keep = (d2 > inner * inner) & (d2 <= outer * outer)
    out = np.column_stack([dr[keep], dc[keep]])
    out.setflags(write=False)
    return out


def _cells(center, offsets, shape) -> tuple[np.ndarray, np.ndarray]:
    rr = offsets[:, 0] + center[0]
    cc = offsets[:, 1] + center[1]
    ok = (rr >= 0) & (rr < shape[0]) & (cc >= 0) & (cc < shape[1])
    return rr[ok], cc[ok]


def _smooth_field(rng: np.random.Generator, shape, width: float) -> np.ndarray:
    z = rng.standard_normal(shape)
    if width > 0:
        z = gaussian_filter(z, sigma=width, mode="reflect")
    sd = z.std()
    return (z - z.mean()) / sd if sd > 0 else z - z.mean()


def generate_landscape(config: LandscapeConfig, protection: Sequence[tuple] = ()) -> Landscape:
    """Simulate a landscape.

    ``protection`` is an optional list of ``(site, start_year, multiplier)``;
    from ``start_year`` on, clearing probability inside the site is scaled by
    ``multiplier`` (used to plant a known treatment effect).
    """
    if config.rows <= 0 or config.cols <= 0 or config.years <= 0:
        raise DomainError("landscape dimensions must be positive")
    shape = (config.rows, config.cols)
    intensity = np.broadcast_to(np.asarray(config.intensity, dtype=float), shape)
    if np.any(intensity < 0) or np.any(intensity > 1):
        raise DomainError("intensity must lie in [0, 1]")
    rng = np.random.default_rng(config.seed)

    risk_z = _smooth_field(rng, shape, config.kernel_width)
    h = config.heterogeneity
    prob = intensity * np.exp(h * risk_z - 0.5 * h * h) if h > 0 else intensity.copy()
    prob = np.clip(prob, 0.0, 1.0)

    cover = np.clip(
        config.forest_cover_mean + config.forest_cover_sd * _smooth_field(rng, shape, config.kernel_width), 0.0, 1.0
    )
    forested = cover >= config.forest_threshold
    layers = {
        "tree_cover": cover,
        "elevation": 500.0 + 250.0 * _smooth_field(rng, shape, config.kernel_width),
        "slope": np.clip(8.0 + 4.0 * _smooth_field(rng, shape, config.kernel_width), 0.0, 60.0),
        "travel_time": 0.05 * np.exp(-0.4 * risk_z + 0.3 * _smooth_field(rng, shape, config.kernel_width)),
    }
    precip_base = 1800.0 + 300.0 * _smooth_field(rng, shape, config.kernel_width)
    precip_anomaly = 120.0 * rng.standard_normal(config.years)
    shocks = np.exp(config.temporal_sd * rng.standard_normal(config.years) - 0.5 * config.temporal_sd**2)

    multipliers = []
    for site, start_year, mult in protection:
        rr, cc = _cells(site.center, disc_offsets(site.radius_cells), shape)
        multipliers.append((rr, cc, start_year - config.first_year, float(mult)))

    defor_year = np.full(shape, NEVER, dtype=np.int16)
    standing = forested.copy()
    for t in range(config.years):
        p_t = np.clip(prob * shocks[t], 0.0, 1.0)
        if multipliers:
            p_t = p_t.copy()
            for rr, cc, start, mult in multipliers:
                if t >= start:
                    p_t[rr, cc] = np.clip(p_t[rr, cc] * mult, 0.0, 1.0)
        hit = standing & (rng.random(shape) < p_t)
        defor_year[hit] = t
        standing &= ~hit

    for arr in (cover, forested, defor_year, precip_base, precip_anomaly, *layers.values()):
        arr.setflags(write=False)
    return Landscape(cover, forested, defor_year, layers, precip_base, precip_anomaly,
                     config.cell_size_ha, config.first_year, config.years, config.seed)


def _valid_centers(shape, radius: int, exclude: Sequence[CircularSite]) -> np.ndarray:
    rows, cols = shape
    if rows < 2 * radius + 1 or cols < 2 * radius + 1:
        return np.empty((0, 2), dtype=int)
    rr, cc = np.mgrid[radius : rows - radius, radius : cols - radius]
    ok = np.ones(rr.shape, dtype=bool)
    for site in exclude:
        # two discs are disjoint once their centres are more than r1 + r2 apart
        reach = radius + site.radius_cells
        ok &= (rr - site.center[0]) ** 2 + (cc - site.center[1]) ** 2 > reach * reach
    return np.column_stack([rr[ok], cc[ok]])


def sample_donor_pool(l: Landscape, template: CircularSite, n: int, seed: int,
                      exclude: Sequence[CircularSite] = ()) -> list[CircularSite]:
    """Draw ``n`` distinct random placements of the template's disc.

    Donors may overlap each other but never the template (or ``exclude``).
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    if not template.fits(l.shape):
        raise DomainError("template site does not fit in the grid")
    centers = _valid_centers(l.shape, template.radius_cells, [template, *exclude])
    if len(centers) == 0:
        raise DomainError("grid too small to fit any donor site")
    if n > len(centers):
        raise DomainError(f"only {len(centers)} distinct donor placements available, {n} requested")
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(len(centers), size=n, replace=False))
    return [CircularSite((int(r), int(c)), template.radius_cells, l.cell_size_ha) for r, c in centers[pick]]


def buffer_name(radius: int) -> str:
    return f"buffer_r{int(radius)}"


def extract_unit(l: Landscape, s: CircularSite, buffer_radii: Sequence[int] | None = None,
                 unit_id: str = "site", treatment_year: int | None = None, role: str | None = None) -> Unit:
    """Turn a site into a panel unit.

    Outcome is hectares cleared per year inside the disc; each buffer is the
    ring between the site edge and ``radius + b`` cells (clipped at the grid
    edge), reported as ``buffer_r{b}`` in ha/yr.
    """
    if buffer_radii is None:
        buffer_radii = [2 * s.radius_cells]
    rr, cc = _cells(s.center, disc_offsets(s.radius_cells), l.shape)
    if len(rr) == 0:
        raise DomainError("site contains no grid cells")
    ha = l.cell_size_ha

    def annual(rows, cols) -> np.ndarray:
        years = l.defor_year[rows, cols]
        years = years[years != NEVER]
        return np.bincount(years, minlength=l.years).astype(float) * ha

    outcome = OutcomeSeries(l.first_year, annual(rr, cc))
    static = {name: float(layer[rr, cc].mean()) for name, layer in l.layers.items()}
    dynamic = {"precipitation": float(l.precip_base[rr, cc].mean()) + l.precip_anomaly}
    for b in buffer_radii:
        br, bc = _cells(s.center, annulus_offsets(s.radius_cells, s.radius_cells + int(b)), l.shape)
        dynamic[buffer_name(b)] = annual(br, bc)
    return Unit(unit_id, len(rr) * ha, outcome, CovariateVector(static, dynamic), treatment_year, role)


# ------------------------------------------------------------- study builder


@dataclass(frozen=True)
class StudyDesign:
    """Layout of a simulated study: projects, donors and their timing."""

    n_projects: int = 1
    n_donors: int = 40
    radius: int = 5
    treatment_years: Sequence[int] | None = None
    effect_multiplier: float = 1.0
    buffer_radii: Sequence[int] | None = None
    not_yet_treated: int = 0
    late_treatment_year: int | None = None


def simulate_study(config: LandscapeConfig, design: StudyDesign) -> tuple[StudyPanel, dict]:
    """Build a landscape, place projects and donors, return the panel and a sites manifest."""
    rng = np.random.default_rng([config.seed, 1])
    shape = (config.rows, config.cols)
    last_year = config.first_year + config.years - 1
    default_ty = config.first_year + config.years // 2
    tys = list(design.treatment_years or [default_ty] * design.n_projects)
    if len(tys) != design.n_projects:
        raise DomainError("treatment_years must list one year per project")

    projects: list[CircularSite] = []
    for _ in range(design.n_projects):
        centers = _valid_centers(shape, design.radius, projects)
        if len(centers) == 0:
            raise DomainError("grid too small for the requested projects")
        r, c = centers[rng.integers(len(centers))]
        projects.append(CircularSite((int(r), int(c)), design.radius, config.cell_size_ha))

    protection = [(s, ty, design.effect_multiplier) for s, ty in zip(projects, tys) if design.effect_multiplier != 1.0]
    land = generate_landscape(config, protection)
    donors = sample_donor_pool(land, projects[0], design.n_donors, seed=int(rng.integers(2**31)), exclude=projects[1:])

    buffers = design.buffer_radii or [2 * design.radius]
    width = max(len(str(design.n_projects)), 2)
    dwidth = max(len(str(design.n_donors)), 4)
    units, manifest = [], {"projects": [], "donors": []}
    for k, (site, ty) in enumerate(zip(projects, tys)):
        uid = f"project-{k + 1:0{width}d}"
        role = "project" if ty <= last_year else "not-yet-treated"
        units.append(extract_unit(land, site, buffers, uid, ty, role))
        manifest["projects"].append({"id": uid, "treatment_year": ty, **site.to_json()})
    late = design.late_treatment_year or last_year + 1
    for k, site in enumerate(donors):
        uid = f"donor-{k + 1:0{dwidth}d}"
        ty = late if k < design.not_yet_treated else None
        units.append(extract_unit(land, site, buffers, uid, ty))
        manifest["donors"].append({"id": uid, **site.to_json()})
    manifest["grid"] = {"rows": config.rows, "cols": config.cols, "years": config.years,
                        "first_year": config.first_year, "cell_size_ha": config.cell_size_ha, "seed": config.seed}
    return StudyPanel(units), manifest


def write_manifest(manifest: dict, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path

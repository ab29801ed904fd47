"""Testbed builders, degradation schedules and realistic-phantom ingestion."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml
from scipy import ndimage

from . import hfgm
from .errors import ConfigError, DomainError, GeometryError
from .grid import (
    DEBYE_TABLE,
    FAT_DEBYE,
    FIBROGLANDULAR_DEBYE,
    SKIN_DEBYE,
    GridSpec,
    MediaMap,
    Tissue,
    blank_arrays,
    disk_mask,
    paint,
)

DEFAULT_RADIUS = 0.06
TREATMENT_RADIUS = 0.01
DEFAULT_TARGET = (-0.03, 0.0)
INCLUSION_RADIUS = 0.02
INCLUSION_CENTERS = ((-0.03, 0.0), (0.03, 0.0))
SKIN_THICKNESS = 2e-3
FIBRO_FRACTION_BAND = (0.20, 0.35)

_TISSUE_NAMES = {
    "fat": Tissue.FAT,
    "fibroglandular": Tissue.FIBROGLANDULAR,
    "skin": Tissue.SKIN,
}
_IMMERSION_NAMES = {"air": Tissue.AIR, "water": Tissue.WATER}


def _tissue(name) -> Tissue:
    if isinstance(name, Tissue):
        return name
    try:
        return _TISSUE_NAMES[str(name).lower()]
    except KeyError:
        raise ConfigError(f"unknown tissue {name!r}") from None


def _immersion(name) -> Tissue:
    if isinstance(name, Tissue):
        if name not in _IMMERSION_NAMES.values():
            raise ConfigError(f"{name.name} is not an immersion medium")
        return name
    try:
        return _IMMERSION_NAMES[str(name).lower()]
    except KeyError:
        raise ConfigError(f"unknown immersion medium {name!r}") from None


def _finish(grid, arrays, immersion, **kwargs) -> MediaMap:
    return MediaMap(grid=grid, immersion=immersion, **arrays, **kwargs)


def build_homogeneous(tissue="fibroglandular", radius: float = DEFAULT_RADIUS,
                      immersion="water", grid: GridSpec | None = None,
                      **kwargs) -> MediaMap:
    """A single-tissue disk of ``radius`` meters centered on the origin."""
    grid = grid or GridSpec()
    label = _tissue(tissue)
    imm = _immersion(immersion)
    if radius <= 0:
        raise DomainError("radius must be positive")
    mask = disk_mask(grid, (0.0, 0.0), radius)
    if not mask.any():
        raise GeometryError("disk contains no cell centers")
    if mask[0, :].any() or mask[-1, :].any() or mask[:, 0].any() or mask[:, -1].any():
        raise GeometryError("disk does not fit inside the grid")
    arrays = blank_arrays(grid, imm)
    paint(arrays, mask, DEBYE_TABLE[label], label)
    return _finish(grid, arrays, imm, **kwargs)


def build_two_inclusion(grid: GridSpec | None = None, immersion="water",
                        radius: float = DEFAULT_RADIUS,
                        inclusion_radius: float = INCLUSION_RADIUS,
                        centers=INCLUSION_CENTERS, **kwargs) -> MediaMap:
    """Fatty disk with two fibroglandular inclusions (primary left, secondary right)."""
    grid = grid or GridSpec()
    imm = _immersion(immersion)
    arrays = blank_arrays(grid, imm)
    paint(arrays, disk_mask(grid, (0.0, 0.0), radius), FAT_DEBYE, Tissue.FAT)
    for c in centers:
        paint(arrays, disk_mask(grid, tuple(c), inclusion_radius), FIBROGLANDULAR_DEBYE,
              Tissue.FIBROGLANDULAR)
    return _finish(grid, arrays, imm, **kwargs)


# --------------------------------------------------------------------------
# degradation schedules


REGION_KINDS = ("surrounding", "treatment", "hotspot")


@dataclass(frozen=True)
class Region:
    """A scaled region: ``surrounding`` covers every tissue cell; the other
    kinds are disks given by ``center`` (m) and ``radius`` (m)."""

    name: str
    kind: str
    fractions: tuple
    center: tuple | None = None
    radius: float | None = None

    def __post_init__(self):
        if self.kind not in REGION_KINDS:
            raise ConfigError(f"region {self.name!r}: unknown kind {self.kind!r}")
        fr = tuple(float(f) for f in self.fractions)
        object.__setattr__(self, "fractions", fr)
        if not fr:
            raise ConfigError(f"region {self.name!r} has no fractions")
        if any(not 0 < f <= 1 for f in fr):
            raise ConfigError(f"region {self.name!r}: fractions must lie in (0, 1]")
        if any(b > a for a, b in zip(fr, fr[1:])):
            raise ConfigError(f"region {self.name!r}: fractions must be non-increasing")
        if self.kind != "surrounding":
            if self.center is None or self.radius is None or not self.radius > 0:
                raise ConfigError(f"region {self.name!r} needs a center and positive radius")
            object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
            object.__setattr__(self, "radius", float(self.radius))

    def mask(self, media: MediaMap) -> np.ndarray:
        tissue = media.tissue_mask
        if self.kind == "surrounding":
            return tissue
        return disk_mask(media.grid, self.center, self.radius) & tissue


@dataclass(frozen=True)
class ScenarioSchedule:
    """Per-step Debye fraction multipliers for named regions.

    Regions are applied surrounding first, then hotspots, then the treatment
    disk, so inner regions override the surrounding fraction.
    """

    name: str
    regions: tuple
    description: str = ""
    target: tuple = DEFAULT_TARGET
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        regions = tuple(self.regions)
        object.__setattr__(self, "regions", regions)
        if not regions:
            raise ConfigError("schedule has no regions")
        lengths = {len(r.fractions) for r in regions}
        if len(lengths) != 1:
            raise ConfigError("all regions must list the same number of steps")
        names = [r.name for r in regions]
        if len(set(names)) != len(names):
            raise ConfigError("region names must be unique")
        if sum(r.kind == "surrounding" for r in regions) > 1:
            raise ConfigError("at most one surrounding region")
        if sum(r.kind == "treatment" for r in regions) > 1:
            raise ConfigError("at most one treatment region")
        disks = [r for r in regions if r.kind != "surrounding"]
        for a_i, a in enumerate(disks):
            for b in disks[a_i + 1:]:
                d = math.dist(a.center, b.center)
                if d < a.radius + b.radius:
                    raise GeometryError(f"regions {a.name!r} and {b.name!r} overlap")

    @property
    def n_steps(self) -> int:
        return len(self.regions[0].fractions)

    def region(self, name: str) -> Region:
        for r in self.regions:
            if r.name == name:
                return r
        raise KeyError(name)

    def fractions_at(self, step: int) -> dict:
        self._check_step(step)
        return {r.name: r.fractions[step] for r in self.regions}

    def _check_step(self, step: int) -> None:
        if not 0 <= step < self.n_steps:
            raise DomainError(f"step {step} outside schedule of {self.n_steps} steps")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSchedule":
        try:
            regions = []
            for r in data["regions"]:
                fr = r.get("fractions")
                if fr is None:
                    rate, steps = float(r["rate"]), int(r["steps"])
                    fr = [round(1.0 - rate * k, 12) for k in range(steps + 1)]
                regions.append(Region(
                    name=str(r["name"]), kind=str(r["kind"]), fractions=tuple(fr),
                    center=tuple(r["center"]) if "center" in r else None,
                    radius=r.get("radius"),
                ))
            return cls(
                name=str(data.get("name", "schedule")),
                regions=tuple(regions),
                description=str(data.get("description", "")),
                target=tuple(data.get("target", DEFAULT_TARGET)),
                metadata=dict(data.get("metadata", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed schedule: {exc}") from exc

    def to_dict(self) -> dict:
        regions = []
        for r in self.regions:
            d = {"name": r.name, "kind": r.kind}
            if r.center is not None:
                d["center"] = list(r.center)
                d["radius"] = r.radius
            d["fractions"] = list(r.fractions)
            regions.append(d)
        return {"name": self.name, "description": self.description,
                "target": list(self.target), "metadata": dict(self.metadata),
                "regions": regions}


def load_schedule(path_or_name: str | os.PathLike) -> ScenarioSchedule:
    """Read a YAML schedule file, or a bundled one by name (e.g. ``"scenario-b"``)."""
    p = str(path_or_name)
    if not os.path.exists(p):
        bundled = resources.files("hyperbeam") / "data" / "schedules" / f"{p}.yaml"
        if not bundled.is_file():
            raise ConfigError(f"no schedule file or bundled schedule named {p!r}")
        text = bundled.read_text()
    else:
        with open(p) as fh:
            text = fh.read()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"schedule is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("schedule must be a mapping")
    return ScenarioSchedule.from_dict(data)


def bundled_schedules() -> list[str]:
    root = resources.files("hyperbeam") / "data" / "schedules"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


_APPLY_ORDER = {"surrounding": 0, "hotspot": 1, "treatment": 2}


def apply_scenario(base: MediaMap, schedule: ScenarioSchedule, step: int) -> MediaMap:
    """Scale the Debye parameters of ``base`` region by region for ``step``."""
    schedule._check_step(step)
    frac = np.ones(base.grid.shape)
    for r in sorted(schedule.regions, key=lambda r: _APPLY_ORDER[r.kind]):
        frac[r.mask(base)] = r.fractions[step]
    if np.all(frac == 1.0):
        return base
    return base.with_debye(
        eps_inf=np.maximum(1.0, base.eps_inf * frac),
        delta_eps=base.delta_eps * frac,
        sigma_s=base.sigma_s * frac,
    )


def region_masks(media: MediaMap, schedule: ScenarioSchedule) -> dict:
    """Exclusive per-region masks as applied (surrounding excludes the disks)."""
    owner = {}
    taken = np.zeros(media.grid.shape, dtype=bool)
    for r in sorted(schedule.regions, key=lambda r: -_APPLY_ORDER[r.kind]):
        m = r.mask(media) & ~taken
        owner[r.name] = m
        taken |= m
    return owner


# --------------------------------------------------------------------------
# realistic phantoms


def load_realistic(path: str | os.PathLike, grid: GridSpec | None = None) -> MediaMap:
    """Load an HFGM media map; the immersion is forced to water."""
    media = hfgm.read_media(path, grid)
    if media.immersion is not Tissue.WATER:
        arrays = {n: np.array(getattr(media, n)) for n in
                  ("eps_inf", "delta_eps", "sigma_s", "tau", "labels")}
        outside = ~media.tissue_mask
        water = DEBYE_TABLE[Tissue.WATER]
        paint(arrays, outside, water, Tissue.WATER)
        media = MediaMap(grid=media.grid, immersion=Tissue.WATER, **arrays)
    return media


def breast_outline(grid: GridSpec, semi_x: float = 0.058, semi_y: float = 0.052,
                   lobe: float = 0.04) -> np.ndarray:
    """Slightly asymmetric ellipse standing in for a coronal breast slice."""
    X, Y = grid.mesh()
    theta = np.arctan2(Y, X)
    rad = 1.0 + lobe * np.cos(2 * theta) - 0.5 * lobe * np.sin(theta)
    return (X / semi_x) ** 2 + (Y / semi_y) ** 2 <= rad**2


def generate_scattered_fibroglandular(seed: int, grid: GridSpec | None = None, *,
                                      fraction: float | None = None,
                                      correlation: float = 4e-3,
                                      skin: float = SKIN_THICKNESS) -> MediaMap:
    """Procedural scattered-fibroglandular phantom in a water bath.

    A smoothed Gaussian random field is thresholded inside the fatty interior
    so that fibroglandular cells make up ``fraction`` of the tissue cells
    (drawn from 22-33% when not given). A ``skin`` rim (m) closes the outline.
    """
    grid = grid or GridSpec()
    rng = np.random.default_rng(seed)
    if fraction is None:
        fraction = float(rng.uniform(0.22, 0.33))
    if not FIBRO_FRACTION_BAND[0] <= fraction <= FIBRO_FRACTION_BAND[1]:
        raise DomainError(f"fibroglandular fraction must lie in {FIBRO_FRACTION_BAND}")
    outline = breast_outline(grid)
    rim = max(1, int(round(skin / grid.dx)))
    interior = ndimage.binary_erosion(outline, iterations=rim)
    noise = rng.standard_normal(grid.shape)
    field_ = ndimage.gaussian_filter(noise, correlation / grid.dx, mode="wrap")
    n_target = int(round(fraction * outline.sum()))
    vals = field_[interior]
    if n_target > vals.size:
        raise GeometryError("interior too small for the requested fraction")
    order = np.argsort(-vals, kind="stable")
    fibro_flat = np.zeros(vals.size, dtype=bool)
    fibro_flat[order[:n_target]] = True
    fibro = np.zeros(grid.shape, dtype=bool)
    fibro[interior] = fibro_flat

    arrays = blank_arrays(grid, Tissue.WATER)
    paint(arrays, outline, SKIN_DEBYE, Tissue.SKIN)
    paint(arrays, interior, FAT_DEBYE, Tissue.FAT)
    paint(arrays, fibro, FIBROGLANDULAR_DEBYE, Tissue.FIBROGLANDULAR)
    return _finish(grid, arrays, Tissue.WATER)


def fibroglandular_fraction(media: MediaMap) -> float:
    tissue = media.tissue_mask.sum()
    return float((media.labels == Tissue.FIBROGLANDULAR).sum() / tissue) if tissue else 0.0


BUILDERS = {
    "homogeneous": build_homogeneous,
    "two-inclusion": build_two_inclusion,
    "scattered-fibroglandular": generate_scattered_fibroglandular,
}

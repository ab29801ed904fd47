"""Grid geometry, tissue parameters and single-pole Debye evaluations.

Time-harmonic quantities use the ``exp(+j*omega*t)`` convention everywhere in
this package, so lossy media have a negative imaginary permittivity:

    eps(omega) = eps_inf + delta_eps / (1 + j*omega*tau) + sigma_s / (j*omega*eps0)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np
from scipy import constants

from .errors import DomainError, GeometryError

EPS0 = constants.epsilon_0
MU0 = constants.mu_0
C0 = constants.c

CARRIER_FREQ = 2.5e9
BLOOD_TEMP = 37.0
WATER_BATH_TEMP = 15.0
AIR_TEMP = 25.0
H_AIR = 5.0
H_WATER = 300.0


class Tissue(IntEnum):
    AIR = 0
    WATER = 1
    FAT = 2
    FIBROGLANDULAR = 3
    SKIN = 4
    CUSTOM = 5

    @property
    def is_tissue(self) -> bool:
        return self not in (Tissue.AIR, Tissue.WATER)


IMMERSION_LABELS = (Tissue.AIR, Tissue.WATER)


@dataclass(frozen=True)
class GridSpec:
    """Uniform square Yee grid. The physical origin sits at cell ``(nx//2, ny//2)``."""

    nx: int = 400
    ny: int = 400
    dx: float = 0.5e-3
    dy: float = 0.5e-3
    courant_factor: float = 0.7
    pml_thickness: int = 12

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise DomainError("grid needs at least 3x3 cells")
        if not math.isclose(self.dx, self.dy, rel_tol=1e-12) or self.dx <= 0:
            raise DomainError("cells must be square with positive size")
        if not 0 < self.courant_factor < 1 / math.sqrt(2):
            raise DomainError("courant_factor must lie in (0, 1/sqrt(2))")
        if self.pml_thickness < 8:
            raise DomainError("pml_thickness must be at least 8 cells")
        if 2 * self.pml_thickness + 3 > min(self.nx, self.ny):
            raise DomainError("grid too small for its PML")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def center(self) -> tuple[int, int]:
        return (self.nx // 2, self.ny // 2)

    @property
    def courant_dt(self) -> float:
        return self.courant_factor * self.dx / (C0 * math.sqrt(2.0))

    def x(self) -> np.ndarray:
        return (np.arange(self.nx) - self.nx // 2) * self.dx

    def y(self) -> np.ndarray:
        return (np.arange(self.ny) - self.ny // 2) * self.dy

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates as ``(X, Y)`` arrays indexed ``[i, j]``."""
        return np.meshgrid(self.x(), self.y(), indexing="ij")

    def cell(self, x: float, y: float) -> tuple[int, int]:
        """Index of the cell whose center is nearest to ``(x, y)`` in meters."""
        i = int(np.rint(x / self.dx)) + self.nx // 2
        j = int(np.rint(y / self.dy)) + self.ny // 2
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise GeometryError(f"point ({x:.4g}, {y:.4g}) m lies outside the grid")
        return (i, j)

    def position(self, cell: tuple[int, int]) -> tuple[float, float]:
        i, j = cell
        return ((i - self.nx // 2) * self.dx, (j - self.ny // 2) * self.dy)

    def in_interior(self, cell: tuple[int, int], margin: int = 0) -> bool:
        """True when ``cell`` lies outside the PML by at least ``margin`` cells."""
        p = self.pml_thickness + margin
        i, j = cell
        return p <= i < self.nx - p and p <= j < self.ny - p

    def refined(self, factor: int = 2) -> "GridSpec":
        """Same physical extent with cells ``factor`` times smaller."""
        return replace(
            self,
            nx=(self.nx - 1) * factor + 1 if self.nx % 2 else self.nx * factor,
            ny=(self.ny - 1) * factor + 1 if self.ny % 2 else self.ny * factor,
            dx=self.dx / factor,
            dy=self.dy / factor,
            pml_thickness=self.pml_thickness * factor,
        )


@dataclass(frozen=True)
class DebyeParams:
    eps_inf: float
    delta_eps: float
    sigma_s: float
    tau: float

    def __post_init__(self):
        if not self.eps_inf >= 1.0:
            raise DomainError(f"eps_inf must be >= 1, got {self.eps_inf}")
        if not self.delta_eps >= 0.0:
            raise DomainError(f"delta_eps must be >= 0, got {self.delta_eps}")
        if not self.sigma_s >= 0.0:
            raise DomainError(f"sigma_s must be >= 0, got {self.sigma_s}")
        if not self.tau > 0.0:
            raise DomainError(f"tau must be > 0, got {self.tau}")

    @property
    def eps_s(self) -> float:
        return self.eps_inf + self.delta_eps

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.eps_inf, self.delta_eps, self.sigma_s, self.tau)


@dataclass(frozen=True)
class ThermalParams:
    cp: float
    k: float
    rho: float
    a0: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if not (self.cp > 0 and self.k > 0 and self.rho > 0):
            raise DomainError("cp, k and rho must be positive")
        if self.a0 < 0 or self.b < 0:
            raise DomainError("metabolic heat and perfusion must be non-negative")


# Breast tissue Debye parameters fitted around 2.5 GHz.
FAT_DEBYE = DebyeParams(3.39, 2.0, 0.05, 0.15e-12)
FIBROGLANDULAR_DEBYE = DebyeParams(17.5, 31.6, 0.72, 0.15e-12)
# Deionized water near room temperature; skin reuses the fibroglandular fit.
WATER_DEBYE = DebyeParams(5.2, 73.2, 0.0, 8.27e-12)
AIR_DEBYE = DebyeParams(1.0, 0.0, 0.0, 1.0e-12)
SKIN_DEBYE = FIBROGLANDULAR_DEBYE

FAT_THERMAL = ThermalParams(cp=2279.0, k=0.306, rho=1069.0, a0=350.0, b=2229.0)
FIBROGLANDULAR_THERMAL = ThermalParams(cp=3600.0, k=0.5, rho=1050.0, a0=690.0, b=2700.0)
WATER_THERMAL = ThermalParams(cp=4186.0, k=0.6, rho=1000.0)
AIR_THERMAL = ThermalParams(cp=1005.0, k=0.026, rho=1.2)

DEBYE_TABLE: dict[Tissue, DebyeParams] = {
    Tissue.AIR: AIR_DEBYE,
    Tissue.WATER: WATER_DEBYE,
    Tissue.FAT: FAT_DEBYE,
    Tissue.FIBROGLANDULAR: FIBROGLANDULAR_DEBYE,
    Tissue.SKIN: SKIN_DEBYE,
    Tissue.CUSTOM: FIBROGLANDULAR_DEBYE,
}

THERMAL_TABLE: dict[Tissue, ThermalParams] = {
    Tissue.AIR: AIR_THERMAL,
    Tissue.WATER: WATER_THERMAL,
    Tissue.FAT: FAT_THERMAL,
    Tissue.FIBROGLANDULAR: FIBROGLANDULAR_THERMAL,
    Tissue.SKIN: FIBROGLANDULAR_THERMAL,
    Tissue.CUSTOM: FIBROGLANDULAR_THERMAL,
}


def _check_freq(f):
    if np.any(np.asarray(f) <= 0):
        raise DomainError("frequency must be positive")


def debye_complex_permittivity(p: DebyeParams, f):
    """Complex relative permittivity of a single-pole Debye medium at ``f`` Hz."""
    _check_freq(f)
    w = 2 * np.pi * np.asarray(f, dtype=float)
    eps = p.eps_inf + p.delta_eps / (1 + 1j * w * p.tau) + p.sigma_s / (1j * w * EPS0)
    return complex(eps) if np.ndim(eps) == 0 else eps


def effective_conductivity(p: DebyeParams, f):
    """Conductivity in S/m equivalent to all losses of ``p`` at ``f`` Hz."""
    _check_freq(f)
    w = 2 * np.pi * np.asarray(f, dtype=float)
    # -Im(eps) * w * eps0, written out to keep the sigma_s term exact
    wt = w * p.tau
    sig = p.delta_eps * wt / (1 + wt * wt) * w * EPS0 + p.sigma_s
    return float(sig) if np.ndim(sig) == 0 else sig


def scale_debye(p: DebyeParams, fraction: float) -> DebyeParams:
    """Scale eps_inf, delta_eps and sigma_s by ``fraction``; tau is kept.

    eps_inf is clamped at 1 so the result never drops below vacuum.
    """
    if not 0 < fraction <= 1:
        raise DomainError(f"fraction must lie in (0, 1], got {fraction}")
    return DebyeParams(
        eps_inf=max(1.0, p.eps_inf * fraction),
        delta_eps=p.delta_eps * fraction,
        sigma_s=p.sigma_s * fraction,
        tau=p.tau,
    )


def disk_mask(grid: GridSpec, center: tuple[float, float], radius: float) -> np.ndarray:
    """Cells whose centers lie inside the closed disk (center/radius in meters)."""
    X, Y = grid.mesh()
    # half-cell-independent slack keeps boundary cells stable under float noise
    r2 = radius * radius * (1 + 1e-12)
    return (X - center[0]) ** 2 + (Y - center[1]) ** 2 <= r2


@dataclass(frozen=True)
class TissueRecord:
    debye: DebyeParams
    thermal: ThermalParams
    label: Tissue


@dataclass(frozen=True, eq=False)
class MediaMap:
    """Per-cell dielectric description of a testbed plus its immersion medium.

    Debye parameters are stored as one array per field; thermal parameters
    follow from the per-cell tissue label through :data:`THERMAL_TABLE`.
    """

    grid: GridSpec
    eps_inf: np.ndarray
    delta_eps: np.ndarray
    sigma_s: np.ndarray
    tau: np.ndarray
    labels: np.ndarray
    immersion: Tissue = Tissue.WATER
    boundary_h: float | None = None
    ambient_temp: float | None = None

    def __post_init__(self):
        imm = Tissue(self.immersion)
        object.__setattr__(self, "immersion", imm)
        if imm not in IMMERSION_LABELS:
            raise DomainError("immersion must be air or water")
        if self.boundary_h is None:
            object.__setattr__(self, "boundary_h", H_WATER if imm is Tissue.WATER else H_AIR)
        if self.ambient_temp is None:
            object.__setattr__(
                self, "ambient_temp", WATER_BATH_TEMP if imm is Tissue.WATER else AIR_TEMP
            )
        if self.boundary_h < 0:
            raise DomainError("boundary_h must be non-negative")
        for name in ("eps_inf", "delta_eps", "sigma_s", "tau"):
            arr = np.array(getattr(self, name), dtype=np.float64, order="C")
            if arr.shape != self.grid.shape:
                raise GeometryError(f"{name} has shape {arr.shape}, grid is {self.grid.shape}")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        labels = np.array(self.labels, dtype=np.int8, order="C")
        if labels.shape != self.grid.shape:
            raise GeometryError("labels do not match the grid shape")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        self.validate()

    def validate(self) -> None:
        valid = set(int(t) for t in Tissue)
        if not set(np.unique(self.labels).tolist()) <= valid:
            raise DomainError("unknown tissue label present")
        if not np.all(self.eps_inf >= 1.0):
            raise DomainError("eps_inf < 1 in some cell")
        if not (np.all(self.delta_eps >= 0) and np.all(self.sigma_s >= 0)):
            raise DomainError("negative delta_eps or sigma_s in some cell")
        if not np.all(self.tau > 0):
            raise DomainError("non-positive tau in some cell")
        outside = ~self.tissue_mask
        bad = outside & (self.labels != int(self.immersion))
        if np.any(bad):
            raise DomainError("non-tissue cells must carry the immersion label")

    @property
    def tissue_mask(self) -> np.ndarray:
        return self.labels >= int(Tissue.FAT)

    def debye_at(self, cell: tuple[int, int]) -> DebyeParams:
        i, j = cell
        return DebyeParams(
            float(self.eps_inf[i, j]),
            float(self.delta_eps[i, j]),
            float(self.sigma_s[i, j]),
            float(self.tau[i, j]),
        )

    def cell(self, cell: tuple[int, int]) -> TissueRecord:
        label = Tissue(int(self.labels[cell]))
        return TissueRecord(self.debye_at(cell), THERMAL_TABLE[label], label)

    def with_debye(self, eps_inf=None, delta_eps=None, sigma_s=None, tau=None) -> "MediaMap":
        return replace(
            self,
            eps_inf=self.eps_inf if eps_inf is None else eps_inf,
            delta_eps=self.delta_eps if delta_eps is None else delta_eps,
            sigma_s=self.sigma_s if sigma_s is None else sigma_s,
            tau=self.tau if tau is None else tau,
        )

    def complex_permittivity(self, f: float = CARRIER_FREQ) -> np.ndarray:
        _check_freq(f)
        w = 2 * np.pi * f
        return (
            self.eps_inf
            + self.delta_eps / (1 + 1j * w * self.tau)
            + self.sigma_s / (1j * w * EPS0)
        )

    def effective_conductivity(self, f: float = CARRIER_FREQ) -> np.ndarray:
        _check_freq(f)
        w = 2 * np.pi * f
        wt = w * self.tau
        return self.delta_eps * wt / (1 + wt * wt) * w * EPS0 + self.sigma_s

    def thermal_arrays(self) -> dict[str, np.ndarray]:
        """Per-cell ``cp, k, rho, a0, b`` arrays looked up from the labels."""
        out = {}
        for name in ("cp", "k", "rho", "a0", "b"):
            table = np.array([getattr(THERMAL_TABLE[t], name) for t in Tissue])
            out[name] = table[self.labels]
        return out

    def equals(self, other: "MediaMap") -> bool:
        """Bitwise equality of every stored field."""
        return (
            self.grid == other.grid
            and self.immersion == other.immersion
            and self.boundary_h == other.boundary_h
            and self.ambient_temp == other.ambient_temp
            and all(
                np.array_equal(getattr(self, n), getattr(other, n))
                for n in ("eps_inf", "delta_eps", "sigma_s", "tau", "labels")
            )
        )


def uniform_media(
    grid: GridSpec,
    debye: DebyeParams,
    label: Tissue = Tissue.CUSTOM,
    immersion: Tissue = Tissue.WATER,
    **kwargs,
) -> MediaMap:
    """Every cell carries ``debye``; handy for solver tests."""
    shape = grid.shape
    return MediaMap(
        grid=grid,
        eps_inf=np.full(shape, debye.eps_inf),
        delta_eps=np.full(shape, debye.delta_eps),
        sigma_s=np.full(shape, debye.sigma_s),
        tau=np.full(shape, debye.tau),
        labels=np.full(shape, int(label), dtype=np.int8),
        immersion=immersion,
        **kwargs,
    )


def paint(media_arrays: dict, mask: np.ndarray, debye: DebyeParams, label: Tissue) -> None:
    """Write ``debye`` and ``label`` into the masked cells of mutable arrays."""
    media_arrays["eps_inf"][mask] = debye.eps_inf
    media_arrays["delta_eps"][mask] = debye.delta_eps
    media_arrays["sigma_s"][mask] = debye.sigma_s
    media_arrays["tau"][mask] = debye.tau
    media_arrays["labels"][mask] = int(label)


def blank_arrays(grid: GridSpec, immersion: Tissue) -> dict:
    d = DEBYE_TABLE[immersion]
    shape = grid.shape
    return {
        "eps_inf": np.full(shape, d.eps_inf),
        "delta_eps": np.full(shape, d.delta_eps),
        "sigma_s": np.full(shape, d.sigma_s),
        "tau": np.full(shape, d.tau),
        "labels": np.full(shape, int(immersion), dtype=np.int8),
    }

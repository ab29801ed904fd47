"""Power-deposition and temperature metrics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import DomainError, GeometryError
from .grid import GridSpec, MediaMap, disk_mask

TREATMENT_RADIUS = 0.01


@dataclass(frozen=True)
class PowerReport:
    """Region integrals of a heating potential.

    ``total_media`` and ``treatment_region`` integrate Q*dx*dy (W/m in 2D);
    ``target_cell`` is Q at the focus cell (W/m^3). Ratios are relative to a
    baseline report and stay ``None`` when the baseline value is zero or absent.
    """

    total_media: float
    treatment_region: float
    target_cell: float
    total_ratio: float | None = None
    treatment_ratio: float | None = None
    target_ratio: float | None = None

    def __post_init__(self):
        for name in ("total_media", "treatment_region", "target_cell"):
            if not getattr(self, name) >= 0:
                raise DomainError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["quantity", "value", "ratio"])
        w.writerow(["total_media", repr(float(self.total_media)), _fmt(self.total_ratio)])
        w.writerow(["treatment_region", repr(float(self.treatment_region)), _fmt(self.treatment_ratio)])
        w.writerow(["target_cell", repr(float(self.target_cell)), _fmt(self.target_ratio)])
        return buf.getvalue()


def _fmt(x):
    return "" if x is None else repr(float(x))


def _ratio(value, base):
    return value / base if base is not None and base > 0 else None


def power_report(q: np.ndarray, media: MediaMap, target, baseline: PowerReport | None = None,
                 *, treatment_radius: float = TREATMENT_RADIUS) -> PowerReport:
    """Integrate ``q`` over the tissue and the treatment disk around ``target``."""
    q = np.asarray(q, dtype=float)
    g = media.grid
    if q.shape != g.shape:
        raise GeometryError("heating potential does not match the grid")
    if np.any(q < 0):
        raise DomainError("heating potential must be non-negative")
    target = tuple(target)
    tissue = media.tissue_mask
    area = g.dx * g.dy
    treat = disk_mask(g, g.position(target), treatment_radius) & tissue
    total = float(np.sum(q[tissue]) * area)
    region = float(np.sum(q[treat]) * area)
    cell = float(q[target])
    if baseline is None:
        return PowerReport(total, region, cell)
    return PowerReport(
        total, region, cell,
        _ratio(total, baseline.total_media),
        _ratio(region, baseline.treatment_region),
        _ratio(cell, baseline.target_cell),
    )


def region_power(q: np.ndarray, mask: np.ndarray, grid: GridSpec) -> float:
    """Integral of ``q`` over a boolean mask in W/m."""
    return float(np.sum(np.asarray(q)[np.asarray(mask, dtype=bool)]) * grid.dx * grid.dy)


def contour_mask(values: np.ndarray, level: float, mode: str = "db",
                 region: np.ndarray | None = None) -> np.ndarray:
    """Cells at or above a contour level.

    ``mode="db"``: ``level`` is in dB relative to the map maximum (e.g. -3),
    evaluated as a power ratio. ``mode="absolute"``: ``level`` is in map
    units (e.g. 42 C). Cells outside ``region`` are always false.
    """
    values = np.asarray(values, dtype=float)
    inside = np.ones(values.shape, dtype=bool) if region is None else np.asarray(region, bool)
    if mode == "db":
        if level > 0:
            raise DomainError("dB contour levels must be <= 0")
        peak = np.max(values[inside]) if inside.any() else 0.0
        thresh = peak * 10.0 ** (level / 10.0)
    elif mode == "absolute":
        thresh = level
    else:
        raise DomainError(f"unknown contour mode {mode!r}")
    return (values >= thresh) & inside


def component_at(mask: np.ndarray, cell) -> np.ndarray:
    """The 4-connected component of ``mask`` containing ``cell`` (empty if unset)."""
    labels, _ = ndimage.label(mask)
    lab = labels[tuple(cell)]
    if lab == 0:
        return np.zeros(mask.shape, dtype=bool)
    return labels == lab


def focal_area(q: np.ndarray, cell, level_db: float = -3.0, grid: GridSpec | None = None):
    """Size of the connected spot around ``cell`` within ``level_db`` of Q(cell).

    Returns a cell count, or an area in m^2 when ``grid`` is given.
    """
    q = np.asarray(q, dtype=float)
    ref = q[tuple(cell)]
    if not ref > 0:
        raise DomainError("Q at the focus cell must be positive")
    spot = component_at(q >= ref * 10.0 ** (level_db / 10.0), cell)
    n = int(spot.sum())
    return n if grid is None else n * grid.dx * grid.dy


def slice_1d(values: np.ndarray, grid: GridSpec, y: float = 0.0) -> np.ndarray:
    """Row of the map along x at the grid row nearest ``y`` (m)."""
    values = np.asarray(values)
    if values.shape != grid.shape:
        raise GeometryError("map does not match the grid")
    j = grid.cell(0.0, y)[1]
    if not 0 <= j < grid.ny:
        raise GeometryError(f"y = {y} lies outside the grid")
    return values[:, j].copy()


def peak_cell(values: np.ndarray, target, region: np.ndarray | None = None) -> tuple[int, int]:
    """Argmax of ``values`` in ``region``; ties go to the cell nearest
    ``target``, then to the first in row-major order."""
    values = np.asarray(values, dtype=float)
    inside = np.ones(values.shape, bool) if region is None else np.asarray(region, bool)
    if not inside.any():
        raise DomainError("empty search region")
    vmax = np.max(values[inside])
    cand = np.argwhere((values == vmax) & inside)
    d2 = (cand[:, 0] - target[0]) ** 2 + (cand[:, 1] - target[1]) ** 2
    best = cand[np.lexsort((cand[:, 1], cand[:, 0], d2))[0]]
    return int(best[0]), int(best[1])


def focus_error(q: np.ndarray, target, region: np.ndarray | None = None) -> float:
    """Distance in cells from ``target`` to the peak of ``q`` (within ``region``)."""
    target = tuple(target)
    p = peak_cell(q, target, region)
    return math.hypot(p[0] - target[0], p[1] - target[1])


def overlap(a: np.ndarray, b: np.ndarray) -> float:
    """Jaccard index of two masks (1 for two empty masks)."""
    a = np.asarray(a, bool)
    b = np.asarray(b, bool)
    union = np.logical_or(a, b).sum()
    return 1.0 if union == 0 else float(np.logical_and(a, b).sum() / union)


def threshold_masks(t: np.ndarray, levels=(37.0, 40.0, 42.0, 45.0),
                    region: np.ndarray | None = None) -> dict:
    """Absolute temperature contours keyed by level."""
    return {lv: contour_mask(t, lv, "absolute", region) for lv in levels}

"""Explicit finite-difference Pennes bio-heat solver on the EM grid.

Tissue cells evolve under

    rho*cp*dT/dt = div(K grad T) + A0 + scale*Q - B*(T - T_B)

while immersion cells stay at the bath/ambient temperature. Faces between a
tissue cell and the immersion carry the Robin flux ``(T - T_amb) / (dx/(2K) + 1/H)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .errors import CalibrationError, ConfigError, DomainError, GeometryError
from .grid import BLOOD_TEMP, MediaMap

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-4  # C/s


@dataclass(frozen=True)
class TemperatureField:
    t: np.ndarray
    time: float
    dt_thermal: float
    blood_temp: float = BLOOD_TEMP
    ambient: float = 15.0

    def __post_init__(self):
        if not np.isfinite(self.t).all():
            raise DomainError("temperature field holds non-finite values")


@dataclass(frozen=True)
class HeatScaling:
    scale: float = 1.0
    target_temp: float | None = None
    target_cell: tuple[int, int] | None = None

    def __post_init__(self):
        if not self.scale > 0:
            raise DomainError("heat scale must be positive")


def _face_conductances(media: MediaMap):
    """Per-volume face conductances in W/(m^3 C) along x and y."""
    g = media.grid
    th = media.thermal_arrays()
    k = th["k"]
    tissue = media.tissue_mask
    h = media.boundary_h
    dx = g.dx

    def faces(k1, k2, t1, t2):
        both = t1 & t2
        one = t1 ^ t2
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = np.where(both, 2 * k1 * k2 / (k1 + k2) / dx**2, 0.0)
            kt = np.where(t1, k1, k2)
            robin = 1.0 / (dx * (dx / (2 * kt) + 1.0 / h)) if h > 0 else np.zeros_like(kt)
        return inner + np.where(one, robin, 0.0)

    gx = faces(k[:-1, :], k[1:, :], tissue[:-1, :], tissue[1:, :])
    gy = faces(k[:, :-1], k[:, 1:], tissue[:, :-1], tissue[:, 1:])
    return np.ascontiguousarray(gx), np.ascontiguousarray(gy)


def _conductance_sum(gx, gy, shape):
    s = np.zeros(shape)
    s[:-1, :] += gx
    s[1:, :] += gx
    s[:, :-1] += gy
    s[:, 1:] += gy
    return s


def stability_limit(media: MediaMap) -> float:
    """Largest stable explicit step (s) over tissue cells.

    Takes the smaller of the textbook ``rho*cp / (4K/dx^2 + B)`` bound and the
    exact bound from the assembled face conductances.
    """
    th = media.thermal_arrays()
    tissue = media.tissue_mask
    if not tissue.any():
        raise GeometryError("no tissue cells to solve")
    rc = (th["rho"] * th["cp"])[tissue]
    textbook = rc / (4 * th["k"][tissue] / media.grid.dx**2 + th["b"][tissue])
    gx, gy = _face_conductances(media)
    exact = rc / (_conductance_sum(gx, gy, media.grid.shape)[tissue] + th["b"][tissue])
    return float(min(textbook.min(), exact.min()))


class ThermalSolver:
    """Precomputed explicit-update arrays for one media map and heat source."""

    def __init__(self, media: MediaMap, q: np.ndarray | None = None,
                 scale: HeatScaling | float = 1.0, dt: float | None = None,
                 safety: float = 0.95):
        self.media = media
        shape = media.grid.shape
        q = np.zeros(shape) if q is None else np.asarray(q, dtype=float)
        if q.shape != shape:
            raise GeometryError("heating potential does not match the grid")
        if np.any(q < 0):
            raise DomainError("heating potential must be non-negative")
        s = scale.scale if isinstance(scale, HeatScaling) else float(scale)
        if not s > 0:
            raise DomainError("heat scale must be positive")
        limit = stability_limit(media)
        if dt is None:
            dt = safety * limit
        elif dt > limit:
            raise ConfigError(f"thermal dt {dt:.4g} s exceeds the stability limit {limit:.4g} s")
        self.dt = dt
        self.scale = s
        th = media.thermal_arrays()
        tissue = media.tissue_mask
        self.active = np.ascontiguousarray(tissue.astype(np.uint8))
        self.gx, self.gy = _face_conductances(media)
        self.coef = np.ascontiguousarray(np.where(tissue, dt / (th["rho"] * th["cp"]), 0.0))
        self.src = np.ascontiguousarray(np.where(tissue, th["a0"] + s * q, 0.0))
        self.perf = np.ascontiguousarray(np.where(tissue, th["b"], 0.0))
        self.q = q

    def initial_field(self, blood_temp: float = BLOOD_TEMP) -> TemperatureField:
        """Uniform blood temperature in tissue, ambient in the immersion."""
        m = self.media
        t = np.where(m.tissue_mask, blood_temp, m.ambient_temp).astype(float)
        return TemperatureField(t, 0.0, self.dt, blood_temp, m.ambient_temp)

    def step(self, field: TemperatureField, monitor: np.ndarray | None = None):
        """Return ``(new_field, max |dT/dt| over monitor cells)``."""
        mon = self.active if monitor is None else np.ascontiguousarray(monitor.astype(np.uint8))
        out = np.empty_like(field.t)
        worst = kernels.pennes_step(
            np.ascontiguousarray(field.t), out, self.gx, self.gy, self.coef, self.src,
            self.perf, field.blood_temp, self.active, mon,
        )
        return replace(field, t=out, time=field.time + self.dt, dt_thermal=self.dt), worst / self.dt

    def steady_state(self, blood_temp: float = BLOOD_TEMP) -> np.ndarray:
        """Direct sparse solve of the stationary equation on the same stencil."""
        m = self.media
        shape = m.grid.shape
        tissue = m.tissue_mask
        idx = -np.ones(shape, dtype=np.int64)
        n = int(tissue.sum())
        idx[tissue] = np.arange(n)
        diag = self.perf[tissue].copy()
        rhs = self.src[tissue] + self.perf[tissue] * blood_temp
        rows, cols, vals = [], [], []
        amb = m.ambient_temp

        def couple(gface, a_sl, b_sl):
            nonlocal diag, rhs
            ga = gface
            ta, tb = tissue[a_sl], tissue[b_sl]
            ia, ib = idx[a_sl], idx[b_sl]
            both = ta & tb & (ga > 0)
            for src_i, dst_i in ((ia, ib), (ib, ia)):
                rows.append(src_i[both])
                cols.append(dst_i[both])
                vals.append(-ga[both])
            np.add.at(diag, ia[both], ga[both])
            np.add.at(diag, ib[both], ga[both])
            a_only = ta & ~tb & (ga > 0)
            np.add.at(diag, ia[a_only], ga[a_only])
            np.add.at(rhs, ia[a_only], ga[a_only] * amb)
            b_only = tb & ~ta & (ga > 0)
            np.add.at(diag, ib[b_only], ga[b_only])
            np.add.at(rhs, ib[b_only], ga[b_only] * amb)

        couple(self.gx, (slice(None, -1), slice(None)), (slice(1, None), slice(None)))
        couple(self.gy, (slice(None), slice(None, -1)), (slice(None), slice(1, None)))
        rows.append(np.arange(n))
        cols.append(np.arange(n))
        vals.append(diag)
        A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
        if np.all(diag == 0):
            raise CalibrationError("stationary problem is singular (no perfusion, no boundary loss)")
        sol = spla.spsolve(A, rhs)
        t = np.where(tissue, 0.0, amb)
        t[tissue] = sol
        return t


def pennes_step(field: TemperatureField, media: MediaMap, q: np.ndarray,
                scale: HeatScaling | float = 1.0) -> TemperatureField:
    """Advance ``field`` by one explicit step of ``field.dt_thermal`` seconds."""
    solver = ThermalSolver(media, q, scale, dt=field.dt_thermal)
    return solver.step(field)[0]


@dataclass
class SteadyResult:
    field: TemperatureField
    steady_time: float | None
    reached: bool
    history: dict = field(default_factory=dict)
    max_temp_history: list = field(default_factory=list)

    def series(self, cell) -> tuple[np.ndarray, np.ndarray]:
        times, temps = self.history[tuple(cell)]
        return np.asarray(times), np.asarray(temps)


def run_to_steady(field: TemperatureField | None, media: MediaMap, q: np.ndarray,
                  scale: HeatScaling | float = 1.0, max_time: float = 3600.0,
                  tol: float = DEFAULT_TOL, *, monitor: np.ndarray | None = None,
                  record: list | None = None, record_every: int = 1,
                  solver: ThermalSolver | None = None) -> SteadyResult:
    """Step until ``max |dT/dt|`` over ``monitor`` (default: all tissue) drops
    below ``tol`` C/s or ``max_time`` seconds have been simulated.

    Cells in ``record`` get their temperature history stored every
    ``record_every`` steps (always including the first and last sample).
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    if solver is None:
        dt = field.dt_thermal if field is not None else None
        solver = ThermalSolver(media, q, scale, dt=dt)
    if field is None:
        field = solver.initial_field()
    record = [tuple(c) for c in (record or [])]
    hist = {c: ([field.time], [float(field.t[c])]) for c in record}
    t_start = field.time
    reached = False
    steady_time = None
    k = 0
    while True:
        new, rate = solver.step(field, monitor)
        if rate < tol:
            reached = True
            steady_time = field.time - t_start
            break
        if new.time - t_start > max_time + 1e-9:
            break
        field = new
        k += 1
        if record and k % record_every == 0:
            for c in record:
                hist[c][0].append(field.time)
                hist[c][1].append(float(field.t[c]))
        if not math.isfinite(rate):
            raise DomainError("temperature diverged")
    if record and k % record_every != 0:
        for c in record:
            hist[c][0].append(field.time)
            hist[c][1].append(float(field.t[c]))
    return SteadyResult(field, steady_time, reached, hist)


def calibrate_scale(media: MediaMap, q: np.ndarray, target_temp: float, target_cell,
                    *, tol: float = 0.1, method: str = "secant",
                    max_iter: int = 60) -> HeatScaling:
    """Find the Q multiplier whose steady target-cell temperature is ``target_temp``.

    The stationary Pennes problem is affine in the scale, so two direct solves
    determine it (``method="secant"``); ``"bisection"`` brackets and halves.
    """
    target_cell = tuple(target_cell)
    q = np.asarray(q, dtype=float)
    if not np.any(q > 0):
        raise CalibrationError("heating potential is zero everywhere")
    if not media.tissue_mask[target_cell]:
        raise GeometryError("target cell is not tissue")

    def temp_at(s):
        return ThermalSolver(media, q, s).steady_state()[target_cell]

    base = ThermalSolver(media, q, 1.0).steady_state()
    t1 = base[target_cell]
    # scale -> 0 limit
    t0 = ThermalSolver(media, np.zeros_like(q), 1.0).steady_state()[target_cell]
    slope = t1 - t0
    if not slope > 1e-12:
        raise CalibrationError("heating has no effect at the target cell")
    if target_temp <= t0:
        raise CalibrationError(
            f"target {target_temp} C is not above the unheated temperature {t0:.3f} C"
        )
    if method == "secant":
        s = (target_temp - t0) / slope
        if abs(temp_at(s) - target_temp) > tol:
            raise CalibrationError("secant calibration missed the target; use bisection")
    elif method == "bisection":
        lo, hi = 0.0, 1.0
        while temp_at(hi) < target_temp:
            hi *= 2.0
            if hi > 1e30:
                raise CalibrationError("target temperature unreachable")
        s = hi
        for _ in range(max_iter):
            s = 0.5 * (lo + hi)
            ts = temp_at(s)
            if abs(ts - target_temp) <= tol / 4:
                break
            lo, hi = (s, hi) if ts < target_temp else (lo, s)
    else:
        raise DomainError(f"unknown calibration method {method!r}")
    return HeatScaling(scale=float(s), target_temp=target_temp, target_cell=target_cell)


def time_to_temperature(times, temps, threshold: float) -> float | None:
    """First time the series reaches ``threshold``, linearly interpolated."""
    times = np.asarray(times, dtype=float)
    temps = np.asarray(temps, dtype=float)
    if temps.size == 0:
        return None
    if temps[0] >= threshold:
        return float(times[0])
    above = np.nonzero(temps >= threshold)[0]
    if above.size == 0:
        return None
    k = above[0]
    t0, t1 = times[k - 1], times[k]
    y0, y1 = temps[k - 1], temps[k]
    return float(t0 + (threshold - y0) * (t1 - t0) / (y1 - y0))

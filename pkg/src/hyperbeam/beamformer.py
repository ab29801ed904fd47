"""Time-reversal channel acquisition and focus/null beamformer synthesis."""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AcquisitionError, DegenerateChannelError, DomainError, GeometryError, IllConditionedError
from .fdtd import Simulation, run_pulse
from .grid import CARRIER_FREQ, GridSpec, MediaMap

RCOND_MIN = 1e-10
MODES = ("static", "ideal", "partial-knowledge")


def ring_antennas(grid: GridSpec, count: int, radius: float,
                  center: tuple[float, float] = (0.0, 0.0)) -> list[tuple[int, int]]:
    """Cells of ``count`` elements spaced evenly on a circle, counter-clockwise
    from the +x axis, so element 0 is the reference at ``(radius, 0)``."""
    if count < 2:
        raise DomainError("an array needs at least two elements")
    cells = []
    for k in range(count):
        phi = 2 * math.pi * k / count
        cells.append(grid.cell(center[0] + radius * math.cos(phi),
                               center[1] + radius * math.sin(phi)))
    if len(set(cells)) != count:
        raise GeometryError("ring elements collapse onto the same cell")
    return cells


def mirror_permutation(cells, grid: GridSpec) -> np.ndarray:
    """Index map ``k -> k'`` taking each cell to its mirror image about x = 0."""
    lookup = {c: k for k, c in enumerate(cells)}
    cx = grid.nx // 2
    try:
        return np.array([lookup[(2 * cx - i, j)] for i, j in cells])
    except KeyError as exc:
        raise GeometryError("cell set is not mirror-symmetric") from exc


@dataclass(frozen=True)
class ChannelMatrix:
    """Normalized channel weights, one column per objective cell.

    ``raw`` keeps the un-normalized transfer values (ez spectrum at each
    antenna over the injected current spectrum at the objective).
    """

    entries: np.ndarray
    reference_antenna: int = 0
    carrier_freq: float = CARRIER_FREQ
    objectives: tuple = ()
    antennas: tuple = ()
    raw: np.ndarray | None = None

    def __post_init__(self):
        e = np.atleast_2d(np.asarray(self.entries, dtype=complex))
        if e.shape[0] < e.shape[1] and e.shape[0] == 1:
            e = e.T
        object.__setattr__(self, "entries", e)
        n, m = e.shape
        if m > n - 1:
            raise DomainError(f"{m} objectives need more than {n} antennas (M <= N-1)")
        if not 0 <= self.reference_antenna < n:
            raise DomainError("reference antenna index out of range")
        if not np.all(e[self.reference_antenna, :] == 1.0):
            raise DomainError("columns must be normalized to the reference antenna (entry 1+0j)")

    @property
    def n_antennas(self) -> int:
        return self.entries.shape[0]

    @property
    def n_objectives(self) -> int:
        return self.entries.shape[1]

    @classmethod
    def from_raw(cls, raw, reference_antenna=0, **kwargs) -> "ChannelMatrix":
        raw = np.atleast_2d(np.asarray(raw, dtype=complex))
        ref = raw[reference_antenna, :]
        if np.any(ref == 0):
            raise DegenerateChannelError("reference antenna entry is zero")
        entries = raw / ref[None, :]
        entries[reference_antenna, :] = 1.0 + 0.0j
        return cls(entries, reference_antenna, raw=raw, **kwargs)

    def column(self, m: int) -> "ChannelMatrix":
        raw = None if self.raw is None else self.raw[:, m:m + 1]
        objs = self.objectives[m:m + 1] if self.objectives else ()
        return ChannelMatrix(self.entries[:, m:m + 1], self.reference_antenna,
                             self.carrier_freq, objs, self.antennas, raw)

    def columns(self, idx) -> "ChannelMatrix":
        idx = list(idx)
        raw = None if self.raw is None else self.raw[:, idx]
        objs = tuple(self.objectives[i] for i in idx) if self.objectives else ()
        return ChannelMatrix(self.entries[:, idx], self.reference_antenna,
                             self.carrier_freq, objs, self.antennas, raw)


@dataclass(frozen=True)
class ObjectiveVector:
    """``g[m] = 1`` puts a focus on ``cells[m]``, ``0`` a null."""

    g: np.ndarray
    cells: tuple = ()

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float).ravel()
        if not np.all(np.isin(g, (0.0, 1.0))):
            raise DomainError("objective entries must be 0 (null) or 1 (focus)")
        if not np.any(g == 1.0):
            raise DomainError("at least one focus is required")
        if self.cells and len(self.cells) != g.size:
            raise DomainError("one cell per objective entry")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "cells", tuple(tuple(c) for c in self.cells))

    @classmethod
    def from_cells(cls, foci, nulls=()) -> "ObjectiveVector":
        cells = [tuple(c) for c in foci] + [tuple(c) for c in nulls]
        return cls(np.r_[np.ones(len(foci)), np.zeros(len(nulls))], tuple(cells))


@dataclass(frozen=True)
class BeamformerWeights:
    w: np.ndarray
    phase_only: bool = True
    mode: str = "ideal"
    unprojected: np.ndarray | None = None
    residual: float | None = None
    projected_residual: float | None = None
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=complex).ravel()
        object.__setattr__(self, "w", w)
        if self.mode not in MODES:
            raise DomainError(f"unknown beamformer mode {self.mode!r}")
        if self.phase_only and not np.allclose(np.abs(w), 1.0, rtol=0, atol=1e-12):
            raise DomainError("phase-only weights must have unit magnitude")

    @property
    def phases(self) -> np.ndarray:
        return np.angle(self.w)


def media_digest(media: MediaMap) -> str:
    h = hashlib.sha1()
    for name in ("eps_inf", "delta_eps", "sigma_s", "tau", "labels"):
        h.update(np.ascontiguousarray(getattr(media, name)).tobytes())
    h.update(repr((media.grid, int(media.immersion))).encode())
    return h.hexdigest()


def acquire_channel(media: MediaMap, objective_cells, antennas, *,
                    reference_antenna: int = 0, carrier: float = CARRIER_FREQ,
                    require_tissue: bool = True, workers: int = 1,
                    cache: dict | None = None, **pulse_kwargs) -> ChannelMatrix:
    """Time-reversal acquisition: one pulse from each objective cell, recorded
    at every antenna and reduced to a single carrier-frequency DFT bin.

    ``cache`` (optional dict) memoizes raw columns by media content and cell.
    """
    objective_cells = [tuple(c) for c in objective_cells]
    antennas = [tuple(a) for a in antennas]
    if require_tissue:
        for c in objective_cells:
            if not media.tissue_mask[c]:
                raise GeometryError(f"objective {c} is not inside tissue")
    digest = media_digest(media) if cache is not None else None
    sim_holder = {}

    def column(cell):
        key = (digest, cell, tuple(antennas), carrier)
        if cache is not None and key in cache:
            return cache[key]
        if "sim" not in sim_holder:
            sim_holder["sim"] = Simulation(media, carrier=carrier)
        rec = run_pulse(media, cell, antennas, sim=sim_holder["sim"], carrier=carrier,
                        **pulse_kwargs)
        if np.all(rec.series == 0) or np.all(rec.metadata["below_noise"]):
            raise AcquisitionError(f"recording from objective {cell} is degenerate")
        col = rec.transfer(carrier)
        if np.any(col == 0):
            raise AcquisitionError(f"zero channel entry for objective {cell}")
        if cache is not None:
            cache[key] = col
        return col

    if workers > 1 and len(objective_cells) > 1:
        sim_holder["sim"] = Simulation(media, carrier=carrier)
        with ThreadPoolExecutor(workers) as pool:
            cols = list(pool.map(column, objective_cells))
    else:
        cols = [column(c) for c in objective_cells]
    raw = np.stack(cols, axis=1)
    return ChannelMatrix.from_raw(raw, reference_antenna, carrier_freq=carrier,
                                  objectives=tuple(objective_cells), antennas=tuple(antennas))


def conjugate_weights(c, mode: str = "ideal") -> BeamformerWeights:
    """Phase-only conjugate match of a single channel column."""
    entries = c.entries if isinstance(c, ChannelMatrix) else np.asarray(c, dtype=complex)
    entries = np.asarray(entries, dtype=complex)
    if entries.ndim == 2:
        if entries.shape[1] != 1:
            raise DomainError("conjugate weights need exactly one objective")
        entries = entries[:, 0]
    mag = np.abs(entries)
    if np.any(mag == 0):
        raise DegenerateChannelError("channel has a zero-magnitude entry")
    return BeamformerWeights(np.conj(entries) / mag, phase_only=True, mode=mode)


def _near_dependent_pair(C: np.ndarray) -> tuple[int, int]:
    Cn = C / np.linalg.norm(C, axis=0, keepdims=True)
    G = np.abs(Cn.conj().T @ Cn)
    np.fill_diagonal(G, -1.0)
    i, j = np.unravel_index(np.argmax(G), G.shape)
    return (int(min(i, j)), int(max(i, j)))


def _phase_project(w: np.ndarray) -> np.ndarray:
    mag = np.abs(w)
    out = np.ones_like(w)
    nz = mag > 0
    out[nz] = w[nz] / mag[nz]
    return out


def _scaled_residual(w, C, g) -> float:
    """Constraint error after removing the best real-positive gain on the foci."""
    resp = w @ C
    foci = g == 1
    scale = np.mean(np.abs(resp[foci]))
    if scale == 0:
        return math.inf
    return float(np.max(np.abs(resp / scale - g)))


def lcmp_weights(C, g, *, phase_only: bool = True, projection: str = "normalize",
                 mode: str = "ideal", rcond_min: float = RCOND_MIN,
                 iterations: int = 500) -> BeamformerWeights:
    """Minimum-norm weights with ``w @ C == g^H`` exactly (before projection).

    ``projection`` chooses how amplitudes are discarded for unit-amplitude
    transmission: ``"normalize"`` keeps the phases of the exact solution;
    ``"alternating"`` alternates between the unit-modulus set and the
    constraint set (foci at a common gain, nulls at zero) starting there.
    """
    entries = C.entries if isinstance(C, ChannelMatrix) else np.asarray(C, dtype=complex)
    entries = np.atleast_2d(np.asarray(entries, dtype=complex))
    gv = g.g if isinstance(g, ObjectiveVector) else np.asarray(g, dtype=float).ravel()
    n, m = entries.shape
    if gv.size != m:
        raise DomainError(f"objective vector has {gv.size} entries for {m} columns")
    if m > n - 1:
        raise DomainError("at most N-1 objectives are supported")
    gram = entries.conj().T @ entries
    rcond = 1.0 / np.linalg.cond(gram)
    if not rcond >= rcond_min:
        raise IllConditionedError(rcond, _near_dependent_pair(entries))
    gh = gv.conj()
    w = np.linalg.solve(gram.T, gh) @ entries.conj().T
    residual = float(np.max(np.abs(w @ entries - gh)))
    if not phase_only:
        return BeamformerWeights(w, phase_only=False, mode=mode, unprojected=w,
                                 residual=residual, projected_residual=residual)
    if projection == "normalize":
        wp = _phase_project(w)
    elif projection == "alternating":
        wp = _alternating_projection(w, entries, gv, iterations)
    else:
        raise DomainError(f"unknown projection {projection!r}")
    return BeamformerWeights(wp, phase_only=True, mode=mode, unprojected=w,
                             residual=residual,
                             projected_residual=_scaled_residual(wp, entries, gv),
                             info={"projection": projection, "rcond": rcond})


def _alternating_projection(w0, C, g, iterations: int) -> np.ndarray:
    pinv_rows = np.linalg.solve(C.conj().T @ C, C.conj().T)  # (M, N)
    foci = g == 1
    u = _phase_project(w0)
    for _ in range(iterations):
        resp = u @ C
        gain = np.mean(np.abs(resp[foci]))
        target = np.where(foci, gain * np.exp(1j * np.angle(resp)), 0.0)
        # keep each focus phase, equalize gains, zero the nulls
        v = u - (resp - target) @ pinv_rows
        u_new = _phase_project(v)
        if np.max(np.abs(u_new - u)) < 1e-13:
            u = u_new
            break
        u = u_new
    # rotate so the reference element carries zero phase, like the exact solution
    return u * np.exp(-1j * (np.angle(u[0]) - np.angle(w0[0])))


def spatial_average_media(media: MediaMap, region: np.ndarray | None = None) -> MediaMap:
    """Replace the Debye parameters inside ``region`` (default: tissue) by their mean."""
    region = media.tissue_mask if region is None else np.asarray(region, dtype=bool)
    if region.shape != media.grid.shape:
        raise GeometryError("region mask does not match the grid")
    if not region.any():
        raise DomainError("averaging region is empty")
    out = {}
    for name in ("eps_inf", "delta_eps", "sigma_s", "tau"):
        arr = np.array(getattr(media, name))
        arr[region] = np.mean(arr[region])
        out[name] = arr
    out["eps_inf"] = np.maximum(out["eps_inf"], 1.0)
    return media.with_debye(**out)


@dataclass
class DesignRequest:
    antennas: list
    objectives: ObjectiveVector
    reference_antenna: int = 0
    phase_only: bool = True
    projection: str = "normalize"
    average_region: np.ndarray | None = None


def design(mode: str, true_media: MediaMap, baseline_media: MediaMap,
           request: DesignRequest, *, cache: dict | None = None,
           workers: int = 1) -> BeamformerWeights:
    """Acquire on the media each mode is allowed to know, then synthesize.

    static: baseline media; ideal: the true current media; partial-knowledge:
    the true media with tissue properties replaced by their spatial average.
    """
    if mode == "static":
        known = baseline_media
    elif mode == "ideal":
        known = true_media
    elif mode == "partial-knowledge":
        known = spatial_average_media(true_media, request.average_region)
    else:
        raise DomainError(f"unknown beamformer mode {mode!r}")
    C = acquire_channel(known, request.objectives.cells, request.antennas,
                        reference_antenna=request.reference_antenna, cache=cache,
                        workers=workers)
    if C.n_objectives == 1:
        bw = conjugate_weights(C, mode=mode)
        if not request.phase_only:
            bw = lcmp_weights(C, request.objectives, phase_only=False, mode=mode)
    else:
        bw = lcmp_weights(C, request.objectives, phase_only=request.phase_only,
                          projection=request.projection, mode=mode)
    bw.info["channel"] = C
    return bw

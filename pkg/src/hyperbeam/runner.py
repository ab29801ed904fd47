"""Config-driven scenario pipeline and run comparison.

A run expands its configuration into cases (antenna count x schedule step x
design x beamformer mode). Every case goes through

    acquire -> design -> run_cw -> heating_potential -> power_report
    [-> calibrate_scale -> run_to_steady -> thermal metrics]

and writes its products into ``cases/<case-id>/``. ``manifest.json`` lists every
file with its SHA-256; wall-clock runtimes go to ``timing.json`` so that the
rest of the bundle is bit-identical between runs of the same configuration.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import scipy
import yaml

from . import __version__, export, fdtd, hfgm, kernels, metrics, phantoms, thermal
from .beamformer import DesignRequest, ObjectiveVector, design, ring_antennas
from .errors import ComparisonError, ConfigError, GeometryError, HyperbeamError, StageError
from .grid import GridSpec, MediaMap, disk_mask

log = logging.getLogger(__name__)

BUNDLE_FORMAT = "hyperbeam-bundle/1"
TIMING_FILE = "timing.json"

DEFAULTS: dict = {
    "seed": 0,
    "grid": {"nx": 401, "ny": 401, "dx": 5e-4, "courant_factor": 0.7, "pml_thickness": 12},
    "phantom": {
        "builder": "homogeneous",
        "tissue": "fibroglandular",
        "radius": 0.06,
        "immersion": "water",
        "file": None,
    },
    "antennas": {"count": 16, "counts": None, "radius": 0.07, "reference": 0},
    "target": [-0.03, 0.0],
    "designs": [{"name": "single"}],
    "beamformer": {"modes": ["ideal"], "phase_only": True, "projection": "normalize"},
    "schedule": {"file": None, "steps": "all"},
    "em": {
        "settle_periods": 40,
        "observe_periods": 1,
        "steady_tol": 0.005,
        "carrier_freq": 2.5e9,
        "bandwidth": 750e6,
    },
    "thermal": {
        "enabled": False,
        "scale": "calibrate",
        "target_temp": 45.0,
        "max_time": 1200.0,
        "tol": 1e-4,
        "thresholds": [37.0, 40.0, 42.0, 45.0],
        "time_thresholds": [43.0],
        "record_every": 10,
    },
    "regions_of_interest": [],
    "normalization": "baseline",
    "previews": True,
    "output": "hyperbeam-run",
    "workers": 1,
}

NORMALIZATIONS = ("baseline", "focus", "none")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ScenarioConfig:
    """Resolved run configuration (defaults merged with the user's file)."""

    data: dict

    @classmethod
    def from_dict(cls, data: dict | None) -> "ScenarioConfig":
        if data is not None and not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping")
        unknown = set(data or {}) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        cfg = cls(_merge(DEFAULTS, data or {}))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike, overrides: dict | None = None) -> "ScenarioConfig":
        """Read a YAML config file, or a bundled one by name (e.g. ``"two-inclusion"``)."""
        p = str(path)
        try:
            if os.path.exists(p):
                with open(p) as fh:
                    text = fh.read()
            else:
                bundled = resources.files("hyperbeam") / "data" / "configs" / f"{p}.yaml"
                if not bundled.is_file():
                    raise FileNotFoundError(f"no config file or bundled config named {p!r}")
                text = bundled.read_text()
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: configuration must be a mapping")
        return cls.from_dict(_merge(data, overrides or {}))

    def __getitem__(self, key):
        return self.data[key]

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=False)

    def digest(self) -> str:
        text = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    @property
    def grid(self) -> GridSpec:
        spec = dict(self.data["grid"])
        spec.setdefault("dy", spec.get("dx", 5e-4))
        try:
            return GridSpec(**spec)
        except (TypeError, HyperbeamError) as exc:
            raise ConfigError(f"bad grid section: {exc}") from exc

    @property
    def antenna_counts(self) -> list[int]:
        a = self.data["antennas"]
        return [int(n) for n in (a["counts"] or [a["count"]])]

    def validate(self) -> None:
        d = self.data
        grid = self.grid
        counts = self.antenna_counts
        if any(n < 2 for n in counts):
            raise ConfigError("antenna count must be at least 2")
        for n in counts:
            ref = d["antennas"]["reference"]
            if not 0 <= ref < n:
                raise ConfigError("reference antenna index out of range")
        names = [ds.get("name") for ds in d["designs"]]
        if not names or any(not n for n in names) or len(set(names)) != len(names):
            raise ConfigError("every design needs a unique name")
        for ds in d["designs"]:
            unknown = set(ds) - {"name", "nulls", "null_hotspot"}
            if unknown:
                raise ConfigError(f"design {ds['name']!r}: unknown keys {sorted(unknown)}")
            n_obj = 1 + len(ds.get("nulls") or [])
            hs = ds.get("null_hotspot")
            if hs:
                n_obj += int(hs.get("count", 3))
                src = hs.get("from")
                if src not in names or names.index(src) >= names.index(ds["name"]):
                    raise ConfigError(
                        f"design {ds['name']!r}: null_hotspot.from must name an earlier design"
                    )
            if n_obj > min(counts) - 1:
                raise ConfigError(
                    f"design {ds['name']!r} has {n_obj} objectives; at most "
                    f"{min(counts) - 1} allowed with {min(counts)} antennas"
                )
            for p in ds.get("nulls") or []:
                self._check_point(grid, p, "null")
        self._check_point(grid, d["target"], "target")
        r = d["antennas"]["radius"]
        half = min(grid.nx, grid.ny) // 2 - grid.pml_thickness - 1
        if not 0 < r / grid.dx < half:
            raise ConfigError("antenna ring does not fit inside the PML-free region")
        modes = d["beamformer"]["modes"]
        for m in modes:
            if m not in ("static", "ideal", "partial-knowledge"):
                raise ConfigError(f"unknown beamformer mode {m!r}")
        if d["normalization"] not in NORMALIZATIONS:
            raise ConfigError(f"normalization must be one of {NORMALIZATIONS}")
        if int(d["workers"]) < 1:
            raise ConfigError("workers must be at least 1")
        sc = d["thermal"]["scale"]
        if sc not in ("calibrate", "shared"):
            # YAML 1.1 reads exponents without a sign (1.65e10) as strings
            try:
                sc = float(sc)
            except (TypeError, ValueError):
                sc = None
            if isinstance(d["thermal"]["scale"], bool) or sc is None or not sc > 0:
                raise ConfigError("thermal.scale must be 'calibrate', 'shared' or a positive number")
            d["thermal"]["scale"] = sc

    @staticmethod
    def _check_point(grid: GridSpec, p, what: str) -> None:
        try:
            c = grid.cell(*p)
        except GeometryError as exc:
            raise ConfigError(f"{what} {p} lies outside the grid") from exc
        if not grid.in_interior(c, grid.pml_thickness):
            raise ConfigError(f"{what} {p} lies outside the grid interior")


# --------------------------------------------------------------------------
# helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


@contextmanager
def _stage(name: str, case: str | None = None):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, case, exc) from exc


def bundled_configs() -> list[str]:
    root = resources.files("hyperbeam") / "data" / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def build_phantom(cfg: ScenarioConfig) -> MediaMap:
    p = dict(cfg["phantom"])
    grid = cfg.grid
    if p.get("file"):
        return phantoms.load_realistic(p["file"], grid)
    builder = p.pop("builder")
    p.pop("file", None)
    if builder == "homogeneous":
        return phantoms.build_homogeneous(p.get("tissue", "fibroglandular"),
                                          p.get("radius", 0.06), p.get("immersion", "water"),
                                          grid)
    if builder == "two-inclusion":
        return phantoms.build_two_inclusion(grid, p.get("immersion", "water"),
                                            p.get("radius", 0.06))
    if builder == "scattered-fibroglandular":
        return phantoms.generate_scattered_fibroglandular(int(cfg["seed"]), grid)
    raise ConfigError(f"unknown phantom builder {builder!r}")


def null_pattern(center_cell, count: int, spacing: int, axis: str = "y") -> list:
    """``count`` cells along ``axis``, ``spacing`` cells apart, always including
    ``center_cell``; even counts carry the extra cell on the negative side."""
    offs = [0]
    k = 1
    while len(offs) < count:
        offs += [-k * spacing, k * spacing]
        k += 1
    offs = offs[:count]
    di, dj = (0, 1) if axis == "y" else (1, 0)
    return [(center_cell[0] + o * di, center_cell[1] + o * dj) for o in offs]


@dataclass
class CaseSpec:
    n_antennas: int
    step: int
    design: dict
    mode: str

    @property
    def case_id(self) -> str:
        return f"n{self.n_antennas:02d}-step{self.step:02d}-{self.design['name']}-{self.mode}"


@dataclass
class CaseResult:
    spec: CaseSpec
    q: np.ndarray
    weights: np.ndarray
    channel: np.ndarray
    objectives: list
    nulls: list
    report: dict = field(default_factory=dict)
    runtimes: dict = field(default_factory=dict)


class _Run:
    def __init__(self, cfg: ScenarioConfig, out: str):
        self.cfg = cfg
        self.out = out
        self.grid = cfg.grid
        self.files: list[str] = []
        self.timing: dict = {}
        self.cache: dict = {}
        self.base: MediaMap | None = None
        self.schedule = None
        self.media_by_step: dict[int, MediaMap] = {}

    def path(self, *parts) -> str:
        p = os.path.join(self.out, *parts)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        return p

    def record(self, *parts) -> str:
        rel = "/".join(parts)
        self.files.append(rel)
        return self.path(*parts)

    # -- stages ----------------------------------------------------------

    def prepare(self) -> None:
        cfg = self.cfg
        with _stage("build-phantom"):
            self.base = build_phantom(cfg)
        sc = cfg["schedule"]
        with _stage("schedule"):
            if sc["file"]:
                self.schedule = phantoms.load_schedule(sc["file"])
                n = self.schedule.n_steps
                steps = list(range(n)) if sc["steps"] == "all" else [int(s) for s in sc["steps"]]
                if 0 not in steps:
                    steps = [0] + steps
                for s in steps:
                    self.schedule._check_step(s)
            else:
                steps = [0]
            self.steps = sorted(set(steps))
            for s in self.steps:
                m = self.base if self.schedule is None else phantoms.apply_scenario(
                    self.base, self.schedule, s)
                self.media_by_step[s] = m
                hfgm.write_media(m, self.record("media", f"step{s:02d}.hfgm"))
                if cfg["previews"]:
                    eps = m.complex_permittivity(cfg["em"]["carrier_freq"]).real
                    export.write_ppm(self.record("media", f"step{s:02d}-permittivity.ppm"), eps)

    def groups(self) -> list[tuple[int, int]]:
        return [(n, s) for n in self.cfg.antenna_counts for s in self.steps]

    def run_group(self, n_ant: int, step: int) -> list[CaseResult]:
        cfg = self.cfg
        g = self.grid
        media = self.media_by_step[step]
        ants = ring_antennas(g, n_ant, cfg["antennas"]["radius"], (0.0, 0.0))
        target = g.cell(*cfg["target"])
        em = cfg["em"]
        bfc = cfg["beamformer"]
        results: dict[tuple[str, str], CaseResult] = {}
        out = []
        sim = None
        for ds in cfg["designs"]:
            for mode in bfc["modes"]:
                spec = CaseSpec(n_ant, step, ds, mode)
                cid = spec.case_id
                t0 = time.perf_counter()
                nulls = [g.cell(*p) for p in ds.get("nulls") or []]
                hs = ds.get("null_hotspot")
                if hs:
                    ref = results[(hs["from"], mode)]
                    region = disk_mask(g, tuple(hs["center"]), hs["radius"]) & media.tissue_mask
                    peak = metrics.peak_cell(ref.q, g.cell(*hs["center"]), region)
                    nulls += null_pattern(peak, int(hs.get("count", 3)),
                                          int(hs.get("spacing", 2)), hs.get("axis", "y"))
                objective = ObjectiveVector.from_cells([target], nulls)
                req = DesignRequest(ants, objective, cfg["antennas"]["reference"],
                                    bfc["phase_only"], bfc["projection"])
                with _stage("design", cid):
                    bw = design(mode, media, self.base, req, cache=self.cache)
                t1 = time.perf_counter()
                with _stage("run_cw", cid):
                    if sim is None:
                        sim = fdtd.Simulation(media, carrier=em["carrier_freq"])
                    cw = fdtd.run_cw(media, bw, ants, em["settle_periods"],
                                     em["observe_periods"], monitor=[target],
                                     steady_tol=em["steady_tol"], sim=sim,
                                     carrier=em["carrier_freq"])
                with _stage("heating_potential", cid):
                    q = fdtd.heating_potential(cw.history, media, em["carrier_freq"])
                t2 = time.perf_counter()
                res = CaseResult(spec, q, bw.w, bw.info["channel"].entries, [target] + nulls,
                                 nulls)
                res.report["em"] = {
                    "steady": bool(cw.steady),
                    "periods_run": int(cw.periods_run),
                    "residual": bw.residual,
                    "projected_residual": bw.projected_residual,
                }
                res.runtimes = {"design_s": t1 - t0, "em_s": t2 - t1}
                results[(ds["name"], mode)] = res
                out.append(res)
        return out

    def metrics_for(self, res: CaseResult, baseline) -> None:
        cfg = self.cfg
        media = self.media_by_step[res.spec.step]
        g = self.grid
        target = res.objectives[0]
        cid = res.spec.case_id
        with _stage("power_report", cid):
            tissue = media.tissue_mask
            qt = np.where(tissue, res.q, 0.0)
            base_rep = None
            if baseline is not None and cfg["normalization"] != "none":
                base_rep = baseline.report["power_obj"]
            rep = metrics.power_report(qt, media, target, base_rep)
            res.report["power_obj"] = rep
            res.report["power"] = rep.to_dict()
            res.report["focus_error_cells"] = metrics.focus_error(qt, target, tissue)
            res.report["peak_cell"] = list(metrics.peak_cell(qt, target, tissue))
            res.report["focal_area_cells_3db"] = (
                metrics.focal_area(qt, target) if qt[target] > 0 else 0
            )
            res.report["null_q"] = [float(qt[c]) for c in res.nulls]
            res.report["objectives"] = [list(c) for c in res.objectives]
            rois = {}
            for roi in cfg["regions_of_interest"]:
                mask = disk_mask(g, tuple(roi["center"]), roi["radius"]) & tissue
                rois[roi["name"]] = {"power": metrics.region_power(qt, mask, g),
                                     "peak_q": float(qt[mask].max()) if mask.any() else 0.0}
            res.report["regions"] = rois
            if cfg["normalization"] == "focus" and baseline is not None:
                ref = baseline.report["power_obj"].target_cell
                res.report["normalized_target"] = rep.target_cell / ref if ref > 0 else None

    def thermal_for(self, res: CaseResult, shared_scale: float | None):
        th = self.cfg["thermal"]
        media = self.media_by_step[res.spec.step]
        g = self.grid
        target = res.objectives[0]
        cid = res.spec.case_id
        q = np.where(media.tissue_mask, res.q, 0.0)
        t0 = time.perf_counter()
        with _stage("calibrate_scale", cid):
            if isinstance(th["scale"], (int, float)) and not isinstance(th["scale"], bool):
                scale = float(th["scale"])
            elif th["scale"] == "shared" and shared_scale is not None:
                scale = shared_scale
            else:
                scale = thermal.calibrate_scale(media, q, th["target_temp"], target).scale
        with _stage("run_to_steady", cid):
            solver = thermal.ThermalSolver(media, q, scale)
            record = [target] + list(res.nulls)
            sr = thermal.run_to_steady(None, media, q, scale, th["max_time"], th["tol"],
                                       record=record, record_every=int(th["record_every"]),
                                       solver=solver)
            steady = solver.steady_state()
        with _stage("thermal_metrics", cid):
            tissue = media.tissue_mask
            times, temps = sr.series(target)
            rois = {}
            for roi in self.cfg["regions_of_interest"]:
                mask = disk_mask(g, tuple(roi["center"]), roi["radius"]) & tissue
                rois[roi["name"]] = {
                    "peak_temp_steady": float(steady[mask].max()) if mask.any() else None,
                    "peak_temp_final": float(sr.field.t[mask].max()) if mask.any() else None,
                }
            res.report["thermal"] = {
                "scale": scale,
                "dt_thermal": solver.dt,
                "reached_steady": sr.reached,
                "steady_time_s": sr.steady_time,
                "simulated_s": sr.field.time,
                "target_temp_final": float(sr.field.t[target]),
                "target_temp_steady": float(steady[target]),
                "peak_temp_steady": float(steady[tissue].max()),
                "time_to_threshold_s": {
                    str(lv): thermal.time_to_temperature(times, temps, lv)
                    for lv in th["time_thresholds"]
                },
                "regions": rois,
            }
        res.runtimes["thermal_s"] = time.perf_counter() - t0
        return scale, sr, steady

    # -- outputs ---------------------------------------------------------

    def write_case(self, res: CaseResult, thermal_out=None) -> None:
        cid = res.spec.case_id
        g = self.grid
        media = self.media_by_step[res.spec.step]
        d = ("cases", cid)
        export.write_weights_csv(self.record(*d, "weights.csv"), res.weights)
        export.write_channel_csv(self.record(*d, "channel.csv"), res.channel)
        hfgm.write_plane(res.q, g, self.record(*d, "q.hfgm"))
        if self.cfg["previews"]:
            export.write_ppm(self.record(*d, "q.ppm"), np.where(media.tissue_mask, res.q, 0.0),
                             log_db=30.0)
        if thermal_out is not None:
            _, sr, steady = thermal_out
            hfgm.write_plane(sr.field.t, g, self.record(*d, "temperature.hfgm"))
            hfgm.write_plane(steady, g, self.record(*d, "temperature_steady.hfgm"))
            for lv, mask in metrics.threshold_masks(
                    steady, self.cfg["thermal"]["thresholds"], media.tissue_mask).items():
                hfgm.write_plane(mask.astype(float), g,
                                 self.record(*d, f"mask_{lv:g}C.hfgm"))
            times, temps = sr.series(res.objectives[0])
            export.write_series_csv(self.record(*d, "target_series.csv"), times, temps)
            if self.cfg["previews"]:
                export.write_ppm(self.record(*d, "temperature.ppm"), steady,
                                 vmin=self.cfg["thermal"].get("preview_min", 15.0),
                                 vmax=self.cfg["thermal"].get("preview_max", 50.0))
        rep = {k: v for k, v in res.report.items() if k != "power_obj"}
        rep.update({"case": cid, "n_antennas": res.spec.n_antennas, "step": res.spec.step,
                    "design": res.spec.design["name"], "mode": res.spec.mode})
        _dump_json(self.record(*d, "report.json"), rep)
        with open(self.record(*d, "report.csv"), "w") as fh:
            fh.write(res.report["power_obj"].to_csv())


def run_scenario(config: ScenarioConfig | dict, out: str | os.PathLike | None = None,
                 *, workers: int | None = None) -> dict:
    """Execute a configuration and write its bundle; returns the manifest."""
    cfg = config if isinstance(config, ScenarioConfig) else ScenarioConfig.from_dict(config)
    out = str(out or cfg["output"])
    workers = int(workers or cfg["workers"])
    os.makedirs(out, exist_ok=True)
    run = _Run(cfg, out)
    t_start = time.perf_counter()
    with open(run.record("config.yaml"), "w") as fh:
        fh.write(cfg.to_yaml())
    manifest = {
        "format": BUNDLE_FORMAT,
        "config_sha256": cfg.digest(),
        "seed": cfg["seed"],
        "grid": cfg["grid"],
        "versions": {
            "hyperbeam": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
            "kernel_backend": kernels.BACKEND,
        },
        "runtimes_file": TIMING_FILE,
    }
    cases: list[CaseResult] = []
    try:
        run.prepare()
        groups = run.groups()
        if workers > 1 and len(groups) > 1:
            with ThreadPoolExecutor(workers) as pool:
                batches = list(pool.map(lambda gs: run.run_group(*gs), groups))
        else:
            batches = [run.run_group(*gs) for gs in groups]
        cases = [c for b in batches for c in b]
        # ratios are relative to the first schedule step of the same antenna
        # count, design and beamformer mode
        def key(c):
            return (c.spec.n_antennas, c.spec.design["name"], c.spec.mode)

        base_of = {key(c): c for c in cases if c.spec.step == run.steps[0]}
        for c in base_of.values():
            run.metrics_for(c, None)
            if cfg["normalization"] != "none":
                run.metrics_for(c, c)
        for c in cases:
            if c.spec.step != run.steps[0]:
                run.metrics_for(c, base_of.get(key(c)))
        thermal_outs = {}
        if cfg["thermal"]["enabled"]:
            shared = None
            for c in cases:
                res = run.thermal_for(c, shared)
                if cfg["thermal"]["scale"] == "shared" and shared is None:
                    shared = res[0]
                thermal_outs[c.spec.case_id] = res
        for c in cases:
            run.write_case(c, thermal_outs.get(c.spec.case_id))
        summary = [
            {k: v for k, v in c.report.items() if k != "power_obj"}
            | {"case": c.spec.case_id, "n_antennas": c.spec.n_antennas, "step": c.spec.step,
               "design": c.spec.design["name"], "mode": c.spec.mode}
            for c in cases
        ]
        _dump_json(run.record("summary.json"), summary)
        manifest["status"] = "complete"
    except HyperbeamError as exc:
        manifest["status"] = "failed"
        manifest["error"] = {"stage": getattr(exc, "stage", None), "message": str(exc)}
        _finish_manifest(run, manifest, cases, t_start)
        raise
    _finish_manifest(run, manifest, cases, t_start)
    return manifest


def _finish_manifest(run: _Run, manifest: dict, cases, t_start: float) -> None:
    manifest["cases"] = [c.spec.case_id for c in cases]
    manifest["files"] = {
        rel: _sha256(os.path.join(run.out, rel))
        for rel in sorted(set(run.files))
        if os.path.exists(os.path.join(run.out, rel))
    }
    _dump_json(os.path.join(run.out, "manifest.json"), manifest)
    timing = {"total_s": time.perf_counter() - t_start,
              "cases": {c.spec.case_id: c.runtimes for c in cases}}
    _dump_json(os.path.join(run.out, TIMING_FILE), timing)


# --------------------------------------------------------------------------
# bundles


def load_manifest(run_dir: str | os.PathLike) -> dict:
    path = os.path.join(run_dir, "manifest.json")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ComparisonError(f"{path}: corrupt manifest: {exc}") from exc


def verify_bundle(run_dir: str | os.PathLike) -> list[str]:
    """Files whose hash no longer matches the manifest (or that are missing)."""
    man = load_manifest(run_dir)
    bad = []
    for rel, digest in man["files"].items():
        p = os.path.join(run_dir, rel)
        if not os.path.exists(p) or _sha256(p) != digest:
            bad.append(rel)
    return bad


def _load_reports(run_dir) -> dict:
    with open(os.path.join(run_dir, "summary.json")) as fh:
        return {r["case"]: r for r in json.load(fh)}


def _pair_cases(a: dict, b: dict) -> list[tuple[str, str]]:
    common = sorted(set(a) & set(b))
    if common:
        return [(c, c) for c in common]

    def key(r):
        return (r["n_antennas"], r["step"], r["design"])

    bk = {key(r): c for c, r in b.items()}
    pairs = [(c, bk[key(r)]) for c, r in sorted(a.items()) if key(r) in bk]
    if not pairs:
        raise ComparisonError("the two runs share no comparable cases")
    return pairs


def compare_runs(run_a: str | os.PathLike, run_b: str | os.PathLike,
                 level_db: float = -3.0) -> dict:
    """Ratios b/a of the power metrics, focus errors and -3 dB contour overlap
    for every pair of matching cases (same id, or same antennas/step/design)."""
    ma, mb = load_manifest(run_a), load_manifest(run_b)
    if ma.get("grid") != mb.get("grid"):
        raise ComparisonError("runs use different grids")
    ra, rb = _load_reports(run_a), _load_reports(run_b)
    grid = ScenarioConfig({"grid": ma["grid"]}).grid
    rows = []
    for ca, cb in _pair_cases(ra, rb):
        pa, pb = ra[ca]["power"], rb[cb]["power"]
        qa, _ = hfgm.read_plane(os.path.join(run_a, "cases", ca, "q.hfgm"))
        qb, _ = hfgm.read_plane(os.path.join(run_b, "cases", cb, "q.hfgm"))
        step = ra[ca]["step"]
        media = hfgm.read_media(os.path.join(run_a, "media", f"step{step:02d}.hfgm"), grid)
        tissue = media.tissue_mask
        ratios = {}
        for k in ("total_media", "treatment_region", "target_cell"):
            ratios[k] = pb[k] / pa[k] if pa[k] > 0 else None
        ov = metrics.overlap(
            metrics.contour_mask(np.where(tissue, qa, 0), level_db, "db", tissue),
            metrics.contour_mask(np.where(tissue, qb, 0), level_db, "db", tissue),
        )
        rows.append({
            "case_a": ca, "case_b": cb,
            "ratios": ratios,
            "focus_error_a": ra[ca]["focus_error_cells"],
            "focus_error_b": rb[cb]["focus_error_cells"],
            "focus_error_diff": rb[cb]["focus_error_cells"] - ra[ca]["focus_error_cells"],
            "contour_overlap": ov,
            "max_abs_q_diff": float(np.max(np.abs(qb - qa))),
        })
    return {"run_a": str(run_a), "run_b": str(run_b), "level_db": level_db, "cases": rows}


def bundle_digest(run_dir: str | os.PathLike) -> dict:
    """SHA-256 of every file in the bundle except the timing file."""
    out = {}
    for root, _, files in os.walk(run_dir):
        for f in files:
            rel = os.path.relpath(os.path.join(root, f), run_dir).replace(os.sep, "/")
            if rel != TIMING_FILE:
                out[rel] = _sha256(os.path.join(root, f))
    return dict(sorted(out.items()))

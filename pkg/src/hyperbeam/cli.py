"""Command-line entry point: ``hyperbeam <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np
import yaml

from . import __version__, export, fdtd, hfgm, metrics, phantoms, runner, thermal
from .beamformer import (
    ChannelMatrix,
    ObjectiveVector,
    acquire_channel,
    conjugate_weights,
    lcmp_weights,
    ring_antennas,
)
from .errors import (
    AcquisitionError,
    CalibrationError,
    ComparisonError,
    ConfigError,
    DegenerateChannelError,
    DomainError,
    GeometryError,
    IllConditionedError,
    InsufficientDataError,
    NumericalInstabilityError,
    ParseError,
    StageError,
)
from .grid import GridSpec

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

log = logging.getLogger("hyperbeam")

_NUMERICAL = (NumericalInstabilityError, IllConditionedError, CalibrationError,
              InsufficientDataError, AcquisitionError, DegenerateChannelError)
_CONFIG = (ConfigError, GeometryError, DomainError, ComparisonError)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, (ParseError, OSError)):
        return EXIT_IO
    if isinstance(exc, _NUMERICAL):
        return EXIT_NUMERICAL
    if isinstance(exc, (_CONFIG, yaml.YAMLError)):
        return EXIT_CONFIG
    raise exc


def _point(text: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'x,y' in meters, got {text!r}") from None
    return x, y


def _load_config_file(path) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: configuration must be a mapping")
    return data


def _resolve(args, defaults: dict) -> dict:
    """defaults < --config file < explicit command-line flags."""
    eff = dict(defaults)
    eff.update({k.replace("-", "_"): v for k, v in _load_config_file(args.config).items()})
    unknown = set(eff) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            eff[k] = v
    if getattr(args, "seed", None) is not None:
        eff["seed"] = args.seed
    return eff


def _emit_effective(args, eff: dict) -> bool:
    if args.print_effective_config:
        clean = {k: (list(v) if isinstance(v, tuple) else v) for k, v in eff.items()}
        sys.stdout.write(yaml.safe_dump(clean, sort_keys=True))
        return True
    return False


def _grid_from(eff: dict) -> GridSpec:
    return GridSpec(nx=int(eff["nx"]), ny=int(eff["ny"]), dx=float(eff["dx"]),
                    dy=float(eff["dx"]), courant_factor=float(eff["courant_factor"]),
                    pml_thickness=int(eff["pml_thickness"]))


GRID_DEFAULTS = {"nx": 401, "ny": 401, "dx": 5e-4, "courant_factor": 0.7, "pml_thickness": 12}


def _out_path(eff, default):
    out = eff.get("out") or default
    d = os.path.dirname(os.path.abspath(out))
    os.makedirs(d, exist_ok=True)
    return out


# -- subcommands ------------------------------------------------------------


def cmd_build_phantom(args) -> int:
    defaults = {"builder": "homogeneous", "tissue": "fibroglandular", "radius": 0.06,
                "immersion": "water", "seed": 0, "out": None, "preview": True, **GRID_DEFAULTS}
    eff = _resolve(args, defaults)
    if _emit_effective(args, eff):
        return EXIT_OK
    grid = _grid_from(eff)
    b = eff["builder"]
    if b == "homogeneous":
        media = phantoms.build_homogeneous(eff["tissue"], eff["radius"], eff["immersion"], grid)
    elif b == "two-inclusion":
        media = phantoms.build_two_inclusion(grid, eff["immersion"], eff["radius"])
    elif b == "scattered-fibroglandular":
        media = phantoms.generate_scattered_fibroglandular(int(eff["seed"]), grid)
    else:
        raise ConfigError(f"unknown builder {b!r}")
    out = _out_path(eff, "phantom.hfgm")
    hfgm.write_media(media, out)
    if eff["preview"]:
        export.write_ppm(os.path.splitext(out)[0] + ".ppm", media.complex_permittivity().real)
    print(f"wrote {out} ({int(media.tissue_mask.sum())} tissue cells)")
    return EXIT_OK


def cmd_acquire(args) -> int:
    defaults = {"media": None, "antennas": 16, "ring_radius": 0.07, "objectives": None,
                "reference": 0, "out": None, "workers": 1, "seed": 0}
    eff = _resolve(args, defaults)
    if _emit_effective(args, eff):
        return EXIT_OK
    if not eff["media"] or not eff["objectives"]:
        raise ConfigError("acquire needs --media and at least one --objective")
    media = hfgm.read_media(eff["media"])
    g = media.grid
    ants = ring_antennas(g, int(eff["antennas"]), float(eff["ring_radius"]))
    cells = [g.cell(*_as_point(p)) for p in eff["objectives"]]
    C = acquire_channel(media, cells, ants, reference_antenna=int(eff["reference"]),
                        workers=int(eff["workers"]))
    out = _out_path(eff, "channel.csv")
    export.write_channel_csv(out, C.entries)
    print(f"wrote {out} ({C.n_antennas} antennas x {C.n_objectives} objectives)")
    return EXIT_OK


def _as_point(p):
    return _point(p) if isinstance(p, str) else (float(p[0]), float(p[1]))


def cmd_design(args) -> int:
    defaults = {"channel": None, "g": None, "phase_only": True, "projection": "normalize",
                "mode": "ideal", "out": None, "seed": 0}
    eff = _resolve(args, defaults)
    if _emit_effective(args, eff):
        return EXIT_OK
    if not eff["channel"]:
        raise ConfigError("design needs --channel")
    entries = export.read_channel_csv(eff["channel"])
    C = ChannelMatrix(entries)
    if eff["g"] is None:
        gv = np.zeros(C.n_objectives)
        gv[0] = 1.0
    else:
        gv = np.array([float(v) for v in str(eff["g"]).split(",")])
    if C.n_objectives == 1 and eff["phase_only"]:
        bw = conjugate_weights(C, mode=eff["mode"])
    else:
        bw = lcmp_weights(C, ObjectiveVector(gv), phase_only=eff["phase_only"],
                          projection=eff["projection"], mode=eff["mode"])
    out = _out_path(eff, "weights.csv")
    export.write_weights_csv(out, bw.w)
    resid = "n/a" if bw.residual is None else f"{bw.residual:.3e}"
    print(f"wrote {out}; constraint residual {resid}")
    return EXIT_OK


def cmd_simulate_em(args) -> int:
    defaults = {"media": None, "weights": None, "ring_radius": 0.07, "settle_periods": 40,
                "observe_periods": 1, "monitor": None, "out": None, "preview": True,
                "seed": 0}
    eff = _resolve(args, defaults)
    if _emit_effective(args, eff):
        return EXIT_OK
    if not eff["media"] or not eff["weights"]:
        raise ConfigError("simulate-em needs --media and --weights")
    media = hfgm.read_media(eff["media"])
    g = media.grid
    w = export.read_weights_csv(eff["weights"])
    ants = ring_antennas(g, len(w), float(eff["ring_radius"]))
    monitor = [g.cell(*_as_point(eff["monitor"]))] if eff["monitor"] else None
    res = fdtd.run_cw(media, w, ants, int(eff["settle_periods"]), int(eff["observe_periods"]),
                      monitor=monitor)
    q = fdtd.heating_potential(res.history, media)
    out = _out_path(eff, "q.hfgm")
    hfgm.write_plane(q, g, out)
    if eff["preview"]:
        export.write_ppm(os.path.splitext(out)[0] + ".ppm",
                         np.where(media.tissue_mask, q, 0.0), log_db=30.0)
    print(f"wrote {out} (steady={res.steady}, periods={res.periods_run})")
    return EXIT_OK


def cmd_simulate_thermal(args) -> int:
    defaults = {"media": None, "q": None, "scale": None, "target_temp": 45.0, "target": None,
                "max_time": 1200.0, "tol": thermal.DEFAULT_TOL, "out": None,
                "thresholds": [37.0, 40.0, 42.0, 45.0], "seed": 0}
    eff = _resolve(args, defaults)
    if _emit_effective(args, eff):
        return EXIT_OK
    if not eff["media"] or not eff["q"]:
        raise ConfigError("simulate-thermal needs --media and --q")
    media = hfgm.read_media(eff["media"])
    g = media.grid
    q, _ = hfgm.read_plane(eff["q"])
    q = np.where(media.tissue_mask, q, 0.0)
    target = g.cell(*_as_point(eff["target"])) if eff["target"] else g.center
    if eff["scale"] is None:
        scale = thermal.calibrate_scale(media, q, float(eff["target_temp"]), target).scale
    else:
        scale = float(eff["scale"])
    sr = thermal.run_to_steady(None, media, q, scale, float(eff["max_time"]), float(eff["tol"]),
                               record=[target])
    out = _out_path(eff, "temperature.hfgm")
    base = os.path.splitext(out)[0]
    hfgm.write_plane(sr.field.t, g, out)
    export.write_series_csv(base + "_target.csv", *sr.series(target))
    for lv, mask in metrics.threshold_masks(sr.field.t, eff["thresholds"],
                                            media.tissue_mask).items():
        hfgm.write_plane(mask.astype(float), g, f"{base}_mask_{lv:g}C.hfgm")
    state = f"steady after {sr.steady_time:.1f} s" if sr.reached else "not steady"
    print(f"wrote {out}; scale {scale:.6g}; {state}; target {sr.field.t[target]:.3f} C")
    return EXIT_OK


def cmd_run_scenario(args) -> int:
    if not args.config:
        raise ConfigError("run-scenario needs --config")
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.workers is not None:
        over["workers"] = args.workers
    if args.out is not None:
        over["output"] = args.out
    cfg = runner.ScenarioConfig.load(args.config, over)
    if args.print_effective_config:
        sys.stdout.write(cfg.to_yaml())
        return EXIT_OK
    man = runner.run_scenario(cfg)
    print(f"wrote {cfg['output']} ({len(man['cases'])} cases, {len(man['files'])} files)")
    return EXIT_OK


def cmd_compare(args) -> int:
    if args.print_effective_config:
        sys.stdout.write(yaml.safe_dump({"run_a": args.run_a, "run_b": args.run_b,
                                         "level_db": args.level_db}))
        return EXIT_OK
    report = runner.compare_runs(args.run_a, args.run_b, args.level_db)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_export(args) -> int:
    defaults = {"input": None, "format": "ppm", "db": None, "vmin": None, "vmax": None,
                "out": None, "seed": 0}
    eff = _resolve(args, defaults)
    if _emit_effective(args, eff):
        return EXIT_OK
    if not eff["input"]:
        raise ConfigError("export needs --input")
    with open(eff["input"], "rb") as fh:
        head = fh.read(hfgm.HEADER_SIZE)
    channels = int.from_bytes(head[32:34], "little") if len(head) >= 34 else 0
    if channels == hfgm.MEDIA_CHANNELS:
        values = hfgm.read_media(eff["input"]).complex_permittivity().real
    else:
        values, _ = hfgm.read_plane(eff["input"])
    fmt = eff["format"]
    out = _out_path(eff, os.path.splitext(eff["input"])[0] + "." + fmt)
    if fmt == "ppm":
        export.write_ppm(out, values, vmin=eff["vmin"], vmax=eff["vmax"], log_db=eff["db"])
    elif fmt == "csv":
        export.write_grid_csv(out, values)
    else:
        raise ConfigError(f"unknown export format {fmt!r}")
    print(f"wrote {out}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with option values")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--workers", type=int, help="concurrent simulations")
    common.add_argument("--seed", type=int, help="seed for procedural phantoms")
    common.add_argument("--print-effective-config", action="store_true",
                        help="print the resolved configuration and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hyperbeam", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def grid_opts(sp):
        sp.add_argument("--nx", type=int)
        sp.add_argument("--ny", type=int)
        sp.add_argument("--dx", type=float)
        sp.add_argument("--courant-factor", dest="courant_factor", type=float)
        sp.add_argument("--pml-thickness", dest="pml_thickness", type=int)

    sp = sub.add_parser("build-phantom", parents=[common], help="write a phantom HFGM file")
    sp.add_argument("--builder", choices=sorted(phantoms.BUILDERS))
    sp.add_argument("--tissue", choices=["fat", "fibroglandular"])
    sp.add_argument("--radius", type=float)
    sp.add_argument("--immersion", choices=["air", "water"])
    sp.add_argument("--no-preview", dest="preview", action="store_false", default=None)
    grid_opts(sp)
    sp.set_defaults(func=cmd_build_phantom)

    sp = sub.add_parser("acquire", parents=[common], help="time-reversal channel acquisition")
    sp.add_argument("--media")
    sp.add_argument("--antennas", type=int)
    sp.add_argument("--ring-radius", dest="ring_radius", type=float)
    sp.add_argument("--objective", dest="objectives", action="append", type=_point,
                    help="objective position x,y in meters (focus first); repeatable")
    sp.add_argument("--reference", type=int)
    sp.set_defaults(func=cmd_acquire)

    sp = sub.add_parser("design", parents=[common], help="beamformer weights from a channel")
    sp.add_argument("--channel")
    sp.add_argument("--g", help="comma-separated objective vector, 1 = focus, 0 = null")
    sp.add_argument("--complex", dest="phase_only", action="store_false", default=None,
                    help="keep amplitudes (skip the phase-only projection)")
    sp.add_argument("--projection", choices=["normalize", "alternating"])
    sp.add_argument("--mode", choices=["static", "ideal", "partial-knowledge"])
    sp.set_defaults(func=cmd_design)

    sp = sub.add_parser("simulate-em", parents=[common], help="CW run and heating potential")
    sp.add_argument("--media")
    sp.add_argument("--weights")
    sp.add_argument("--ring-radius", dest="ring_radius", type=float)
    sp.add_argument("--settle-periods", dest="settle_periods", type=int)
    sp.add_argument("--observe-periods", dest="observe_periods", type=int)
    sp.add_argument("--monitor", type=_point)
    sp.add_argument("--no-preview", dest="preview", action="store_false", default=None)
    sp.set_defaults(func=cmd_simulate_em)

    sp = sub.add_parser("simulate-thermal", parents=[common], help="Pennes run from a Q map")
    sp.add_argument("--media")
    sp.add_argument("--q")
    sp.add_argument("--scale", type=float)
    sp.add_argument("--target-temp", dest="target_temp", type=float)
    sp.add_argument("--target", type=_point)
    sp.add_argument("--max-time", dest="max_time", type=float)
    sp.add_argument("--tol", type=float)
    sp.set_defaults(func=cmd_simulate_thermal)

    sp = sub.add_parser("run-scenario", parents=[common], help="run a full scenario config")
    sp.set_defaults(func=cmd_run_scenario)

    sp = sub.add_parser("compare", parents=[common], help="compare two run bundles")
    sp.add_argument("run_a")
    sp.add_argument("run_b")
    sp.add_argument("--level-db", dest="level_db", type=float, default=-3.0)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("export", parents=[common], help="convert an HFGM grid to PPM or CSV")
    sp.add_argument("--input")
    sp.add_argument("--format", choices=["ppm", "csv"])
    sp.add_argument("--db", type=float, help="show dB below max down to this range")
    sp.add_argument("--vmin", type=float)
    sp.add_argument("--vmax", type=float)
    sp.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        # documented failures map to exit codes; anything else is a bug and propagates
        code = exit_code_for(exc)
        print(f"hyperbeam {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())

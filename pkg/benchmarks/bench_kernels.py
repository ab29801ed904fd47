"""Compare the compiled and numpy kernel backends.

Runs the same FDTD and Pennes workloads with each backend, checks that the
results agree, and prints wall-clock timings.

    python benchmarks/bench_kernels.py [--n 401] [--fdtd-steps 200] [--thermal-steps 500]
"""

import argparse
import time

import numpy as np

from hyperbeam import _kernels_py, fdtd, kernels, phantoms, thermal
from hyperbeam.grid import GridSpec

try:
    from hyperbeam import _kernels as _compiled
except ImportError:
    _compiled = None


def use(impl) -> None:
    kernels.update_h = impl.update_h
    kernels.update_e = impl.update_e
    kernels.pennes_step = impl.pennes_step


def bench_fdtd(media, n_steps: int):
    sim = fdtd.Simulation(media)
    state = sim.new_state()
    src = sim.source_gain([media.grid.center])
    ci, cj = np.array([media.grid.center[0]]), np.array([media.grid.center[1]])
    t0 = time.perf_counter()
    for k in range(n_steps):
        sim.advance(state, ci, cj, src * np.sin(2 * np.pi * fdtd.CARRIER_FREQ * k * sim.dt))
    return time.perf_counter() - t0, state.ez.copy()


def bench_thermal(media, n_steps: int):
    q = np.where(media.tissue_mask, 1e5, 0.0)
    solver = thermal.ThermalSolver(media, q)
    field = solver.initial_field()
    t0 = time.perf_counter()
    for _ in range(n_steps):
        field, _ = solver.step(field)
    return time.perf_counter() - t0, field.t.copy()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=401, help="grid cells per side")
    ap.add_argument("--fdtd-steps", type=int, default=200)
    ap.add_argument("--thermal-steps", type=int, default=500)
    args = ap.parse_args(argv)

    media = phantoms.build_homogeneous("fibroglandular", 0.06, "water",
                                       GridSpec(nx=args.n, ny=args.n))
    backends = [("numpy", _kernels_py)]
    if _compiled is not None:
        backends.insert(0, ("compiled", _compiled))
    else:
        print("compiled extension not built; timing the numpy backend only")

    results = {}
    for name, impl in backends:
        use(impl)
        t_em, ez = bench_fdtd(media, args.fdtd_steps)
        t_th, temp = bench_thermal(media, args.thermal_steps)
        results[name] = (t_em, t_th, ez, temp)
        print(f"{name:9s} fdtd {args.fdtd_steps} steps: {t_em:7.3f} s "
              f"({t_em / args.fdtd_steps * 1e3:6.2f} ms/step)   "
              f"pennes {args.thermal_steps} steps: {t_th:7.3f} s "
              f"({t_th / args.thermal_steps * 1e3:6.2f} ms/step)")

    if len(results) == 2:
        c, p = results["compiled"], results["numpy"]
        ez_diff = np.max(np.abs(c[2] - p[2])) / max(np.max(np.abs(p[2])), 1e-300)
        t_diff = np.max(np.abs(c[3] - p[3]))
        print(f"speedup   fdtd x{p[0] / c[0]:.2f}   pennes x{p[1] / c[1]:.2f}")
        print(f"agreement fdtd rel {ez_diff:.2e}   pennes abs {t_diff:.2e} C")
    use(kernels.impl)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

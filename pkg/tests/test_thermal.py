import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperbeam import phantoms, thermal
from hyperbeam.errors import CalibrationError, ConfigError, DomainError, GeometryError
from hyperbeam.grid import (
    FIBROGLANDULAR_DEBYE,
    THERMAL_TABLE,
    GridSpec,
    ThermalParams,
    Tissue,
    uniform_media,
)

G = GridSpec(nx=61, ny=61, dx=1e-3, dy=1e-3, pml_thickness=8)
FIXED_POINT = 37.0 + 690.0 / 2700.0


def insulated(grid=GridSpec(nx=21, ny=21, dx=1e-3, dy=1e-3, pml_thickness=8)):
    return uniform_media(grid, FIBROGLANDULAR_DEBYE, Tissue.FIBROGLANDULAR)


def disk(immersion="water", grid=G, radius=0.02):
    return phantoms.build_homogeneous("fibroglandular", radius, immersion, grid)


def spot(grid, center=(0.0, 0.0), width=4e-3, peak=2e5):
    x, y = grid.mesh()
    return peak * np.exp(-((x - center[0]) ** 2 + (y - center[1]) ** 2) / (2 * width**2))


class TestTypes:
    def test_field_finite(self):
        with pytest.raises(DomainError):
            thermal.TemperatureField(np.array([[np.nan]]), 0.0, 1.0)

    def test_scale_positive(self):
        with pytest.raises(DomainError):
            thermal.HeatScaling(0.0)
        with pytest.raises(DomainError):
            thermal.ThermalSolver(disk(), scale=-1.0)

    def test_q_checks(self):
        m = disk()
        with pytest.raises(GeometryError):
            thermal.ThermalSolver(m, np.zeros((3, 3)))
        with pytest.raises(DomainError):
            thermal.ThermalSolver(m, -np.ones(G.shape))


class TestStability:
    def test_bound(self):
        m = insulated()
        p = THERMAL_TABLE[Tissue.FIBROGLANDULAR]
        bound = p.rho * p.cp / (4 * p.k / m.grid.dx**2 + p.b)
        assert thermal.stability_limit(m) == pytest.approx(bound, rel=1e-12)
        assert thermal.ThermalSolver(m).dt <= bound

    def test_violation_is_config_error(self):
        m = insulated()
        with pytest.raises(ConfigError):
            thermal.ThermalSolver(m, dt=2 * thermal.stability_limit(m))

    def test_no_tissue(self):
        m = phantoms.build_homogeneous("fat", 0.01, "water", G)
        empty = uniform_media(G, FIBROGLANDULAR_DEBYE, Tissue.WATER)
        assert thermal.stability_limit(m) > 0
        with pytest.raises(GeometryError):
            thermal.stability_limit(empty)


class TestPennesStep:
    def test_no_source_no_perfusion_is_frozen(self, monkeypatch):
        monkeypatch.setitem(THERMAL_TABLE, Tissue.CUSTOM,
                            ThermalParams(cp=3600.0, k=0.5, rho=1050.0, a0=0.0, b=0.0))
        m = uniform_media(G, FIBROGLANDULAR_DEBYE, Tissue.CUSTOM)
        s = thermal.ThermalSolver(m)
        f = thermal.TemperatureField(np.full(G.shape, 36.5), 0.0, s.dt)
        for _ in range(50):
            f, rate = s.step(f)
        assert np.all(f.t == 36.5) and rate == 0.0
        res = thermal.run_to_steady(f, m, None)
        assert res.reached and res.steady_time == 0.0

    def test_fixed_point_direct(self):
        t = thermal.ThermalSolver(insulated()).steady_state()
        assert np.max(np.abs(t - FIXED_POINT)) <= 1e-9

    def test_fixed_point_is_stationary(self):
        m = insulated()
        s = thermal.ThermalSolver(m)
        f = thermal.TemperatureField(np.full(m.grid.shape, FIXED_POINT), 0.0, s.dt)
        f2 = thermal.pennes_step(f, m, np.zeros(m.grid.shape))
        assert np.max(np.abs(f2.t - FIXED_POINT)) <= 1e-12
        assert f2.time == pytest.approx(s.dt)

    def test_mirror_symmetry(self):
        m = disk()
        q = spot(G, (0.0, 0.008))
        res = thermal.run_to_steady(None, m, q, 1.0, max_time=300)
        t = res.field.t
        assert np.max(np.abs(t - t[::-1, :])) <= 1e-9

    def test_immersion_held(self):
        m = disk()
        res = thermal.run_to_steady(None, m, spot(G), 1.0, max_time=100)
        assert np.all(res.field.t[~m.tissue_mask] == 15.0)

    def test_explicit_matches_direct(self):
        m = disk()
        q = spot(G)
        res = thermal.run_to_steady(None, m, q, 1.0, max_time=40000, tol=1e-7)
        direct = thermal.ThermalSolver(m, q).steady_state()
        assert res.reached
        assert np.max(np.abs(res.field.t - direct)) < 1e-3


class TestRunToSteady:
    def test_doubling_tol(self):
        m = disk()
        q = spot(G)
        times = [thermal.run_to_steady(None, m, q, max_time=8000, tol=t).steady_time
                 for t in (1e-4, 2e-4, 4e-4)]
        assert times[0] >= times[1] >= times[2]

    def test_tol_positive(self):
        with pytest.raises(DomainError):
            thermal.run_to_steady(None, disk(), None, tol=0.0)

    def test_not_reached_reports(self):
        res = thermal.run_to_steady(None, disk(), spot(G), max_time=20, tol=1e-9)
        assert not res.reached and res.steady_time is None
        assert res.field.time <= 20 + 1e-9

    def test_record(self):
        m = disk()
        c = G.center
        res = thermal.run_to_steady(None, m, spot(G), max_time=60, record=[c], record_every=7)
        times, temps = res.series(c)
        assert times[0] == 0.0 and temps[0] == 37.0
        assert times[-1] == pytest.approx(res.field.time)
        assert np.all(np.diff(temps) > 0)

    def test_water_cools_edge_more_than_air(self):
        q = spot(G)
        tw = thermal.ThermalSolver(disk("water"), q).steady_state()
        ta = thermal.ThermalSolver(disk("air"), q).steady_state()
        m = disk()
        inner = m.tissue_mask.copy()
        inner[1:-1, 1:-1] &= (m.tissue_mask[:-2, 1:-1] & m.tissue_mask[2:, 1:-1]
                              & m.tissue_mask[1:-1, :-2] & m.tissue_mask[1:-1, 2:])
        edge = m.tissue_mask & ~inner
        assert np.all(tw[edge] < ta[edge])


class TestProperties:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_comparison_principle(self, seed):
        rng = np.random.default_rng(seed)
        m = disk(grid=GridSpec(nx=41, ny=41, dx=1e-3, dy=1e-3, pml_thickness=8), radius=0.012)
        q1 = rng.uniform(0, 1e5, m.grid.shape)
        q2 = q1 + rng.uniform(0, 1e5, m.grid.shape) * (rng.uniform(size=m.grid.shape) < 0.3)
        t1 = thermal.ThermalSolver(m, q1).steady_state()
        t2 = thermal.ThermalSolver(m, q2).steady_state()
        assert np.all(t2 >= t1 - 1e-12)

    def test_energy_balance(self):
        m = disk()
        q = spot(G, (0.005, -0.004))
        s = thermal.ThermalSolver(m, q, 3.0)
        t = s.steady_state()
        tissue = m.tissue_mask
        area = G.dx * G.dy
        th = m.thermal_arrays()
        volume = np.sum((th["a0"] + 3.0 * q - th["b"] * (t - 37.0))[tissue]) * area
        flux = 0.0
        for gface, a, b in ((s.gx, (slice(None, -1), slice(None)), (slice(1, None), slice(None))),
                            (s.gy, (slice(None), slice(None, -1)), (slice(None), slice(1, None)))):
            one = tissue[a] ^ tissue[b]
            flux += np.sum((gface * np.abs(t[a] - t[b]))[one]) * area
        assert volume == pytest.approx(flux, rel=0.01)

    def test_grid_refinement(self):
        coarse = GridSpec(nx=61, ny=61, dx=1e-3, dy=1e-3, pml_thickness=8)
        fine = GridSpec(nx=121, ny=121, dx=5e-4, dy=5e-4, pml_thickness=8)
        temps, rises = [], []
        for g in (coarse, fine):
            m = disk(grid=g)
            t = thermal.ThermalSolver(m, spot(g)).steady_state()[g.center]
            temps.append(t)
            rises.append(t - thermal.ThermalSolver(m).steady_state()[g.center])
        assert abs(temps[1] - temps[0]) <= 0.02 * temps[0]
        # the heating rise itself converges too
        assert abs(rises[1] - rises[0]) <= 0.02 * rises[1]


class TestCalibration:
    def test_identity(self):
        m = disk()
        q = spot(G)
        t1 = thermal.ThermalSolver(m, q).steady_state()[G.center]
        hs = thermal.calibrate_scale(m, q, t1, G.center)
        assert hs.scale == pytest.approx(1.0, abs=1e-6)

    def test_doubling_rise(self):
        m = disk()
        q = spot(G)
        t0 = thermal.ThermalSolver(m).steady_state()[G.center]
        s1 = thermal.calibrate_scale(m, q, t0 + 3.0, G.center).scale
        s2 = thermal.calibrate_scale(m, q, t0 + 6.0, G.center).scale
        assert s2 == pytest.approx(2 * s1, rel=0.01)

    def test_bisection_agrees(self):
        m = disk()
        q = spot(G, peak=1.0)
        a = thermal.calibrate_scale(m, q, 45.0, G.center)
        b = thermal.calibrate_scale(m, q, 45.0, G.center, method="bisection")
        t = thermal.ThermalSolver(m, q, b.scale).steady_state()[G.center]
        assert abs(t - 45.0) <= 0.1
        assert b.scale == pytest.approx(a.scale, rel=1e-2)

    def test_errors(self):
        m = disk()
        with pytest.raises(CalibrationError):
            thermal.calibrate_scale(m, np.zeros(G.shape), 45.0, G.center)
        with pytest.raises(CalibrationError):
            thermal.calibrate_scale(m, spot(G), 20.0, G.center)
        with pytest.raises(GeometryError):
            thermal.calibrate_scale(m, spot(G), 45.0, (2, 2))
        with pytest.raises(DomainError):
            thermal.calibrate_scale(m, spot(G), 45.0, G.center, method="newton")


class TestTimeToTemperature:
    def test_interpolated(self):
        assert thermal.time_to_temperature([0, 10, 20, 30], [40, 42, 44, 45], 43.0) == 15.0

    def test_never(self):
        assert thermal.time_to_temperature([0, 1, 2], [37, 40, 42.9], 43.0) is None

    def test_initial(self):
        assert thermal.time_to_temperature([5, 6], [43.0, 44.0], 43.0) == 5.0

    def test_empty(self):
        assert thermal.time_to_temperature([], [], 43.0) is None

    @settings(max_examples=50, deadline=None)
    @given(st.floats(37.5, 44.5))
    def test_crossing_inside_interval(self, thr):
        times = np.linspace(0, 100, 11)
        temps = 37 + 8 * (1 - np.exp(-times / 30))
        t = thermal.time_to_temperature(times, temps, thr)
        k = np.argmax(temps >= thr)
        assert times[k - 1] <= t <= times[k]

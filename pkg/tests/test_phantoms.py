import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperbeam import hfgm, phantoms
from hyperbeam.errors import ConfigError, DomainError, GeometryError, ParseError
from hyperbeam.grid import (
    FAT_DEBYE,
    FIBROGLANDULAR_DEBYE,
    GridSpec,
    Tissue,
    scale_debye,
)
from hyperbeam.phantoms import Region, ScenarioSchedule

G401 = GridSpec(nx=401, ny=401)


class TestHomogeneous:
    def test_fibroglandular_air(self):
        m = phantoms.build_homogeneous("fibroglandular", 0.06, "air", G401)
        assert m.debye_at(G401.center) == FIBROGLANDULAR_DEBYE
        assert m.immersion is Tissue.AIR and m.boundary_h == 5.0

    def test_water_boundary(self):
        m = phantoms.build_homogeneous("fat", 0.06, "water", G401)
        assert m.boundary_h == 300.0
        assert m.labels[0, 0] == Tissue.WATER

    @pytest.mark.parametrize("r", [0.02, 0.045, 0.06])
    def test_area(self, r):
        m = phantoms.build_homogeneous("fat", r, "water", G401)
        assert m.tissue_mask.sum() == pytest.approx(math.pi * r * r / G401.dx**2, rel=0.01)

    def test_errors(self, small_grid):
        with pytest.raises(ConfigError):
            phantoms.build_homogeneous("bone", 0.05, "water", small_grid)
        with pytest.raises(ConfigError):
            phantoms.build_homogeneous("fat", 0.05, "oil", small_grid)
        with pytest.raises(GeometryError):
            phantoms.build_homogeneous("fat", 0.5, "water", small_grid)
        with pytest.raises(DomainError):
            phantoms.build_homogeneous("fat", -1, "water", small_grid)


class TestTwoInclusion:
    def test_labels(self):
        m = phantoms.build_two_inclusion(G401)
        assert m.debye_at(G401.cell(-0.03, 0)) == FIBROGLANDULAR_DEBYE
        assert m.debye_at(G401.cell(0.03, 0)) == FIBROGLANDULAR_DEBYE
        assert m.debye_at(G401.center) == FAT_DEBYE

    def test_mirror_symmetry(self):
        m = phantoms.build_two_inclusion(G401)
        for name in ("eps_inf", "delta_eps", "sigma_s", "tau", "labels"):
            a = getattr(m, name)
            assert np.array_equal(a, a[::-1, :])
            assert np.array_equal(a, a[:, ::-1])


class TestSchedules:
    def test_bundled(self):
        names = phantoms.bundled_schedules()
        for n in ("scenario-a", "scenario-b", "scenario-c",
                  "scenario-a-7step", "scenario-b-7step", "scenario-c-7step"):
            assert n in names
            phantoms.load_schedule(n)

    def test_scenario_b_rates(self):
        s = phantoms.load_schedule("scenario-b")
        assert s.n_steps == 14
        for k in range(s.n_steps):
            f = s.fractions_at(k)
            assert f["surrounding"] == pytest.approx(1 - 0.02 * k)
            assert f["treatment"] == pytest.approx(1 - 0.05 * k)

    def test_scenario_c_endpoint(self):
        s = phantoms.load_schedule("scenario-c")
        f = s.fractions_at(s.n_steps - 1)
        assert f["treatment"] == pytest.approx(0.35)
        assert f["surrounding"] == pytest.approx(0.74)
        hot = sorted((f[r.name] for r in s.regions if r.kind == "hotspot"), reverse=True)
        assert hot == pytest.approx([0.87, 0.61, 0.48])

    @pytest.mark.parametrize("name,step", [("scenario-a", 7), ("scenario-a-7step", 7)])
    def test_scenario_a_only_treatment(self, name, step):
        base = phantoms.build_homogeneous("fibroglandular", 0.06, "water", G401)
        s = phantoms.load_schedule(name)
        assert s.fractions_at(step)["treatment"] == pytest.approx(0.65)
        m = phantoms.apply_scenario(base, s, step)
        disk = s.region("treatment").mask(base)
        exp = scale_debye(FIBROGLANDULAR_DEBYE, 0.65)
        c = G401.cell(-0.03, 0)
        assert m.debye_at(c) == exp
        assert np.array_equal(m.eps_inf[~disk], base.eps_inf[~disk])
        assert np.allclose(m.delta_eps[disk], exp.delta_eps)

    def test_step_zero_identity(self):
        base = phantoms.build_homogeneous("fibroglandular", 0.06, "water", G401)
        for name in ("scenario-a", "scenario-b", "scenario-c"):
            s = phantoms.load_schedule(name)
            assert phantoms.apply_scenario(base, s, 0).equals(base)

    def test_bad_step(self):
        base = phantoms.build_homogeneous("fibroglandular", 0.06, "water", G401)
        s = phantoms.load_schedule("scenario-b")
        with pytest.raises(DomainError):
            phantoms.apply_scenario(base, s, s.n_steps)

    def test_validation(self):
        with pytest.raises(ConfigError):
            Region("r", "treatment", (1.0, 1.1), (0, 0), 0.01)
        with pytest.raises(ConfigError):
            Region("r", "treatment", (1.0, 0.8, 0.9), (0, 0), 0.01)
        with pytest.raises(ConfigError):
            Region("r", "lesion", (1.0,), (0, 0), 0.01)
        a = Region("a", "hotspot", (1.0, 0.9), (0.0, 0.0), 0.01)
        b = Region("b", "hotspot", (1.0, 0.9), (0.015, 0.0), 0.01)
        with pytest.raises(GeometryError):
            ScenarioSchedule("x", (a, b))
        c = Region("c", "hotspot", (1.0,), (0.05, 0.0), 0.01)
        with pytest.raises(ConfigError):
            ScenarioSchedule("x", (a, c))

    def test_dict_roundtrip(self):
        s = phantoms.load_schedule("scenario-c")
        assert ScenarioSchedule.from_dict(s.to_dict()) == s

    def test_rate_form(self):
        s = ScenarioSchedule.from_dict({
            "name": "r",
            "regions": [{"name": "t", "kind": "treatment", "center": [0, 0],
                         "radius": 0.01, "rate": 0.05, "steps": 3}],
        })
        assert s.region("t").fractions == pytest.approx((1.0, 0.95, 0.90, 0.85))

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            phantoms.load_schedule("no-such-schedule")

    @settings(max_examples=20, deadline=None)
    @given(st.permutations([0, 1, 2]), st.integers(0, 4))
    def test_order_independent(self, perm, step):
        g = GridSpec(nx=121, ny=121, dx=1e-3, dy=1e-3)
        base = phantoms.build_homogeneous("fibroglandular", 0.05, "water", g)
        regs = [
            Region("h1", "hotspot", (1, .9, .8, .7, .6), (0.02, 0.02), 0.008),
            Region("h2", "hotspot", (1, .95, .9, .85, .8), (-0.02, 0.02), 0.008),
            Region("t", "treatment", (1, .8, .6, .5, .4), (0.0, -0.02), 0.008),
        ]
        a = phantoms.apply_scenario(base, ScenarioSchedule("a", tuple(regs)), step)
        b = phantoms.apply_scenario(
            base, ScenarioSchedule("b", tuple(regs[i] for i in perm)), step)
        assert a.equals(b)


class TestRealistic:
    def test_roundtrip(self, small_grid, tmp_path):
        m = phantoms.build_two_inclusion(small_grid)
        p = tmp_path / "r.hfgm"
        hfgm.write_media(m, p)
        assert phantoms.load_realistic(p).equals(m)

    def test_forces_water(self, small_grid, tmp_path):
        m = phantoms.build_homogeneous("fat", 0.05, "air", small_grid)
        p = tmp_path / "r.hfgm"
        hfgm.write_media(m, p)
        back = phantoms.load_realistic(p)
        assert back.immersion is Tissue.WATER and back.boundary_h == 300.0
        assert np.array_equal(back.tissue_mask, m.tissue_mask)

    def test_truncated(self, small_grid, tmp_path):
        p = tmp_path / "r.hfgm"
        hfgm.write_media(phantoms.build_two_inclusion(small_grid), p)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(ParseError):
            phantoms.load_realistic(p)

    def test_generator_loads(self, tmp_path):
        m = phantoms.generate_scattered_fibroglandular(3, G401)
        p = tmp_path / "s.hfgm"
        hfgm.write_media(m, p)
        back = phantoms.load_realistic(p)
        assert back.equals(m)
        back.validate()


class TestScattered:
    def test_deterministic(self):
        a = phantoms.generate_scattered_fibroglandular(11, G401)
        b = phantoms.generate_scattered_fibroglandular(11, G401)
        c = phantoms.generate_scattered_fibroglandular(12, G401)
        assert a.equals(b)
        assert not a.equals(c)

    @pytest.mark.parametrize("seed", range(5))
    def test_fraction_band(self, seed):
        m = phantoms.generate_scattered_fibroglandular(seed, G401)
        lo, hi = phantoms.FIBRO_FRACTION_BAND
        assert lo <= phantoms.fibroglandular_fraction(m) <= hi

    def test_inside_outline(self):
        m = phantoms.generate_scattered_fibroglandular(4, G401)
        outline = phantoms.breast_outline(G401)
        fibro = m.labels == Tissue.FIBROGLANDULAR
        assert not np.any(fibro & ~outline)
        assert np.array_equal(m.tissue_mask, outline)
        assert np.any(m.labels == Tissue.SKIN)

    def test_explicit_fraction(self):
        m = phantoms.generate_scattered_fibroglandular(1, G401, fraction=0.3)
        assert phantoms.fibroglandular_fraction(m) == pytest.approx(0.3, abs=1e-4)
        with pytest.raises(DomainError):
            phantoms.generate_scattered_fibroglandular(1, G401, fraction=0.5)

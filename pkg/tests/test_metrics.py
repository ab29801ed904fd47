import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperbeam import metrics, phantoms
from hyperbeam.errors import DomainError, GeometryError
from hyperbeam.grid import GridSpec, disk_mask

# 5 mm cells: the 1 cm treatment disk spans two cells each way
G = GridSpec(nx=21, ny=21, dx=5e-3, dy=5e-3, pml_thickness=8)


@pytest.fixture(scope="module")
def media():
    return phantoms.build_homogeneous("fibroglandular", 0.03, "water", G)


def gaussian(grid, center=(0, 0), width=3):
    i, j = np.indices(grid.shape)
    return np.exp(-((i - center[0]) ** 2 + (j - center[1]) ** 2) / (2 * width**2))


class TestPowerReport:
    def test_hand_sums(self, media):
        c = G.center
        q = np.zeros(G.shape)
        block = np.arange(1, 10, dtype=float).reshape(3, 3)
        q[c[0] - 1:c[0] + 2, c[1] - 1:c[1] + 2] = block
        q[c[0] + 4, c[1]] = 100.0       # tissue, outside the treatment disk
        q[c[0] + 8, c[1]] = 1000.0      # immersion, never counted
        assert media.tissue_mask[c[0] + 4, c[1]] and not media.tissue_mask[c[0] + 8, c[1]]
        r = metrics.power_report(q, media, c)
        area = 25e-6
        assert r.target_cell == 5.0
        assert r.treatment_region == 45.0 * area
        assert r.total_media == 145.0 * area
        assert r.total_ratio is None

    def test_self_ratios(self, media):
        q = gaussian(G, G.center)
        base = metrics.power_report(q, media, G.center)
        r = metrics.power_report(q, media, G.center, base)
        assert (r.total_ratio, r.treatment_ratio, r.target_ratio) == (1.0, 1.0, 1.0)
        r2 = metrics.power_report(2 * q, media, G.center, base)
        assert (r2.total_ratio, r2.treatment_ratio, r2.target_ratio) == (2.0, 2.0, 2.0)

    def test_zero_baseline_ratio_undefined(self, media):
        base = metrics.power_report(np.zeros(G.shape), media, G.center)
        r = metrics.power_report(gaussian(G, G.center), media, G.center, base)
        assert r.target_ratio is None and r.total_ratio is None

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 10), st.floats(0.1, 10))
    def test_linearity(self, seed, a, b):
        rng = np.random.default_rng(seed)
        m = phantoms.build_homogeneous("fibroglandular", 0.03, "water", G)
        q1 = rng.uniform(0, 1, G.shape)
        q2 = rng.uniform(0, 1, G.shape)
        r1, r2 = (metrics.power_report(q, m, G.center) for q in (q1, q2))
        r = metrics.power_report(a * q1 + b * q2, m, G.center)
        for name in ("total_media", "treatment_region", "target_cell"):
            assert getattr(r, name) == pytest.approx(a * getattr(r1, name) + b * getattr(r2, name),
                                                     rel=1e-12)

    def test_region_additivity(self, rng, media):
        q = rng.uniform(0, 1, G.shape)
        a = disk_mask(G, (0.0, 0.0), 0.01)
        b = ~a
        total = metrics.region_power(q, np.ones(G.shape, bool), G)
        assert metrics.region_power(q, a, G) + metrics.region_power(q, b, G) == pytest.approx(total)

    def test_negative_rejected(self, media):
        with pytest.raises(DomainError):
            metrics.power_report(-np.ones(G.shape), media, G.center)
        with pytest.raises(GeometryError):
            metrics.power_report(np.ones((3, 3)), media, G.center)
        with pytest.raises(DomainError):
            metrics.PowerReport(-1.0, 0.0, 0.0)

    def test_csv(self, media):
        r = metrics.power_report(gaussian(G, G.center), media, G.center)
        lines = r.to_csv().splitlines()
        assert lines[0] == "quantity,value,ratio"
        assert lines[3].startswith("target_cell,1.0,")


class TestContour:
    def test_uniform_all_true(self):
        assert metrics.contour_mask(np.full((5, 5), 3.0), -3).all()

    def test_gaussian_connected_with_peak(self):
        g = gaussian(G, (7, 12))
        m = metrics.contour_mask(g, -3)
        assert m[7, 12]
        assert metrics.component_at(m, (7, 12)).sum() == m.sum()

    def test_absolute_below_min(self):
        t = 37 + gaussian(G, G.center)
        assert metrics.contour_mask(t, 30.0, "absolute").all()
        assert not metrics.contour_mask(t, 40.0, "absolute").any()

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_peak_always_included(self, seed):
        v = np.random.default_rng(seed).uniform(0, 1, (9, 9))
        m = metrics.contour_mask(v, -3)
        assert m[np.unravel_index(np.argmax(v), v.shape)]

    def test_region_and_errors(self):
        v = gaussian(G, G.center)
        region = np.zeros(G.shape, bool)
        region[:5] = True
        m = metrics.contour_mask(v, -3, region=region)
        assert not m[~region].any() and m.any()
        with pytest.raises(DomainError):
            metrics.contour_mask(v, 3)
        with pytest.raises(DomainError):
            metrics.contour_mask(v, -3, "linear")

    def test_threshold_masks(self):
        t = 36 + 10 * gaussian(G, G.center)
        masks = metrics.threshold_masks(t)
        assert list(masks) == [37.0, 40.0, 42.0, 45.0]
        assert masks[45.0].sum() <= masks[42.0].sum() <= masks[37.0].sum()

    def test_focal_area(self):
        v = gaussian(G, G.center, width=2)
        n = metrics.focal_area(v, G.center)
        # exp(-r^2/8) >= 10^-0.3 inside r^2 <= 5.54: the 21 lattice points with r^2 <= 5
        assert n == 21
        assert metrics.focal_area(v, G.center, grid=G) == pytest.approx(21 * 25e-6)
        with pytest.raises(DomainError):
            metrics.focal_area(np.zeros(G.shape), G.center)


class TestSlice:
    def test_symmetric_palindrome(self):
        s = metrics.slice_1d(gaussian(G, G.center), G)
        assert np.array_equal(s, s[::-1])

    def test_length_and_values(self, rng):
        v = rng.normal(size=G.shape)
        s = metrics.slice_1d(v, G)
        assert s.size == G.nx
        assert np.array_equal(s, v[:, G.ny // 2])
        assert np.array_equal(metrics.slice_1d(v, G, y=0.01), v[:, G.ny // 2 + 2])

    def test_errors(self):
        with pytest.raises(GeometryError):
            metrics.slice_1d(np.zeros((3, 3)), G)
        with pytest.raises(GeometryError):
            metrics.slice_1d(np.zeros(G.shape), G, y=1.0)


class TestFocusError:
    def test_at_target(self):
        assert metrics.focus_error(gaussian(G, (8, 9)), (8, 9)) == 0.0

    def test_three_cells(self):
        assert metrics.focus_error(gaussian(G, (11, 9)), (8, 9)) == 3.0

    def test_tie_nearest(self):
        v = np.zeros(G.shape)
        v[2, 2] = v[12, 10] = 1.0
        assert metrics.peak_cell(v, (10, 10)) == (12, 10)
        assert metrics.focus_error(v, (10, 10)) == 2.0

    def test_tie_row_major(self):
        v = np.zeros(G.shape)
        v[10, 12] = v[12, 10] = 1.0
        assert metrics.peak_cell(v, (10, 10)) == (10, 12)

    def test_region(self):
        v = gaussian(G, (3, 3))
        region = np.zeros(G.shape, bool)
        region[10:, 10:] = True
        assert metrics.peak_cell(v, (15, 15), region) == (10, 10)
        with pytest.raises(DomainError):
            metrics.peak_cell(v, (0, 0), np.zeros(G.shape, bool))


def test_overlap():
    a = np.zeros((4, 4), bool)
    b = a.copy()
    assert metrics.overlap(a, b) == 1.0
    a[0, :2] = True
    b[0, 1:3] = True
    assert metrics.overlap(a, b) == pytest.approx(1 / 3)

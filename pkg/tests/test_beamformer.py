import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperbeam import beamformer as bf
from hyperbeam import fdtd, phantoms
from hyperbeam.errors import (
    AcquisitionError,
    DegenerateChannelError,
    DomainError,
    GeometryError,
    IllConditionedError,
)
from hyperbeam.grid import GridSpec, scale_debye

G = GridSpec(nx=121, ny=121, dx=1e-3, dy=1e-3)
RING = 0.04


@pytest.fixture(scope="module")
def disk():
    return phantoms.build_homogeneous("fibroglandular", 0.03, "water", G)


@pytest.fixture(scope="module")
def ring():
    return bf.ring_antennas(G, 16, RING)


def random_channel(rng, n, m):
    raw = rng.normal(size=(n, m)) + 1j * rng.normal(size=(n, m))
    return bf.ChannelMatrix.from_raw(raw, 0)


class TestRing:
    def test_reference_on_positive_x(self):
        cells = bf.ring_antennas(G, 16, RING)
        assert cells[0] == G.cell(RING, 0.0)
        assert cells[4] == G.cell(0.0, RING)

    def test_too_few(self):
        with pytest.raises(DomainError):
            bf.ring_antennas(G, 1, RING)

    def test_collapse(self):
        with pytest.raises(GeometryError):
            bf.ring_antennas(G, 64, 0.002)

    def test_mirror_permutation(self, ring):
        p = bf.mirror_permutation(ring, G)
        assert sorted(p) == list(range(16))
        assert p[0] == 8 and p[4] == 4
        with pytest.raises(GeometryError):
            bf.mirror_permutation(ring[:3], G)


class TestChannelMatrix:
    def test_reference_exact(self, rng):
        c = random_channel(rng, 8, 3)
        assert np.all(c.entries[0] == 1 + 0j)

    def test_m_bound(self, rng):
        with pytest.raises(DomainError):
            random_channel(rng, 4, 4)

    def test_unnormalized_rejected(self):
        with pytest.raises(DomainError):
            bf.ChannelMatrix(np.full((4, 1), 2 + 0j))

    def test_zero_reference(self):
        raw = np.ones((4, 1), complex)
        raw[0] = 0
        with pytest.raises(DegenerateChannelError):
            bf.ChannelMatrix.from_raw(raw)

    def test_objective_vector(self):
        with pytest.raises(DomainError):
            bf.ObjectiveVector(np.array([0.0]), ((1, 1),))
        with pytest.raises(DomainError):
            bf.ObjectiveVector(np.array([1.0, 0.5]), ((1, 1), (2, 2)))
        ov = bf.ObjectiveVector.from_cells([(5, 5)], [(6, 6), (7, 7)])
        assert list(ov.g) == [1, 0, 0]

    def test_weights_unit_magnitude(self):
        with pytest.raises(DomainError):
            bf.BeamformerWeights(np.array([1.0, 2.0]), phase_only=True, mode="ideal")
        with pytest.raises(DomainError):
            bf.BeamformerWeights(np.ones(2), phase_only=True, mode="adaptive")


class TestConjugate:
    def test_all_ones(self):
        w = bf.conjugate_weights(np.ones(8)).w
        assert np.array_equal(w, np.ones(8))

    def test_coherent_gain(self, rng):
        phi = rng.uniform(-math.pi, math.pi, 16)
        c = np.exp(1j * phi)
        w = bf.conjugate_weights(c).w
        assert np.allclose(w, np.exp(-1j * phi), rtol=0, atol=1e-15)
        assert np.sum(w * c) == pytest.approx(16, abs=1e-12)

    def test_maximizes_coherent_sum(self, rng):
        c = rng.normal(size=16) + 1j * rng.normal(size=16)
        best = abs(np.sum(bf.conjugate_weights(c).w * c))
        u = np.exp(1j * rng.uniform(-math.pi, math.pi, (1000, 16)))
        assert np.all(np.abs(u @ c) <= best * (1 + 1e-12))

    def test_zero_entry(self):
        with pytest.raises(DegenerateChannelError):
            bf.conjugate_weights(np.array([1.0, 0.0, 1.0]))

    def test_multi_column_rejected(self, rng):
        with pytest.raises(DomainError):
            bf.conjugate_weights(random_channel(rng, 8, 2))


class TestLCMP:
    def test_single_objective_reduction(self, rng):
        c = random_channel(rng, 16, 1)
        bw = bf.lcmp_weights(c, [1.0], phase_only=False)
        col = c.entries[:, 0]
        assert np.allclose(bw.w, col.conj() / np.vdot(col, col), atol=1e-14)
        proj = bf.lcmp_weights(c, [1.0])
        assert np.allclose(proj.w, bf.conjugate_weights(c).w, atol=1e-12)

    def test_orthonormal_columns(self, rng):
        q, _ = np.linalg.qr(rng.normal(size=(8, 2)) + 1j * rng.normal(size=(8, 2)))
        bw = bf.lcmp_weights(q, [1.0, 0.0], phase_only=False)
        assert np.allclose(bw.w, q[:, 0].conj(), atol=1e-14)
        assert np.max(np.abs(bw.w @ q - [1, 0])) <= 1e-14

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 15))
    def test_distortionless_identity(self, seed, m):
        rng = np.random.default_rng(seed)
        c = random_channel(rng, 16, m)
        g = rng.integers(0, 2, m).astype(float)
        g[rng.integers(m)] = 1.0
        bw = bf.lcmp_weights(c, g)
        assert bw.residual <= 1e-10
        assert np.max(np.abs(bw.unprojected @ c.entries - g)) <= 1e-10
        assert np.allclose(np.abs(bw.w), 1.0)

    def test_ill_conditioned_names_pair(self, rng):
        raw = rng.normal(size=(8, 3)) + 1j * rng.normal(size=(8, 3))
        raw[:, 2] = raw[:, 0] * (1 + 1e-9)
        with pytest.raises(IllConditionedError) as exc:
            bf.lcmp_weights(bf.ChannelMatrix.from_raw(raw), [1.0, 0.0, 0.0])
        assert exc.value.columns == (0, 2)

    def test_alternating_deepens_nulls(self, rng):
        c = random_channel(rng, 16, 4)
        g = np.array([1.0, 0.0, 0.0, 0.0])
        a = bf.lcmp_weights(c, g, projection="alternating")
        n = bf.lcmp_weights(c, g, projection="normalize")
        assert a.projected_residual <= n.projected_residual
        assert np.allclose(np.abs(a.w), 1.0)

    def test_bad_inputs(self, rng):
        c = random_channel(rng, 8, 2)
        with pytest.raises(DomainError):
            bf.lcmp_weights(c, [1.0])
        with pytest.raises(DomainError):
            bf.lcmp_weights(c, [1.0, 0.0], projection="clip")

    def test_global_phase_invariance(self, rng):
        c = random_channel(rng, 16, 3)
        g = [1.0, 0.0, 0.0]
        rot = np.exp(0.7j) * c.entries
        w1 = bf.lcmp_weights(c, g, phase_only=False).w
        w2 = bf.lcmp_weights(rot, g, phase_only=False).w
        # weights pick up the opposite phase and the response is unchanged
        assert np.allclose(w2, w1 * np.exp(-0.7j), atol=1e-13)


class TestSpatialAverage:
    def test_homogeneous_unchanged(self, disk):
        avg = bf.spatial_average_media(disk)
        for name in ("eps_inf", "delta_eps", "sigma_s", "tau"):
            assert np.allclose(getattr(avg, name), getattr(disk, name), rtol=1e-14)

    def test_half_and_half(self, disk):
        mask = disk.tissue_mask.copy()
        # exactly half the tissue cells at fraction 0.5
        cells = np.argwhere(mask)
        pick = np.zeros_like(mask)
        pick[tuple(cells[: len(cells) // 2].T)] = True
        if len(cells) % 2:
            mask[tuple(cells[-1])] = False
        p = disk.debye_at(G.center)
        q = scale_debye(p, 0.5)
        arr = {n: np.array(getattr(disk, n)) for n in ("eps_inf", "delta_eps", "sigma_s", "tau")}
        for n in ("eps_inf", "delta_eps", "sigma_s"):
            arr[n][pick] = getattr(q, n)
        avg = bf.spatial_average_media(disk.with_debye(**arr), mask)
        for n in ("eps_inf", "delta_eps", "sigma_s"):
            assert getattr(avg, n)[G.center] == pytest.approx(0.75 * getattr(p, n), rel=1e-12)

    def test_single_cell(self, disk):
        arr = {n: np.array(getattr(disk, n)) for n in ("eps_inf", "delta_eps", "sigma_s", "tau")}
        arr["sigma_s"][G.center] = 0.3
        mask = np.zeros(G.shape, bool)
        mask[G.center] = True
        avg = bf.spatial_average_media(disk.with_debye(**arr), mask)
        assert avg.sigma_s[G.center] == 0.3

    def test_empty(self, disk):
        with pytest.raises(DomainError):
            bf.spatial_average_media(disk, np.zeros(G.shape, bool))


class TestAcquire:
    def test_centered_focus_symmetry(self, disk, ring):
        c = bf.acquire_channel(disk, [G.center], ring)
        e = c.entries[:, 0]
        # each ring cell and its images under the square's symmetries give
        # equal entries; the rest agree only to Cartesian-grid accuracy
        cells = {cell: k for k, cell in enumerate(ring)}
        cx, cy = G.center
        for k, (i, j) in enumerate(ring):
            di, dj = i - cx, j - cy
            for a, b in ((-di, dj), (di, -dj), (dj, di), (-dj, -di), (-di, -dj)):
                other = cells.get((cx + a, cy + b))
                if other is not None:
                    assert abs(e[other] - e[k]) <= 1e-6
        for k in (4, 8, 12):
            assert abs(e[k] - 1) <= 1e-6
        assert np.max(np.abs(np.abs(e) - 1)) < 0.1

    def test_nearest_antenna_largest(self, disk, ring):
        c = bf.acquire_channel(disk, [G.cell(-0.015, 0.0)], ring)
        assert int(np.argmax(np.abs(c.entries[:, 0]))) == 8

    def test_mirror_objectives(self, disk, ring):
        a, b = G.cell(0.012, 0.008), G.cell(-0.012, 0.008)
        c = bf.acquire_channel(disk, [a, b], ring)
        p = bf.mirror_permutation(ring, G)
        ca = c.entries[:, 0]
        expect = ca[p] / ca[p[0]]
        assert np.max(np.abs(c.entries[:, 1] - expect)) <= 1e-6
        assert np.max(np.abs(c.raw[:, 1] - c.raw[p, 0])) <= 1e-6 * np.abs(c.raw).max()

    def test_objective_outside_tissue(self, disk, ring):
        with pytest.raises(GeometryError):
            bf.acquire_channel(disk, [G.cell(0.035, 0.0)], ring)

    def test_degenerate_recording(self, disk, ring):
        with pytest.raises(AcquisitionError):
            bf.acquire_channel(disk, [G.center], ring, duration=5)

    def test_cache_and_workers(self, disk, ring):
        cache = {}
        cells = [G.center, G.cell(-0.01, 0.0)]
        a = bf.acquire_channel(disk, cells, ring, cache=cache)
        assert len(cache) == 2
        b = bf.acquire_channel(disk, cells, ring, workers=2)
        assert np.array_equal(a.entries, b.entries)

    def test_conjugate_focuses(self, disk, ring):
        target = G.cell(-0.012, 0.0)
        c = bf.acquire_channel(disk, [target], ring)
        w = bf.conjugate_weights(c).w
        res = fdtd.run_cw(disk, w, ring, 30)
        q = fdtd.heating_potential(res.history, disk)
        q = np.where(disk.tissue_mask, q, 0)
        peak = np.unravel_index(np.argmax(q), q.shape)
        assert math.hypot(peak[0] - target[0], peak[1] - target[1]) <= 3


class TestDesign:
    def test_degenerate_scenario(self, disk, ring):
        req = bf.DesignRequest(ring, bf.ObjectiveVector.from_cells([G.cell(-0.01, 0.0)]))
        ws = [bf.design(m, disk, disk, req).w for m in bf.MODES]
        assert np.max(np.abs(ws[0] - ws[1])) <= 1e-9
        assert np.max(np.abs(ws[0] - ws[2])) <= 1e-9

    def test_unknown_mode(self, disk, ring):
        req = bf.DesignRequest(ring, bf.ObjectiveVector.from_cells([G.center]))
        with pytest.raises(DomainError):
            bf.design("oracle", disk, disk, req)

    def test_multi_objective_design(self, disk, ring):
        target = G.cell(-0.012, 0.0)
        nulls = [G.cell(0.012, y) for y in (-0.002, 0.0, 0.002)]
        req = bf.DesignRequest(ring, bf.ObjectiveVector.from_cells([target], nulls),
                               projection="alternating")
        bw = bf.design("ideal", disk, disk, req)
        assert bw.residual <= 1e-10
        assert bw.info["channel"].n_objectives == 4

import math

import numpy as np
import pytest

from conftest import random_link
from nlfactor.kernels import (
    KernelSpec,
    LinkFunction,
    MonotoneBounds,
    SingularGramError,
    compress_dictionary,
    default_bandwidth,
    gram_matrix,
    h_distance_sq,
    interpolate_on_grid,
    kernel_eval,
    link_deriv,
    link_eval,
    project_monotone,
    rkhs_norm_sq,
)

G1 = KernelSpec("gaussian", 1.0)


def grid_slopes(phi, bounds):
    grid = bounds.grid(phi.kernel)
    return np.diff(phi(grid)) / (grid[1] - grid[0])


class TestKernelEval:
    def test_diagonal_is_one(self, rng):
        for x in rng.normal(scale=10, size=20):
            assert kernel_eval(G1, x, x) == 1.0

    def test_half_point(self):
        assert kernel_eval(G1, 0.0, math.sqrt(2 * math.log(2))) == pytest.approx(0.5, abs=1e-15)

    def test_symmetry(self, rng):
        for spec in (G1, KernelSpec("laplacian", 0.7)):
            a, b = rng.normal(size=(2, 50))
            for x, y in zip(a, b):
                assert kernel_eval(spec, x, y) == kernel_eval(spec, y, x)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            KernelSpec("gaussian", 0.0)
        with pytest.raises(ValueError):
            KernelSpec("cosine", 1.0)
        assert G1.b_k == 1.0


class TestLinkEval:
    def test_empty_dictionary(self):
        phi = LinkFunction.zero(G1)
        assert link_eval(phi, 1.3) == 0.0
        assert link_deriv(phi, 1.3) == 0.0

    def test_single_peak(self):
        phi = LinkFunction(G1, [0.0], [1.0])
        assert link_eval(phi, 0.0) == 1.0
        assert link_deriv(phi, 0.0) == 0.0

    def test_deriv_matches_central_difference(self, rng):
        for h in (0.1, 0.5, 1.0, 3.0):
            for _ in range(5):
                phi = random_link(rng, size=8, h=h, spread=10.0, offset=rng.normal())
                x = rng.uniform(-10, 10, 200)
                step = 1e-5
                fd = (phi(x + step) - phi(x - step)) / (2 * step)
                np.testing.assert_allclose(phi.deriv(x), fd, rtol=0, atol=1e-6)

    def test_laplacian_deriv_away_from_centers(self, rng):
        phi = random_link(rng, size=4)
        phi = LinkFunction(KernelSpec("laplacian", 0.8), phi.centers, phi.coeffs)
        x = np.linspace(-3.3, 3.1, 57)
        step = 1e-7
        fd = (phi(x + step) - phi(x - step)) / (2 * step)
        np.testing.assert_allclose(phi.deriv(x), fd, atol=1e-5)

    def test_value_and_deriv_consistent(self, rng):
        phi = random_link(rng, size=6, offset=0.3)
        x = rng.normal(size=100)
        v, d = phi.value_and_deriv(x)
        np.testing.assert_array_equal(v, phi(x))
        np.testing.assert_array_equal(d, phi.deriv(x))

    def test_reproducing_property(self, rng):
        phi = random_link(rng, size=7, offset=1.5)
        for x in rng.normal(size=10):
            direct = sum(b * kernel_eval(G1, c, x) for c, b in zip(phi.centers, phi.coeffs))
            assert link_eval(phi, x) - phi.offset == pytest.approx(direct, abs=1e-13)

    def test_point_evaluation_bound(self, rng):
        for _ in range(30):
            phi = random_link(rng, size=6, offset=rng.normal())
            x = rng.uniform(-5, 5, 100)
            bound = math.sqrt(rkhs_norm_sq(phi)) * math.sqrt(G1.b_k)
            assert np.all(np.abs(phi(x) - phi.offset) <= bound + 1e-12)

    def test_centers_must_increase(self):
        with pytest.raises(ValueError):
            LinkFunction(G1, [1.0, 0.0], [1.0, 1.0])
        merged = LinkFunction.from_atoms(G1, [1.0, 0.0, 1.0], [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(merged.centers, [0.0, 1.0])
        np.testing.assert_array_equal(merged.coeffs, [2.0, 4.0])

    def test_record_round_trip(self, rng):
        phi = random_link(rng, size=5, offset=0.25)
        back = LinkFunction.from_record(phi.to_record())
        np.testing.assert_array_equal(back.centers, phi.centers)
        np.testing.assert_array_equal(back.coeffs, phi.coeffs)
        assert back.offset == phi.offset and back.kernel == phi.kernel


class TestGram:
    def test_single_point(self):
        np.testing.assert_array_equal(gram_matrix(G1, [0.3]), [[1.0]])

    def test_identical_points(self):
        g = gram_matrix(G1, [2.0, 2.0])
        np.testing.assert_array_equal(g, np.ones((2, 2)))
        assert np.linalg.matrix_rank(g) == 1

    def test_matches_loop(self, rng):
        pts = rng.normal(size=3)
        loop = np.array([[kernel_eval(G1, a, b) for b in pts] for a in pts])
        np.testing.assert_allclose(gram_matrix(G1, pts), loop, rtol=0, atol=1e-15)

    def test_psd(self, rng):
        for _ in range(20):
            pts = rng.normal(scale=3, size=int(rng.integers(2, 60)))
            g = gram_matrix(G1, pts)
            assert np.array_equal(g, g.T)
            assert np.linalg.eigvalsh(g)[0] >= -1e-10 * np.trace(g)


class TestNorms:
    def test_single_center(self):
        assert rkhs_norm_sq(LinkFunction(G1, [0.4], [-3.0])) == pytest.approx(9.0)

    def test_cancellation_limit(self):
        vals = [rkhs_norm_sq(LinkFunction(G1, [0.0, d], [1.0, -1.0])) for d in (1e-1, 1e-2, 1e-3)]
        assert vals[0] > vals[1] > vals[2]
        assert vals[2] < 1e-5

    def test_two_centers(self):
        d = math.sqrt(2 * math.log(2))
        assert rkhs_norm_sq(LinkFunction(G1, [0.0, d], [1.0, 1.0])) == pytest.approx(3.0)

    def test_offset_excluded(self):
        assert rkhs_norm_sq(LinkFunction(G1, [0.0], [2.0], offset=100.0)) == pytest.approx(4.0)

    def test_distance_brute_force(self, rng):
        f, g = random_link(rng, 4), random_link(rng, 3)
        cs = np.concatenate([f.centers, g.centers])
        bs = np.concatenate([f.coeffs, -g.coeffs])
        brute = sum(bs[i] * bs[j] * kernel_eval(G1, cs[i], cs[j])
                    for i in range(len(cs)) for j in range(len(cs)))
        assert h_distance_sq(f, g) == pytest.approx(brute, rel=1e-12)


class TestCompress:
    def test_on_grid_identity(self):
        phi = LinkFunction(G1, [-0.2, 0.0, 0.3], [1.0, 2.0, 3.0])
        out = compress_dictionary(phi, 0.1)
        np.testing.assert_array_equal(out.centers, phi.centers)
        np.testing.assert_array_equal(out.coeffs, phi.coeffs)

    def test_merge(self):
        out = compress_dictionary(LinkFunction(G1, [0.01, 0.02], [1.0, 1.0]), 0.1)
        np.testing.assert_array_equal(out.centers, [0.0])
        np.testing.assert_array_equal(out.coeffs, [2.0])

    def test_sup_error(self, rng):
        probe = np.linspace(-6, 6, 4001)
        for _ in range(10):
            phi = random_link(rng, size=40, spread=4.0)
            spacing = 1e-3
            out = compress_dictionary(phi, spacing)
            err = np.max(np.abs(phi(probe) - out(probe)))
            total = np.sum(np.abs(phi.coeffs))
            assert err <= 1e-2 * total
            assert err <= total * G1.lipschitz_k * spacing / 2 + 1e-15
            span = phi.centers[-1] - phi.centers[0]
            assert len(out) <= span / spacing + 2

    def test_keeps_offset(self):
        out = compress_dictionary(LinkFunction(G1, [0.013], [1.0], offset=2.5), 0.01)
        assert out.offset == 2.5


class TestMonotoneProjection:
    bounds = MonotoneBounds(0.1, 10.0, grid_points=7, range=(-3.0, 3.0))

    def linear(self, slope, offset=0.0):
        grid = self.bounds.grid(G1)
        return interpolate_on_grid(G1, grid, slope * grid + offset, offset)

    def test_none_mode_identity(self):
        phi = self.linear(-1.0)
        assert project_monotone(phi, self.bounds, "none") is phi

    def test_feasible_fixed_point(self):
        phi = self.linear(2.0, 0.5)
        grid = self.bounds.grid(G1)
        out = project_monotone(phi, self.bounds, "slope-clip")
        np.testing.assert_allclose(out(grid), phi(grid), atol=1e-9)

    def test_decreasing_full_clamp(self):
        out = project_monotone(self.linear(-1.0), self.bounds, "slope-clip")
        np.testing.assert_allclose(grid_slopes(out, self.bounds), 0.1, atol=1e-9)

    def test_anchor_at_midpoint(self, rng):
        phi = random_link(rng, size=9, spread=3.0)
        grid = self.bounds.grid(G1)
        out = project_monotone(phi, self.bounds, "slope-clip")
        mid = (len(grid) - 1) // 2
        assert out(grid[mid]) == pytest.approx(phi(grid[mid]), abs=1e-9)

    def test_qp_not_worse_than_clip(self, rng):
        for _ in range(5):
            phi = random_link(rng, size=12, spread=3.0)
            clip = project_monotone(phi, self.bounds, "slope-clip")
            qp = project_monotone(phi, self.bounds, "qp", qp_iters=300)
            s = grid_slopes(qp, self.bounds)
            assert np.all(s >= 0.1 - 1e-9) and np.all(s <= 10.0 + 1e-9)
            d_qp = math.sqrt(h_distance_sq(qp, phi))
            d_clip = math.sqrt(h_distance_sq(clip, phi))
            assert d_qp <= d_clip + 1e-6

    def test_idempotent(self, rng):
        grid = self.bounds.grid(G1)
        for mode in ("slope-clip", "qp"):
            once = project_monotone(random_link(rng, 10, spread=3.0), self.bounds, mode, 200)
            twice = project_monotone(once, self.bounds, mode, 200)
            assert np.max(np.abs(twice(grid) - once(grid))) < 1e-9

    def test_singular_grid(self):
        tight = MonotoneBounds(0.1, 1.0, grid_points=400, range=(-3.0, 3.0))
        with pytest.raises(SingularGramError):
            project_monotone(self.linear(-1.0), tight, "slope-clip")

    def test_bounds_validation(self):
        with pytest.raises(ValueError):
            MonotoneBounds(0.0, 1.0)
        with pytest.raises(ValueError):
            MonotoneBounds(2.0, 1.0)
        with pytest.raises(ValueError):
            MonotoneBounds(0.1, 1.0, grid_points=1)
        with pytest.raises(ValueError):
            MonotoneBounds(0.1, 1.0, range=(1.0, 1.0))

    def test_auto_grid_spacing_near_bandwidth(self):
        b = MonotoneBounds(0.1, 1.0, range=(0.0, 10.0))
        grid = b.grid(KernelSpec("gaussian", 0.5))
        assert grid[1] - grid[0] <= 0.5


def test_default_bandwidth():
    x = np.linspace(-2, 6, 100)
    assert default_bandwidth(x) == pytest.approx(0.5 * 8 / 4)
    assert default_bandwidth(np.ones(5)) == 1.0

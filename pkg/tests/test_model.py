import numpy as np
import pytest

from nlfactor import (
    FactorMatrix,
    GroundTruth,
    ObservationSet,
    SyntheticConfig,
    analytic_link,
    generate_synthetic,
    incoherence,
    sample_inner_product,
)
from nlfactor.model import sample_inner_products, zero_filled_matrix


class TestObservationSet:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            ObservationSet(2, 2, [0, 2], [0, 1], [1.0, 2.0])
        with pytest.raises(ValueError):
            ObservationSet(2, 2, [0], [-1], [1.0])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            ObservationSet(2, 2, [], [], [])

    def test_duplicates_and_more_than_nT_allowed(self):
        obs = ObservationSet(1, 1, [0] * 5, [0] * 5, np.arange(5.0))
        assert obs.M == 5

    def test_triples_keep_order(self):
        samples = [(1, 0, 2.0), (0, 1, -1.0), (1, 0, 3.0)]
        obs = ObservationSet.from_triples(2, 2, samples)
        assert obs.triples() == samples


class TestFactorMatrix:
    def test_blocks(self):
        z = FactorMatrix.from_blocks(np.ones((3, 2)), 2 * np.ones((4, 2)))
        assert (z.n, z.T, z.r) == (3, 4, 2)
        np.testing.assert_array_equal(z.product(), np.full((3, 4), 4.0))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            FactorMatrix(np.array([[1.0], [np.nan]]), 1)

    def test_immutable(self):
        z = FactorMatrix(np.ones((3, 1)), 1)
        with pytest.raises(ValueError):
            z.values[0, 0] = 2.0


class TestGenerateSynthetic:
    def test_rank_one_all_ones(self):
        cfg = SyntheticConfig(2, 2, 1, sampling="complete")
        obs, truth = generate_synthetic(cfg)
        assert obs.M == 4
        # the identity link on Z* with every row equal to (1) gives y = 1 everywhere
        ones = FactorMatrix(np.ones((4, 1)), 2)
        np.testing.assert_array_equal(truth.phi_star(sample_inner_products(ones, obs)), 1.0)

    def test_shared_parameter_instance(self):
        cfg = SyntheticConfig(100, 100, 3, M=5000, noise="gaussian", sigma=0.1, link="sigmoid")
        obs, truth = generate_synthetic(cfg)
        assert obs.M == 5000
        clean = obs.y - (obs.y - truth.phi_star(sample_inner_products(truth.z_star, obs)))
        assert np.all((clean > 0) & (clean < 1))
        noise = obs.y - truth.phi_star(sample_inner_products(truth.z_star, obs))
        assert 0.08 < noise.std() < 0.12

    def test_complete_identity_matches_product(self):
        cfg = SyntheticConfig(3, 2, 2, sampling="complete", seed=7)
        obs, truth = generate_synthetic(cfg)
        x = truth.z_star.product()
        y = np.zeros((3, 2))
        y[obs.rows, obs.cols] = obs.y
        # brute-force loop product
        u, v = truth.z_star.u, truth.z_star.v
        brute = np.array([[sum(u[i, k] * v[t, k] for k in range(2)) for t in range(2)]
                          for i in range(3)])
        np.testing.assert_allclose(y, brute, rtol=0, atol=1e-12)
        np.testing.assert_allclose(x, brute, atol=1e-12)

    def test_determinism(self):
        cfg = SyntheticConfig(20, 15, 2, M=300, noise="subgaussian-bounded", sigma=0.3, seed=4)
        a, ta = generate_synthetic(cfg)
        b, tb = generate_synthetic(cfg)
        assert a.y.tobytes() == b.y.tobytes()
        assert a.rows.tobytes() == b.rows.tobytes()
        assert ta.z_star.values.tobytes() == tb.z_star.values.tobytes()

    def test_noiseless_consistency(self):
        for link in ("identity", "sigmoid", "tanh", "piecewise"):
            obs, truth = generate_synthetic(SyntheticConfig(10, 12, 2, M=80, link=link, seed=1))
            for i, t, y in obs.triples():
                assert y - truth.phi_star(sample_inner_product(truth.z_star, i, t)) == 0.0

    def test_incoherence_row_scan(self):
        obs, truth = generate_synthetic(SyntheticConfig(30, 20, 3, M=100, seed=2))
        a = truth.z_star.values
        best = 0.0
        for row in a:
            best = max(best, float(row @ row))
        expected = a.shape[0] * best / float(np.sum(a * a))
        assert truth.mu == pytest.approx(expected, rel=1e-14)
        assert 1.0 <= truth.mu <= a.shape[0]

    def test_spectrum_fidelity(self):
        spec = [9.0, 4.0, 1.0]
        obs, truth = generate_synthetic(SyntheticConfig(25, 30, 3, M=50, factor_scale=spec))
        s = np.linalg.svd(truth.z_star.product(), compute_uv=False)[:3]
        np.testing.assert_allclose(s, spec, rtol=1e-10)
        assert truth.kappa == pytest.approx(9.0)

    def test_without_replacement_has_no_duplicates(self):
        obs, _ = generate_synthetic(SyntheticConfig(5, 5, 1, M=25,
                                                    sampling="without-replacement-uniform"))
        assert len(set(zip(obs.rows.tolist(), obs.cols.tolist()))) == 25

    def test_subgaussian_noise_is_bounded(self):
        obs, truth = generate_synthetic(SyntheticConfig(30, 30, 2, M=2000, noise="subgaussian-bounded",
                                                        sigma=0.5, seed=3))
        noise = obs.y - truth.phi_star(sample_inner_products(truth.z_star, obs))
        assert np.max(np.abs(noise)) <= 0.5 * np.sqrt(3.0)
        assert noise.std() == pytest.approx(0.5, rel=0.05)

    def test_config_errors(self):
        with pytest.raises(ValueError):
            SyntheticConfig(2, 2, 1, M=5, sampling="without-replacement-uniform")
        with pytest.raises(ValueError):
            SyntheticConfig(2, 2, 1, M=3, sampling="complete")
        with pytest.raises(OverflowError):
            SyntheticConfig(2**21, 2**21, 1, M=3)
        with pytest.raises(ValueError):
            SyntheticConfig(2, 2, 3, M=3)

    def test_ground_truth_noiseless_flag(self):
        _, truth = generate_synthetic(SyntheticConfig(4, 4, 1, M=4))
        assert truth.noiseless
        assert isinstance(truth, GroundTruth)
        assert truth.kappa >= 1.0


class TestSampleInnerProduct:
    def test_unit_rows(self):
        z = FactorMatrix(np.array([[1.0, 0.0], [1.0, 0.0]]), 1)
        assert sample_inner_product(z, 0, 0) == 1.0

    def test_hand_dot(self):
        z = FactorMatrix(np.array([[1.0, 2.0], [3.0, -1.0]]), 1)
        assert sample_inner_product(z, 0, 0) == 1.0

    def test_zero_row(self):
        z = FactorMatrix(np.array([[0.0, 0.0], [5.0, -7.0], [1.0, 1.0]]), 1)
        assert sample_inner_product(z, 0, 1) == 0.0

    def test_out_of_range(self):
        z = FactorMatrix(np.ones((3, 1)), 1)
        with pytest.raises(IndexError):
            sample_inner_product(z, 1, 0)
        with pytest.raises(IndexError):
            sample_inner_product(z, 0, 2)

    def test_vectorised_agrees(self, rng):
        z = FactorMatrix(rng.normal(size=(9, 3)), 4)
        obs = ObservationSet(4, 5, rng.integers(0, 4, 30), rng.integers(0, 5, 30), np.zeros(30))
        loop = [sample_inner_product(z, i, t) for i, t, _ in obs.triples()]
        np.testing.assert_allclose(sample_inner_products(z, obs), loop, atol=1e-14)


class TestZeroFilled:
    def test_complete_is_exact(self):
        obs, _ = generate_synthetic(SyntheticConfig(3, 4, 2, sampling="complete"))
        y = zero_filled_matrix(obs)
        np.testing.assert_array_equal(y[obs.rows, obs.cols], obs.y)

    def test_single_observation(self):
        obs = ObservationSet(2, 2, [0], [0], [5.0])
        np.testing.assert_array_equal(zero_filled_matrix(obs, rescale=False), [[5, 0], [0, 0]])

    def test_duplicates_averaged(self):
        obs = ObservationSet(2, 2, [0, 0], [0, 0], [1.0, 3.0])
        assert zero_filled_matrix(obs, rescale=False)[0, 0] == 2.0

    def test_rescale_default_on_for_partial(self):
        obs = ObservationSet(2, 2, [0, 1], [0, 1], [1.0, 1.0])
        np.testing.assert_array_equal(zero_filled_matrix(obs), [[2, 0], [0, 2]])


def test_analytic_links():
    x = np.linspace(-3, 3, 13)
    for name in ("identity", "sigmoid", "tanh", "piecewise"):
        link = analytic_link(name)
        h = 1e-6
        fd = (link(x + h) - link(x - h)) / (2 * h)
        mask = np.abs(x) > 1e-3  # the piecewise kink
        np.testing.assert_allclose(link.deriv(x)[mask], fd[mask], atol=1e-6)
    with pytest.raises(ValueError):
        analytic_link("cubic")


def test_incoherence_of_zero_raises():
    with pytest.raises(ValueError):
        incoherence(FactorMatrix(np.zeros((3, 1)), 1))

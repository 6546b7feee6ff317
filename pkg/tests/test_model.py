"""Parameterization, outcome families and the linear predictor."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gplsim.errors import DomainError
from gplsim.model import (BERNOULLI, GAUSSIAN, POISSON, LongitudinalDataset, SubjectBlock, Theta,
                          alpha_from_phi, component_names, get_family, linear_predictor,
                          phi_from_alpha, unit_deviance)
from gplsim.splines import SplineSieve

S3 = 1 / np.sqrt(3.0)


class TestDirectionMap:
    @pytest.mark.parametrize("phi, alpha", [
        ((0.0, 0.0), (1.0, 0.0, 0.0)),
        ((S3, S3), (S3, S3, S3)),
        ((0.6, 0.0), (0.8, 0.6, 0.0)),
    ])
    def test_known_values(self, phi, alpha):
        np.testing.assert_allclose(alpha_from_phi(phi), alpha, atol=1e-15)
        np.testing.assert_allclose(phi_from_alpha(alpha), phi, atol=1e-15)

    def test_boundary_rejected(self):
        with pytest.raises(DomainError):
            alpha_from_phi([0.6, 0.8])
        with pytest.raises(DomainError):
            Theta([1.0], [1.2])

    def test_inverse_needs_unit_positive(self):
        with pytest.raises(DomainError):
            phi_from_alpha([1.0, 1.0])
        with pytest.raises(DomainError):
            phi_from_alpha([-0.8, 0.6])

    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=4))
    @settings(max_examples=200, deadline=None)
    def test_round_trip_and_norm(self, raw):
        phi = np.array(raw)
        r = np.linalg.norm(phi)
        if r >= 0.999:
            phi = phi * 0.99 / r
        a = alpha_from_phi(phi)
        assert abs(np.linalg.norm(a) - 1.0) < 1e-12
        assert a[0] > 0
        np.testing.assert_allclose(phi_from_alpha(a), phi, atol=1e-14)

    def test_component_names(self):
        assert component_names(3, 3) == ["beta1", "beta2", "beta3", "phi1", "phi2"]
        th = Theta.from_alpha([1, 2], [0.8, 0.6])
        assert th.d == 3 and th.p == 2
        np.testing.assert_allclose(Theta.from_vector(th.vector, 2).alpha, [0.8, 0.6])


class TestFamilies:
    @pytest.mark.parametrize("fam", [GAUSSIAN, BERNOULLI, POISSON])
    def test_link_inverse_and_derivative(self, fam):
        xi = np.linspace(-3, 3, 41)
        np.testing.assert_allclose(fam.link(fam.mean(xi)), xi, atol=1e-10)
        h = 1e-6
        fd = (fam.mean(xi + h) - fam.mean(xi - h)) / (2 * h)
        np.testing.assert_allclose(fam.dmu_dxi(xi), fd, rtol=1e-7, atol=1e-10)

    def test_variance_functions(self):
        mu = np.array([0.2, 0.5])
        np.testing.assert_allclose(GAUSSIAN.variance(mu), 1.0)
        np.testing.assert_allclose(BERNOULLI.variance(mu), [0.16, 0.25])
        np.testing.assert_allclose(POISSON.variance(mu), mu)

    def test_poisson_deviance_examples(self):
        assert unit_deviance("poisson", 0.0, 2.0) == pytest.approx(4.0)
        assert unit_deviance("poisson", 3.0, 3.0) == pytest.approx(0.0, abs=1e-14)
        assert unit_deviance("poisson", 4.0, 2.0) == pytest.approx(2 * (4 * np.log(2) - 2))
        assert unit_deviance("poisson", 4.0, 2.0) == pytest.approx(1.5452, abs=1e-4)

    def test_other_deviances(self):
        assert unit_deviance("gaussian", 1.5, 0.5) == pytest.approx(1.0)
        assert unit_deviance("bernoulli", 1.0, 0.5) == pytest.approx(2 * np.log(2))

    def test_mean_outside_range(self):
        with pytest.raises(DomainError):
            unit_deviance("bernoulli", 1.0, 1.0)
        with pytest.raises(DomainError):
            unit_deviance("poisson", 1.0, -1.0)
        with pytest.raises(DomainError):
            get_family("gamma")

    @given(st.sampled_from(["gaussian", "bernoulli", "poisson"]),
           st.floats(0.01, 0.99), st.integers(0, 20))
    @settings(max_examples=200, deadline=None)
    def test_deviance_nonnegative(self, fam, mu, k):
        y = float(k % 2) if fam == "bernoulli" else float(k)
        if fam == "gaussian":
            y = k / 3.0
        m = mu if fam == "bernoulli" else mu * 10
        assert unit_deviance(fam, y, m) >= 0.0


class TestLinearPredictor:
    def test_zero_parameters(self):
        blk = SubjectBlock(0, [1.0, 2.0], np.ones((2, 3)), np.eye(2))
        sieve = SplineSieve(6, -1, 1, np.zeros(6))
        th = Theta(np.zeros(3), [0.0])
        np.testing.assert_array_equal(linear_predictor(blk, th, sieve), [0.0, 0.0])

    def test_pure_linear_part(self):
        blk = SubjectBlock(0, [1.0], [[1.0, 0.0, 0.0]], [[0.3, 0.1]])
        sieve = SplineSieve(6, -1, 1, np.zeros(6))
        th = Theta([1.0, -1.0, 0.5], [0.0])
        np.testing.assert_allclose(linear_predictor(blk, th, sieve), [1.0])

    def test_constant_coefficients_shift(self):
        rng = np.random.default_rng(42)
        blk = SubjectBlock(0, np.zeros(4), rng.standard_normal((4, 3)), rng.standard_normal((4, 2)))
        sieve = SplineSieve(8, -3, 3)
        sieve = sieve.with_gamma(sieve.constant_coef(0.7))
        th = Theta([1.0, -1.0, 0.5], [0.3])
        np.testing.assert_allclose(linear_predictor(blk, th, sieve),
                                   blk.X @ th.beta + 0.7, atol=1e-12)


class TestDataset:
    def test_from_arrays_groups_by_first_appearance(self):
        ids = ["b", "a", "b", "a", "c"]
        y = np.arange(5.0)
        ds = LongitudinalDataset.from_arrays(ids, y, np.zeros((5, 1)), np.ones((5, 2)))
        assert [s.id for s in ds.subjects] == ["b", "a", "c"]
        np.testing.assert_array_equal(ds.subjects[0].y, [0.0, 2.0])
        assert ds.n == 3 and ds.n_obs == 5 and ds.d == 2

    def test_single_subject_rejected(self):
        with pytest.raises(DomainError):
            LongitudinalDataset.from_arrays([0, 0], [1.0, 2.0], np.zeros((2, 1)), np.ones((2, 2)))

    def test_mismatched_rows(self):
        with pytest.raises(ValueError):
            SubjectBlock(0, [1.0, 2.0], np.ones((3, 1)), np.ones((2, 2)))

    def test_family_check(self):
        ds = LongitudinalDataset.from_arrays([0, 1], [0.5, 1.0], np.zeros((2, 1)), np.ones((2, 2)))
        with pytest.raises(DomainError):
            ds.check_family(BERNOULLI)
        with pytest.raises(DomainError):
            ds.check_family(POISSON)
        ds.check_family(GAUSSIAN)

"""Cubic B-spline sieve: evaluation, derivatives, reproduction and dimension choice."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gplsim.errors import ConfigError
from gplsim.profile import FitConfig, fit
from gplsim.splines import SplineSieve, basis_deriv_row, basis_row, greville, select_K
from gplsim.workingcov import WorkingCovSpec

from oracles import reference_row


class TestBasis:
    def test_left_endpoint(self):
        row = basis_row(SplineSieve(6), 0.0)
        np.testing.assert_array_equal(row, [1, 0, 0, 0, 0, 0])

    def test_right_endpoint(self):
        row = basis_row(SplineSieve(6), 1.0)
        np.testing.assert_allclose(row, [0, 0, 0, 0, 0, 1], atol=1e-15)

    def test_midpoint_matches_recursion(self):
        np.testing.assert_allclose(basis_row(SplineSieve(6), 0.5), reference_row(6, 0.5),
                                   atol=1e-12)

    @pytest.mark.parametrize("K", [4, 6, 8, 10, 12])
    def test_grid_matches_recursion(self, K):
        t = np.linspace(0, 1, 37)
        got = SplineSieve(K).basis_unit(t)
        ref = np.array([reference_row(K, x) for x in t])
        np.testing.assert_allclose(got, ref, atol=1e-12)

    def test_partition_of_unity_random_points(self):
        rng = np.random.default_rng(42)
        for K in (6, 8, 10, 12):
            B = SplineSieve(K).basis_unit(rng.random(10_000))
            assert np.max(np.abs(B.sum(axis=1) - 1.0)) <= 1e-12
            assert B.min() >= 0.0

    def test_rescaling_and_clamping(self):
        s = SplineSieve(6, lo=-2.0, hi=2.0)
        np.testing.assert_allclose(basis_row(s, 0.0), reference_row(6, 0.5), atol=1e-12)
        np.testing.assert_array_equal(basis_row(s, -5.0), basis_row(s, -2.0))
        np.testing.assert_array_equal(basis_row(s, 7.0), basis_row(s, 2.0))

    def test_invalid_dimension(self):
        with pytest.raises(ConfigError):
            SplineSieve(3)
        with pytest.raises(ConfigError):
            SplineSieve(6, lo=1.0, hi=1.0)

    @given(st.integers(4, 14), st.floats(0.0, 1.0))
    @settings(max_examples=200, deadline=None)
    def test_partition_property(self, K, t):
        row = basis_row(SplineSieve(K), t)
        assert abs(row.sum() - 1.0) <= 1e-12
        assert np.count_nonzero(row) <= 4


class TestDerivative:
    @pytest.mark.parametrize("K", [6, 9, 12])
    def test_matches_central_differences(self, K):
        s = SplineSieve(K, lo=-1.5, hi=2.5)
        h = 1e-6
        for u in np.linspace(-1.4, 2.4, 97):
            fd = (basis_row(s, u + h) - basis_row(s, u - h)) / (2 * h)
            np.testing.assert_allclose(basis_deriv_row(s, u), fd, atol=1e-5)

    def test_linear_reproduction(self):
        for K in (6, 8, 12):
            s = SplineSieve(K, lo=0.0, hi=2.0)
            g = greville(s.knots)
            s = s.with_gamma(3.0 * g - 1.0)
            u = np.linspace(0, 2, 50)
            np.testing.assert_allclose(s.eta(u), 3.0 * u / 2.0 - 1.0, atol=1e-12)
            np.testing.assert_allclose(s.basis_deriv(u) @ s.gamma, 1.5, atol=1e-12)

    def test_mirrored(self):
        s = SplineSieve(8, gamma=np.arange(8.0) ** 1.5)
        t = np.linspace(0, 1, 21)
        np.testing.assert_allclose(s.mirrored().eta_unit(1 - t), s.eta_unit(t), atol=1e-12)


class TestSelectK:
    def test_single_candidate(self, small_gaussian_rep):
        data = small_gaussian_rep.dataset
        assert select_K(data, small_gaussian_rep.theta0, "gaussian", candidates=(8,)) == 8

    def test_nested_spaces_do_not_increase_deviance(self, small_gaussian_rep):
        data = small_gaussian_rep.dataset
        th = small_gaussian_rep.theta0
        cfg = FitConfig()
        f6 = fit(data, WorkingCovSpec("independence"), cfg, theta_init=th, K=6)
        f12 = fit(data, WorkingCovSpec("independence"), cfg, theta_init=f6.theta_hat, K=12)
        from gplsim.profile import ProfileProblem

        # the K=12 space contains the K=6 space (interior knots 1/3, 2/3 are in k/9)
        prob = ProfileProblem(data, f6.spec, SplineSieve(12), cfg)
        inner12 = prob.inner(f6.theta_hat.vector, 0.0, 1.0)
        assert prob.deviance(inner12.mu) <= f6.deviance + 1e-8
        assert f12.converged

    def test_zero_noise_picks_true_dimension(self, zero_noise):
        data, th, _, _ = zero_noise
        assert select_K(data, th, "gaussian", spec=WorkingCovSpec("independence")) == 6

"""Sandwich Wald intervals, the polynomial link and observation-level EL."""
import numpy as np
import pytest

from gplsim.competitors import (PolynomialBasis, gee_poly, gee_wald, naive_el, naive_el_cis,
                                naive_fit, sandwich_from)
from gplsim.errors import ConfigError, SingularBread
from gplsim.profile import FitConfig, fit
from gplsim.workingcov import WorkingCovSpec

from oracles import sandwich_vs_least_squares


class TestSandwich:
    def test_matches_cluster_robust_least_squares(self):
        cov, oracle, f, theta_ls = sandwich_vs_least_squares()
        assert f.converged
        np.testing.assert_allclose(f.theta_hat.vector, theta_ls, atol=1e-8)
        rel = np.max(np.abs(cov - oracle)) / np.max(np.abs(oracle))
        assert rel <= 1e-6

    def test_singular_bread(self):
        g = np.random.default_rng(0).standard_normal((10, 2))
        with pytest.raises(SingularBread):
            sandwich_from(g, np.array([[1.0, 1.0], [1.0, 1.0]]))

    def test_sandwich_formula(self):
        rng = np.random.default_rng(3)
        g = rng.standard_normal((30, 2))
        H = np.array([[2.0, 0.3], [0.1, 1.0]])
        cov = sandwich_from(g, H).cov
        Hi = np.linalg.inv(H)
        np.testing.assert_allclose(cov, Hi @ (g.T @ g / 30) @ Hi.T / 30, rtol=1e-12)


class TestWald:
    def test_estimate_and_symmetry(self, gaussian_rep):
        f = fit(gaussian_rep.dataset, WorkingCovSpec("ar1"))
        w = gee_wald(gaussian_rep.dataset, fit=f)
        for ci, est in zip(w.intervals(), f.theta_hat.vector):
            assert ci.estimate == est
            assert ci.hi - est == pytest.approx(est - ci.lo)
        se = w.sandwich.se[1]
        assert w.interval("beta2").length == pytest.approx(2 * 1.96 * se)
        a1 = w.interval("alpha1")
        assert a1.estimate == pytest.approx(f.alpha_hat[0])

    def test_duplicated_subjects_halve_variance(self, small_gaussian_rep):
        data = small_gaussian_rep.dataset
        twice = data.subset(list(range(data.n)) * 2, fresh_ids=True)
        cfg = FitConfig(tol_theta=1e-10)
        w1 = gee_wald(data, WorkingCovSpec("independence"), cfg, K=6)
        w2 = gee_wald(twice, WorkingCovSpec("independence"), cfg, K=6)
        np.testing.assert_allclose(w2.theta_hat.vector, w1.theta_hat.vector, atol=1e-6)
        np.testing.assert_allclose(w2.sandwich.cov, w1.sandwich.cov / 2, rtol=1e-3, atol=1e-9)

    def test_level_validation(self, small_gaussian_rep):
        with pytest.raises(ConfigError):
            gee_wald(small_gaussian_rep.dataset, level=0.0, K=6)


class TestPolynomialLink:
    def test_basis(self):
        b = PolynomialBasis(2, 0.0, 2.0, gamma=[1.0, 2.0, 3.0])
        np.testing.assert_allclose(b.basis([1.0]), [[1.0, 0.5, 0.25]])
        np.testing.assert_allclose(b.eta([1.0]), [1.0 + 1.0 + 0.75])
        np.testing.assert_allclose(b.basis_deriv([1.0]), [[0.0, 0.5, 0.5]])
        assert b.K == 2 and b.dim == 3
        with pytest.raises(ConfigError):
            PolynomialBasis(0)

    def test_fit_reports_degree(self, gaussian_rep):
        w = gee_poly(gaussian_rep.dataset, WorkingCovSpec("ar1"))
        assert w.fit.converged and w.fit.K == 2
        assert w.method == "gee_poly"


class TestObservationLevelEL:
    def test_identical_across_working_correlations(self, small_gaussian_rep):
        data = small_gaussian_rep.dataset
        th = small_gaussian_rep.theta0
        vals = [naive_el(data, th, WorkingCovSpec(c)).ell
                for c in ("independence", "ar1", "exchangeable")]
        assert vals[0] == vals[1] == vals[2]

    def test_fit_ignores_correlation(self, small_gaussian_rep):
        data = small_gaussian_rep.dataset
        a = naive_fit(data, WorkingCovSpec("ar1"))
        b = naive_fit(data, WorkingCovSpec("exchangeable"))
        np.testing.assert_array_equal(a.theta_hat.vector, b.theta_hat.vector)

    def test_needs_independence_fit(self, small_gaussian_rep):
        data = small_gaussian_rep.dataset
        f = fit(data, WorkingCovSpec("ar1"), K=6)
        with pytest.raises(ConfigError):
            naive_el_cis(data, ["beta1"], fit=f)

    def test_intervals(self, small_gaussian_rep):
        data = small_gaussian_rep.dataset
        cis = naive_el_cis(data, ["beta1", "alpha2"])
        for ci in cis:
            assert ci.method == "naive_el"
            assert ci.lo < ci.estimate < ci.hi

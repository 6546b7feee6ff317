"""Subject-resampling bands for the link function."""
import numpy as np
import pytest

from gplsim.bootstrap import cluster_bootstrap_band
from gplsim.errors import ConfigError
from gplsim.profile import fit
from gplsim.simulation import rng_for
from gplsim.workingcov import WorkingCovSpec


@pytest.fixture(scope="module")
def fitted(small_gaussian_rep):
    data = small_gaussian_rep.dataset
    return data, fit(data, WorkingCovSpec("ar1"))


class TestBand:
    def test_single_replicate_collapses(self, fitted):
        data, f = fitted
        band = cluster_bootstrap_band(data, f, B_star=1, enclose_estimate=False, workers=1)
        np.testing.assert_array_equal(band.lo, band.hi)
        np.testing.assert_array_equal(band.lo, band.curves[0])

    def test_replicate_draw_matches_stream(self, fitted):
        data, f = fitted
        band = cluster_bootstrap_band(data, f, B_star=1, enclose_estimate=False, workers=1)
        idx = rng_for(0, 0).integers(0, data.n, size=data.n)
        boot = data.subset(idx, fresh_ids=True)
        ref = fit(boot, f.spec, f.config, theta_init=f.theta_hat, basis=f.sieve_hat,
                  jac_init=f.score_jacobian)
        u = f.sieve_hat.lo + band.grid * (f.sieve_hat.hi - f.sieve_hat.lo)
        np.testing.assert_allclose(band.curves[0], ref.eta(u), rtol=0, atol=0)

    def test_reproducible_and_worker_independent(self, fitted):
        data, f = fitted
        a = cluster_bootstrap_band(data, f, B_star=12, seed=5, workers=1)
        b = cluster_bootstrap_band(data, f, B_star=12, seed=5, workers=2)
        np.testing.assert_array_equal(a.curves, b.curves)
        np.testing.assert_array_equal(a.lo, b.lo)
        c = cluster_bootstrap_band(data, f, B_star=12, seed=6, workers=1)
        assert not np.array_equal(a.curves, c.curves)

    def test_nesting(self, fitted):
        data, f = fitted
        band = cluster_bootstrap_band(data, f, B_star=40, workers=1)
        sim_lo, sim_hi = band.simultaneous
        assert np.all(band.lo <= band.eta_hat) and np.all(band.eta_hat <= band.hi)
        assert np.all(sim_lo <= band.lo + 1e-12) and np.all(band.hi <= sim_hi + 1e-12)
        assert not band.unreliable
        assert len(band.curves) == band.B_star - band.failures

    def test_higher_level_wider(self, fitted):
        data, f = fitted
        a = cluster_bootstrap_band(data, f, B_star=40, level=0.8, workers=1)
        b = cluster_bootstrap_band(data, f, B_star=40, level=0.95, workers=1)
        assert np.all(b.hi - b.lo >= a.hi - a.lo - 1e-12)

    def test_zero_noise_band_is_narrow(self, zero_noise):
        data, _, _, _ = zero_noise
        f = fit(data, WorkingCovSpec("independence"))
        band = cluster_bootstrap_band(data, f, B_star=20, workers=1)
        assert np.max(band.hi - band.lo) <= 1e-2

    def test_validation(self, fitted):
        data, f = fitted
        with pytest.raises(ConfigError):
            cluster_bootstrap_band(data, f, B_star=0)
        with pytest.raises(ConfigError):
            cluster_bootstrap_band(data, f, level=1.0)

"""Subject-level bootstrap bands for the link function."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import partial

import numpy as np

from .errors import ConfigError, GplsimError, TooManyFailures
from .parallel import pmap
from .profile import FitConfig, FitResult, fit as fit_model
from .simulation import rng_for

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.2


@dataclass(frozen=True, eq=False)
class BandResult:
    grid: np.ndarray  # rescaled index values in [0, 1]
    eta_hat: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    sup_radius: float
    B_star: int
    failures: int
    level: float
    curves: np.ndarray  # (successful replicates, L)

    @property
    def unreliable(self) -> bool:
        return self.failures > MAX_FAILURE_RATE * self.B_star

    @property
    def simultaneous(self) -> tuple[np.ndarray, np.ndarray]:
        return self.eta_hat - self.sup_radius, self.eta_hat + self.sup_radius


def _replicate(b, dataset, fit, config, seed, u_grid, warm):
    rng = rng_for(seed, b)
    idx = rng.integers(0, dataset.n, size=dataset.n)
    boot = dataset.subset(idx, fresh_ids=True)
    kw = dict(theta_init=fit.theta_hat, jac_init=fit.score_jacobian) if warm else {}
    try:
        res = fit_model(boot, fit.spec, config, basis=fit.sieve_hat, **kw)
    except GplsimError as exc:
        log.debug("replicate %d failed: %s", b, exc)
        return None
    if not res.converged:
        return None
    # alpha_1 > 0 is built into the parameterization, so the sign branch never flips
    return res.eta(u_grid)


def cluster_bootstrap_band(dataset, fit: FitResult, spec=None, config: FitConfig | None = None,
                           B_star: int = 200, level: float = 0.95, L: int = 200, seed: int = 0,
                           warm_start: bool = True, enclose_estimate: bool = True,
                           workers: int | None = None, allow_failures: bool = False) -> BandResult:
    """Percentile bands for eta from ``B_star`` subject resamples.

    Every replicate is refitted with the original sieve dimension and its
    curve evaluated at the raw index values that the original fit maps to
    the grid.  ``enclose_estimate`` widens the pointwise band where needed
    so it contains the estimate; the simultaneous radius is never smaller
    than the pointwise half-widths.  ``spec`` defaults to the fitted one.
    """
    if B_star < 1 or L < 2:
        raise ConfigError("need B_star >= 1 and L >= 2")
    if not 0.0 < level < 1.0:
        raise ConfigError("level must lie in (0, 1)")
    if spec is not None:
        from dataclasses import replace

        fit = replace(fit, spec=spec)
    config = config or fit.config
    grid = np.linspace(0.0, 1.0, L)
    sieve = fit.sieve_hat
    u_grid = sieve.lo + grid * (sieve.hi - sieve.lo)
    eta_hat = fit.eta(u_grid)
    job = partial(_replicate, dataset=dataset, fit=fit, config=config, seed=seed,
                  u_grid=u_grid, warm=warm_start)
    out = pmap(job, range(B_star), workers)
    curves = np.array([c for c in out if c is not None]).reshape(-1, L)
    failures = B_star - len(curves)
    if failures > MAX_FAILURE_RATE * B_star and not allow_failures:
        raise TooManyFailures(f"{failures} of {B_star} bootstrap refits failed")
    if len(curves) == 0:
        nan = np.full(L, np.nan)
        return BandResult(grid, eta_hat, nan, nan, np.nan, B_star, failures, level, curves)
    a = (1.0 - level) / 2
    lo = np.quantile(curves, a, axis=0)
    hi = np.quantile(curves, 1.0 - a, axis=0)
    if enclose_estimate:
        lo = np.minimum(lo, eta_hat)
        hi = np.maximum(hi, eta_hat)
    dev = np.max(np.abs(curves - eta_hat), axis=1)
    radius = float(np.quantile(dev, level))
    radius = max(radius, float(np.max(np.maximum(hi - eta_hat, eta_hat - lo))))
    return BandResult(grid, eta_hat, lo, hi, radius, B_star, failures, level, curves)

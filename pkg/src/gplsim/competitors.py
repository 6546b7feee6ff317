"""Baseline methods: observation-level EL, sandwich Wald intervals and a polynomial link."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from .el import Component, ELProfiler, ProfileCI, _chord, _observation_spec, profile_cis
from .errors import ConfigError, SingularBread
from .model import Theta, component_names
from .profile import FitConfig, FitResult, fit as fit_model
from .workingcov import WorkingCovSpec

BREAD_COND_MAX = 1e12


@dataclass(frozen=True, eq=False)
class SandwichCov:
    H_n: np.ndarray
    S_n: np.ndarray
    cov: np.ndarray

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def sandwich_from(g, H_n) -> SandwichCov:
    """``H^{-1} S H^{-T} / n`` from per-unit scores ``g`` and the bread ``H_n``."""
    g = np.asarray(g, dtype=float)
    n = g.shape[0]
    H_n = np.asarray(H_n, dtype=float)
    cond = np.linalg.cond(H_n)
    if not cond < BREAD_COND_MAX:
        raise SingularBread(f"bread matrix condition number {cond:.3g} exceeds {BREAD_COND_MAX:g}")
    S = g.T @ g / n
    Hinv = np.linalg.inv(H_n)
    cov = Hinv @ S @ Hinv.T / n
    cov = 0.5 * (cov + cov.T)
    return SandwichCov(H_n, S, cov)


def sandwich(profiler: ELProfiler, chord=None) -> SandwichCov:
    """Sandwich covariance at the fitted theta of ``profiler``."""
    if chord is None:
        chord = _chord(profiler, profiler.fit)
    if profiler.units == "subject" and profiler.fit.per_subject_g is not None:
        g = profiler.fit.per_subject_g
    else:
        g = profiler.problem.evaluate(profiler.theta_hat, profiler.rho0, profiler.disp0,
                                      profiler.gamma0).g
    return sandwich_from(g, chord)


def _z(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ConfigError("level must lie in (0, 1)")
    return 1.96 if level == 0.95 else float(stats.norm.ppf(0.5 + level / 2))


@dataclass(frozen=True, eq=False)
class WaldResult:
    fit: FitResult
    sandwich: SandwichCov
    level: float
    method: str = "gee_wald"

    @property
    def theta_hat(self) -> Theta:
        return self.fit.theta_hat

    def interval(self, component: str) -> ProfileCI:
        p, q = self.fit.theta_hat.p, len(self.fit.alpha_hat)
        comp = Component.parse(component, p, q)
        v = self.fit.theta_hat.vector
        grad = comp.gradient(v, p)
        se = float(np.sqrt(max(grad @ self.sandwich.cov @ grad, 0.0)))
        est = comp.value(v, p)
        z = _z(self.level)
        return ProfileCI(comp.name, est, est - z * se, est + z * se, self.level, self.method)

    def intervals(self, components=None) -> list:
        if components is None:
            components = component_names(self.fit.theta_hat.p, len(self.fit.alpha_hat))
        return [self.interval(c) for c in components]


def gee_wald(dataset, spec: WorkingCovSpec | None = None, config: FitConfig | None = None,
             level: float = 0.95, fit: FitResult | None = None, K=None,
             basis=None, method: str = "gee_wald") -> WaldResult:
    """Profile point estimate with sandwich-based Wald intervals.

    The bread is the central-difference derivative of ``n^{-1} sum_i g_i``
    at the estimate with the nuisances held at their fitted values.
    """
    _z(level)
    config = config or FitConfig()
    if fit is None:
        fit = fit_model(dataset, spec or WorkingCovSpec(), config, K=K, basis=basis)
    profiler = ELProfiler(dataset, fit, config, "subject", profile_nuisance=False)
    cov = sandwich(profiler)
    return WaldResult(fit, cov, level, method)


# --------------------------------------------------------------------------
# Polynomial link
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PolynomialBasis:
    """Monomials ``1, t, ..., t^degree`` in the min-max rescaled index."""

    degree: int = 2
    lo: float = 0.0
    hi: float = 1.0
    gamma: np.ndarray | None = None

    kind = "poly"

    def __post_init__(self):
        if self.degree < 1:
            raise ConfigError("polynomial degree must be >= 1")
        if not self.hi > self.lo:
            raise ConfigError("rescaling map needs hi > lo")
        if self.gamma is not None:
            g = np.array(self.gamma, dtype=float)
            if g.shape != (self.dim,):
                raise ConfigError(f"gamma must have length {self.dim}")
            g.setflags(write=False)
            object.__setattr__(self, "gamma", g)

    @property
    def dim(self) -> int:
        return self.degree + 1

    @property
    def K(self) -> int:
        # reported dimension counts the non-constant terms
        return self.degree

    def rescale(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.clip((u - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def basis_unit(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return t[:, None] ** np.arange(self.dim)[None, :]

    def basis(self, u) -> np.ndarray:
        return self.basis_unit(self.rescale(np.atleast_1d(u)))

    def basis_deriv(self, u) -> np.ndarray:
        t = self.rescale(np.atleast_1d(u))
        k = np.arange(self.dim)
        D = np.zeros((len(t), self.dim))
        D[:, 1:] = k[1:] * t[:, None] ** (k[1:] - 1)
        return D / (self.hi - self.lo)

    def eta(self, u) -> np.ndarray:
        return self.basis(u) @ self.gamma

    def eta_unit(self, t) -> np.ndarray:
        return self.basis_unit(np.clip(t, 0.0, 1.0)) @ self.gamma

    def with_range(self, lo, hi) -> "PolynomialBasis":
        return replace(self, lo=float(lo), hi=float(hi))

    def with_gamma(self, gamma) -> "PolynomialBasis":
        return replace(self, gamma=gamma)

    def constant_coef(self, c: float) -> np.ndarray:
        out = np.zeros(self.dim)
        out[0] = c
        return out


def gee_poly(dataset, spec: WorkingCovSpec | None = None, config: FitConfig | None = None,
             degree: int = 2, level: float = 0.95, theta_init: Theta | None = None) -> WaldResult:
    """The profile machinery with a polynomial link in place of the spline sieve."""
    basis = PolynomialBasis(degree)
    fit = fit_model(dataset, spec or WorkingCovSpec(), config or FitConfig(),
                    theta_init=theta_init, basis=basis)
    return gee_wald(dataset, config=config, level=level, fit=fit, method="gee_poly")


# --------------------------------------------------------------------------
# Observation-level EL
# --------------------------------------------------------------------------


def naive_fit(dataset, spec: WorkingCovSpec | None = None, config: FitConfig | None = None,
              K=None, theta_init: Theta | None = None) -> FitResult:
    """Independence fit used by the observation-level EL (ignores ``spec``'s correlation)."""
    spec = _observation_spec(spec or WorkingCovSpec())
    return fit_model(dataset, spec, config or FitConfig(), theta_init=theta_init, K=K)


def naive_el(dataset, theta: Theta, spec: WorkingCovSpec | None = None,
             config: FitConfig | None = None, fit: FitResult | None = None, K=None):
    """EL statistic treating every observation as an independent unit."""
    from .el import bel_statistic

    spec = _observation_spec(spec or (fit.spec if fit is not None else WorkingCovSpec()))
    if fit is None:
        fit = naive_fit(dataset, spec, config, K)
    return bel_statistic(dataset, theta, spec, config, fit=fit, units="observation")


def naive_el_cis(dataset, components, level: float = 0.95, spec: WorkingCovSpec | None = None,
                 config: FitConfig | None = None, fit: FitResult | None = None, K=None,
                 strict: bool = False) -> list:
    if fit is None:
        fit = naive_fit(dataset, spec, config, K)
    elif fit.spec.corr_family.value != "independence":
        raise ConfigError("the observation-level EL needs an independence fit")
    return profile_cis(dataset, fit, components, level, config, units="observation",
                       strict=strict)

"""Block empirical likelihood for theta.

Each subject contributes one estimating function ``g_i(theta)``; the
log-EL ratio is ``2 sum_i log(1 + lambda' g_i)`` with ``lambda`` solving
``sum_i g_i / (1 + lambda' g_i) = 0``.  Scalar components get intervals
by inverting the profiled statistic against a chi-square(1) cut-off.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .errors import BracketFailure, ConfigError, DomainError, GplsimError
from .model import Theta, component_names
from .profile import FitConfig, FitResult, ProfileProblem, fit as fit_model
from .splines import SplineSieve
from .workingcov import CorrFamily, WorkingCovSpec

log = logging.getLogger(__name__)

LAMBDA_MAX = 1e8


@dataclass(frozen=True, eq=False)
class ELResult:
    lambda_: np.ndarray
    ell: float
    weights: np.ndarray
    S_n: np.ndarray
    feasible: bool
    reason: str = ""

    @property
    def n(self) -> int:
        return len(self.weights)


def _as_matrix(g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    if g.ndim != 2:
        raise DomainError("g must be an (n, d) array")
    return g


def solve_lambda(g, tol: float = 1e-10, max_iter: int = 200):
    """Lagrange multiplier by damped Newton on the convex dual.

    Minimizes ``-sum log(1 + lambda' g_i)`` while keeping every
    ``1 + lambda' g_i > 1/n``.  When zero is outside the convex hull of the
    ``g_i`` the dual is unbounded; that shows up as ``|lambda|`` passing
    ``LAMBDA_MAX`` (or a stalled line search) and ``feasible`` is False.

    Returns ``(lambda, feasible)``.
    """
    g = _as_matrix(g)
    n, d = g.shape
    scale = float(np.max(np.abs(g))) if g.size else 0.0
    if scale == 0.0:
        return np.zeros(d), True
    gs = g / scale
    floor = 1.0 / n
    lam = np.zeros(d)
    stop = tol * n

    def objective(l):
        t = 1.0 + gs @ l
        if np.any(t <= floor):
            return np.inf
        return -float(np.sum(np.log(t)))

    f = objective(lam)
    for _ in range(max_iter):
        t = 1.0 + gs @ lam
        psi = gs.T @ (1.0 / t)
        if np.max(np.abs(psi)) <= stop:
            return lam / scale, True
        w = gs / t[:, None]
        H = w.T @ w
        try:
            step = np.linalg.solve(H, psi)
            if not np.all(np.isfinite(step)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, psi, rcond=None)[0]
        a = 1.0
        for _ in range(60):
            cand = lam + a * step
            fc = objective(cand)
            if fc <= f:
                break
            a *= 0.5
        else:
            break
        if np.array_equal(cand, lam):
            break
        lam, f = cand, fc
        if np.linalg.norm(lam) > LAMBDA_MAX:
            return lam / scale, False
    t = 1.0 + gs @ lam
    psi = gs.T @ (1.0 / t)
    # accept a marginally loose root, but not a divergent or stalled one
    ok = np.max(np.abs(psi)) <= 1e3 * stop and np.linalg.norm(lam) <= LAMBDA_MAX
    return lam / scale, bool(ok)


def second_moment(g) -> np.ndarray:
    g = _as_matrix(g)
    return g.T @ g / g.shape[0]


def ell_at(g) -> ELResult:
    """Log-EL ratio of the estimating functions ``g`` (rows are blocks)."""
    g = _as_matrix(g)
    n, d = g.shape
    S = second_moment(g)
    lam, feasible = solve_lambda(g)
    if not feasible:
        return ELResult(lam, np.inf, np.full(n, np.nan), S, False, "zero outside the convex hull")
    t = 1.0 + g @ lam
    ell = max(0.0, 2.0 * float(np.sum(np.log(t))))
    return ELResult(lam, ell, 1.0 / (n * t), S, True)


def quadratic_form(g) -> float:
    """Self-normalized quadratic ``n gbar' S_n^{-1} gbar``."""
    g = _as_matrix(g)
    n = g.shape[0]
    gbar = g.mean(axis=0)
    return float(n * gbar @ np.linalg.lstsq(second_moment(g), gbar, rcond=None)[0])


# --------------------------------------------------------------------------
# Statistic at a candidate theta
# --------------------------------------------------------------------------


def _infeasible(d, n, reason):
    return ELResult(np.full(d, np.nan), np.inf, np.full(n, np.nan), np.full((d, d), np.nan),
                    False, reason)


def _observation_spec(spec: WorkingCovSpec) -> WorkingCovSpec:
    return WorkingCovSpec(CorrFamily.INDEPENDENCE, 0.0, spec.family, spec.dispersion)


class ELProfiler:
    """Evaluates the EL statistic near a fitted model.

    Nuisances (gamma, rho, dispersion) start from the fit and, with
    ``profile_nuisance``, (rho, dispersion) are re-estimated once at every
    candidate theta.  ``units="observation"`` gives the naive statistic that
    treats every observation as its own block (independence weighting).
    """

    def __init__(self, dataset, fit: FitResult, config: FitConfig | None = None,
                 units: str = "subject", profile_nuisance: bool = True):
        spec = fit.spec
        if units == "observation":
            spec = _observation_spec(spec)
        self.dataset = dataset
        self.fit = fit
        self.units = units
        self.problem = ProfileProblem(dataset, spec, fit.sieve_hat, config or fit.config, units)
        self.profile_nuisance = profile_nuisance
        self.rho0 = spec.rho if units == "subject" else 0.0
        self.disp0 = fit.dispersion_hat
        self.gamma0 = fit.sieve_hat.gamma
        self.theta_hat = fit.theta_hat.vector
        self.p = dataset.p
        self.d = dataset.d

    def g(self, v) -> np.ndarray:
        state = self.problem.evaluate(np.asarray(v, dtype=float), self.rho0, self.disp0,
                                      self.gamma0, self.profile_nuisance)
        return state.g

    def result(self, v) -> ELResult:
        v = np.asarray(v, dtype=float)
        n_units = self.dataset.n if self.units == "subject" else self.dataset.n_obs
        if not self.problem.valid(v):
            return _infeasible(self.d, n_units, "phi outside the unit ball")
        try:
            g = self.g(v)
        except GplsimError as exc:
            return _infeasible(self.d, n_units, f"{type(exc).__name__}: {exc}")
        return ell_at(g)

    def ell(self, v) -> float:
        return self.result(v).ell


def bel_statistic(dataset, theta: Theta, spec: WorkingCovSpec | None = None,
                  config: FitConfig | None = None, fit: FitResult | None = None, K=None,
                  basis=None, profile_nuisance: bool = True, units: str = "subject") -> ELResult:
    """EL statistic at ``theta`` with gamma (and rho) re-profiled there.

    Starting nuisance values and the sieve come from ``fit`` when given;
    otherwise from ``spec`` with a sieve of dimension ``K`` (selected by a
    full fit when ``K`` and ``basis`` are both missing).
    """
    spec = spec or (fit.spec if fit is not None else WorkingCovSpec())
    config = config or FitConfig()
    if fit is None:
        if basis is None and K is None:
            fit = fit_model(dataset, spec, config)
        else:
            sieve = basis if basis is not None else SplineSieve(int(K))
            fit = _pseudo_fit(dataset, spec, config, sieve)
    prof = ELProfiler(dataset, fit, config, units, profile_nuisance)
    return prof.result(theta.vector)


def _pseudo_fit(dataset, spec, config, sieve) -> FitResult:
    # a FitResult shell carrying only what ELProfiler reads
    return FitResult(theta_hat=None, alpha_hat=None, sieve_hat=sieve, rho_hat=spec.rho,
                     dispersion_hat=spec.dispersion, converged=False, n_outer=0,
                     per_subject_g=None, jacobian_flat=None, mu_hat=None, spec=spec,
                     config=config, score_jacobian=None, deviance=np.nan)


# --------------------------------------------------------------------------
# Profile intervals
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Component:
    """A scalar target: a coordinate of theta or of alpha."""

    name: str
    kind: str  # "theta" or "alpha1"
    index: int

    @classmethod
    def parse(cls, name: str, p: int, q: int) -> "Component":
        names = component_names(p, q)
        if name in names:
            return cls(name, "theta", names.index(name))
        if name.startswith("alpha"):
            try:
                k = int(name[5:])
            except ValueError:
                k = -1
            if k == 1:
                return cls(name, "alpha1", -1)
            if 2 <= k <= q:
                return cls(name, "theta", p + k - 2)
        raise ConfigError(f"unknown component {name!r}; expected one of {names} "
                          f"or alpha1..alpha{q}")

    def value(self, v, p) -> float:
        if self.kind == "theta":
            return float(v[self.index])
        phi = v[p:]
        return float(np.sqrt(max(0.0, 1.0 - phi @ phi)))

    def gradient(self, v, p) -> np.ndarray:
        grad = np.zeros(len(v))
        if self.kind == "theta":
            grad[self.index] = 1.0
        else:
            a1 = self.value(v, p)
            grad[p:] = -v[p:] / max(a1, 1e-12)
        return grad

    # parameterization of {theta : value(theta) = t} by free coordinates z
    def free_start(self, v, p) -> np.ndarray:
        if self.kind == "theta":
            return np.delete(v, self.index)
        phi = v[p:]
        r = np.linalg.norm(phi)
        w = phi / r if r > 0 else np.eye(len(phi))[0]
        return np.concatenate([v[:p], w])

    def embed(self, t, z, p) -> np.ndarray:
        if self.kind == "theta":
            return np.insert(z, self.index, t)
        if not -1.0 < t <= 1.0:
            return None
        w = z[p:]
        nw = np.linalg.norm(w)
        if not nw > 0:
            return None
        r = np.sqrt(max(0.0, 1.0 - t * t))
        return np.concatenate([z[:p], w * (r / nw)])


@dataclass(frozen=True)
class ProfileCI:
    component: str
    estimate: float
    lo: float
    hi: float
    level: float
    method: str = "profile_bel"
    evaluations: int = 0
    endpoint_ell: tuple = field(default=(np.nan, np.nan))

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def bounded(self) -> bool:
        return bool(np.isfinite(self.lo) and np.isfinite(self.hi))

    def covers(self, value) -> bool:
        return bool(self.lo <= value <= self.hi)


class _Profile:
    """min over the free coordinates of ell, for one component."""

    MAX_ITER = 30

    def __init__(self, profiler: ELProfiler, comp: Component, chord: np.ndarray | None):
        self.pr = profiler
        self.comp = comp
        self.p = profiler.p
        # chord Jacobian of gbar with respect to theta
        self.H = chord
        v0 = profiler.theta_hat
        self.t_hat = comp.value(v0, self.p)
        self.z_hat = comp.free_start(v0, self.p)
        self.path = [(self.t_hat, self.z_hat)]
        self.evals = 0

    def _eval(self, t, z):
        v = self.comp.embed(t, z, self.p)
        if v is None or not self.pr.problem.valid(v):
            return np.inf, None
        self.evals += 1
        try:
            g = self.pr.g(v)
        except GplsimError:
            return np.inf, None
        res = ell_at(g)
        return res.ell, g

    def _map_jacobian(self, t, z):
        v0 = self.comp.embed(t, z, self.p)
        M = np.empty((len(v0), len(z)))
        for k in range(len(z)):
            h = 1e-7 * (1.0 + abs(z[k]))
            zp = z.copy()
            zp[k] += h
            vp = self.comp.embed(t, zp, self.p)
            M[:, k] = (vp - v0) / h
        return M

    def _warm(self, t):
        # nearest solved point on the path
        return min(self.path, key=lambda tz: abs(tz[0] - t))[1].copy()

    def __call__(self, t) -> float:
        z = self._warm(t)
        f, g = self._eval(t, z)
        if g is None:
            return np.inf
        for _ in range(self.MAX_ITER):
            gbar = g.mean(axis=0)
            S = second_moment(g)
            try:
                L = np.linalg.cholesky(S)
            except np.linalg.LinAlgError:
                break
            A = np.linalg.solve(L, self.H @ self._map_jacobian(t, z))
            b = np.linalg.solve(L, gbar)
            step = -np.linalg.lstsq(A, b, rcond=None)[0]
            a = 1.0
            improved = False
            for _ in range(12):
                fz, gz = self._eval(t, z + a * step)
                if gz is not None and fz < f:
                    improved = True
                    break
                a *= 0.5
            if not improved:
                break
            gain = f - fz
            z, f, g = z + a * step, fz, gz
            if gain <= 1e-6 * (1.0 + f) or np.max(np.abs(a * step)) <= 1e-9:
                break
        self.path.append((t, z))
        return f


def _chord(profiler: ELProfiler, fit: FitResult) -> np.ndarray:
    # derivative of the mean estimating function, nuisances fixed
    prob = profiler.problem
    J = prob.score_jacobian(profiler.theta_hat, profiler.rho0, profiler.disp0, profiler.gamma0)
    return J / (profiler.dataset.n if profiler.units == "subject" else profiler.dataset.n_obs)


def profile_ci(dataset, component: str, level: float = 0.95, spec: WorkingCovSpec | None = None,
               config: FitConfig | None = None, fit: FitResult | None = None,
               units: str = "subject", profile_nuisance: bool = True, strict: bool = True,
               se_hint: float | None = None, step_frac: float = 0.25, max_se: float = 10.0,
               xtol: float = 1e-6) -> ProfileCI:
    """Invert the profiled EL statistic for one scalar component.

    The search walks outward from the estimate in steps of ``step_frac``
    standard errors (sandwich-based unless ``se_hint`` is given) and refines
    the first crossing of the chi-square(1) cut-off with Brent's method.
    With no crossing inside ``max_se`` standard errors that side is
    unbounded; ``strict`` then raises :class:`BracketFailure`.
    """
    if not 0.0 < level < 1.0:
        raise ConfigError("level must lie in (0, 1)")
    config = config or FitConfig()
    if fit is None:
        spec = spec or WorkingCovSpec()
        if units == "observation":
            spec = _observation_spec(spec)
        fit = fit_model(dataset, spec, config)
    profiler = ELProfiler(dataset, fit, config, units, profile_nuisance)
    return _profile_ci(profiler, component, level, strict, se_hint, step_frac, max_se, xtol)


def _profile_ci(profiler: ELProfiler, component, level, strict, se_hint, step_frac, max_se,
                xtol, chord=None) -> ProfileCI:
    fit = profiler.fit
    p, q = profiler.dataset.p, profiler.dataset.q
    comp = component if isinstance(component, Component) else Component.parse(component, p, q)
    if chord is None:
        chord = _chord(profiler, fit)
    v_hat = profiler.theta_hat
    if se_hint is None:
        from .competitors import sandwich

        cov = sandwich(profiler, chord).cov
        grad = comp.gradient(v_hat, p)
        se_hint = float(np.sqrt(max(grad @ cov @ grad, 0.0)))
    if not (np.isfinite(se_hint) and se_hint > 0):
        se_hint = 0.1 * (1.0 + abs(comp.value(v_hat, p)))
    crit = float(stats.chi2.ppf(level, 1))
    prof = _Profile(profiler, comp, chord)
    t_hat = prof.t_hat
    cap = 1e8

    def f(t):
        return min(prof(t), cap) - crit

    ends, ells = [], []
    n_steps = int(round(max_se / step_frac))
    for sign in (-1.0, 1.0):
        prev = t_hat
        prof.path = prof.path[:1]
        found = None
        for k in range(1, n_steps + 1):
            t = t_hat + sign * k * step_frac * se_hint
            if f(t) > 0:
                found = (prev, t)
                break
            prev = t
        if found is None:
            ends.append(sign * np.inf)
            ells.append(np.nan)
            continue
        a, b = found
        root = optimize.brentq(f, min(a, b), max(a, b), xtol=xtol)
        ends.append(root)
        ells.append(f(root) + crit)
    lo, hi = ends
    ci = ProfileCI(comp.name, t_hat, lo, hi, level,
                   "naive_el" if profiler.units == "observation" else "profile_bel",
                   prof.evals, tuple(ells))
    if strict and not ci.bounded:
        raise BracketFailure(f"no chi-square crossing within {max_se} SE for {comp.name}",
                             lo, hi)
    return ci


def profile_cis(dataset, fit: FitResult, components, level: float = 0.95,
                config: FitConfig | None = None, units: str = "subject",
                profile_nuisance: bool = True, strict: bool = False, **kw) -> list:
    """Intervals for several components sharing one profiler and chord."""
    profiler = ELProfiler(dataset, fit, config, units, profile_nuisance)
    chord = _chord(profiler, fit)
    out = []
    for name in components:
        out.append(_profile_ci(profiler, name, level, strict, kw.get("se_hint"),
                               kw.get("step_frac", 0.25), kw.get("max_se", 10.0),
                               kw.get("xtol", 1e-6), chord))
    return out

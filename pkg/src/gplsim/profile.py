"""Profile estimating equations for the longitudinal GPLSIM.

For a fixed ``theta`` the link coefficients ``gamma`` are obtained by IRLS
on the spline-score equation (:meth:`ProfileProblem.inner`).  The outer
equation ``sum_i g_i(theta) = 0`` uses the total derivative of the
profiled mean, computed by central differences that re-run the inner fit
at each displaced ``theta``.  :func:`fit` solves it with a damped
Broyden (quasi-Newton) iteration on the merit ``|sum_i g_i|^2``.

All per-subject algebra is done on whitened quantities: with
``V_i = S_i R S_i`` and ``R = L L'``, ``G_i' V_i^{-1} r_i`` equals
``(L^{-1} S_i^{-1} G_i)' (L^{-1} S_i^{-1} r_i)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DomainError, NonConvergence, NumericalError, SingularDesign
from .model import LongitudinalDataset, Theta, alpha_from_phi, get_family
from .splines import SplineSieve
from .workingcov import (CorrFamily, WorkingCovSpec, assemble_V, inverse_cholesky,
                         update_rho_packed)

_EPS = np.finfo(float).eps


class DegenerateIndexWarning(UserWarning):
    """All index values coincide; the link is reduced to a constant."""


@dataclass(frozen=True)
class FitConfig:
    max_outer: int = 100
    max_inner: int = 50
    tol_theta: float = 1e-6
    tol_gamma: float = 1e-8
    fd_scale: float = _EPS ** (1 / 3)  # h_k = fd_scale * (1 + |theta_k|)
    jac_scale: float = _EPS ** 0.25  # step for differencing the score itself
    backtrack: float = 0.5
    max_halvings: int = 20
    update_rho: bool = True
    refresh_rescale: bool = True
    rho_df_correction: bool = True
    score_tol: float = 1e-4
    ridge_cond: float = 1e12
    ridge_scale: float = 1e-8
    phi_margin: float = 1e-6

    def __post_init__(self):
        for name in ("tol_theta", "tol_gamma", "fd_scale", "jac_scale", "score_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_outer < 1 or self.max_inner < 1 or self.max_halvings < 1:
            raise ConfigError("iteration counts must be >= 1")
        if not 0 < self.backtrack < 1:
            raise ConfigError("backtrack factor must lie in (0, 1)")


@dataclass(eq=False)
class InnerFit:
    gamma: np.ndarray
    sieve: object
    B: np.ndarray
    mu: np.ndarray
    iterations: int


@dataclass(eq=False)
class ProfileState:
    """Everything evaluated at one ``theta``."""

    theta: np.ndarray
    gamma: np.ndarray
    sieve: object
    mu: np.ndarray
    G: np.ndarray  # (N, d) profiled Jacobian
    g: np.ndarray  # (n_units, d) estimating functions
    rho: float
    dispersion: float

    @property
    def U(self) -> np.ndarray:
        return self.g.sum(axis=0)


class ProfileProblem:
    """Profiled estimating equations on one dataset for a fixed basis family.

    Parameters
    ----------
    dataset : LongitudinalDataset
    spec : WorkingCovSpec
        Family and working correlation; ``spec.rho``/``spec.dispersion`` are
        only starting values.
    basis : SplineSieve or PolynomialBasis
        Template; its ``(lo, hi)`` is used only when rescaling is frozen.
    units : {"subject", "observation"}
        Level at which estimating functions are aggregated.
    """

    def __init__(self, dataset: LongitudinalDataset, spec: WorkingCovSpec, basis,
                 config: FitConfig | None = None, units: str = "subject"):
        self.dataset = dataset
        self.data = dataset.packed
        self.spec = spec
        self.family = spec.family
        self.corr = spec.corr_family
        self.basis = basis
        self.config = config or FitConfig()
        if units not in ("subject", "observation"):
            raise ConfigError(f"unknown units {units!r}")
        if units == "observation" and self.corr is not CorrFamily.INDEPENDENCE:
            raise ConfigError("observation-level scores require independence weighting")
        self.units = units
        self.p, self.q = dataset.p, dataset.q
        self.d = dataset.d
        self.n = dataset.n
        self.N = dataset.n_obs
        self._y_scale = max(1.0, float(np.mean(self.data.y ** 2)))

    # -- parameter helpers -------------------------------------------------

    def alpha(self, v) -> np.ndarray:
        return alpha_from_phi(v[self.p:])

    def valid(self, v) -> bool:
        phi = v[self.p:]
        return float(phi @ phi) < 1.0

    def project(self, v) -> np.ndarray:
        v = np.array(v, dtype=float)
        phi = v[self.p:]
        r = np.sqrt(phi @ phi)
        cap = 1.0 - self.config.phi_margin
        if r > cap:
            v[self.p:] = phi * (cap / r)
        return v

    def index(self, v) -> np.ndarray:
        return self.data.Z @ self.alpha(v)

    def sieve_at(self, v):
        u = self.index(v)
        if not self.config.refresh_rescale:
            return self.basis, u
        lo, hi = float(u.min()), float(u.max())
        if not hi - lo > 1e-12 * max(1.0, abs(lo)):
            warnings.warn("index is constant across observations", DegenerateIndexWarning,
                          stacklevel=3)
            hi = lo + 1.0
        return self.basis.with_range(lo, hi), u

    # -- whitening -----------------------------------------------------------

    def whiten(self, M, s, rho):
        """``L^{-1} S^{-1} M`` blockwise; ``M`` is (N,) or (N, k)."""
        vec = M.ndim == 1
        W = (M / s) if vec else (M / s[:, None])
        if self.corr is CorrFamily.INDEPENDENCE or rho == 0.0:
            return W
        if vec:
            W = W[:, None]
        out = np.empty_like(W)
        for m, rows in self.data.groups:
            if m == 1:
                out[rows[:, 0]] = W[rows[:, 0]]
                continue
            Linv = inverse_cholesky(self.corr, float(rho), m)
            out[rows] = np.matmul(Linv, W[rows])
        return out[:, 0] if vec else out

    # -- inner fit -----------------------------------------------------------

    def _solve_normal(self, info, rhs):
        cfg = self.config
        try:
            cond = np.linalg.cond(info)
        except np.linalg.LinAlgError:
            cond = np.inf
        if not cond < cfg.ridge_cond:
            k = info.shape[0]
            info = info + cfg.ridge_scale * max(np.trace(info), _EPS) / k * np.eye(k)
        try:
            c = np.linalg.cholesky(info)
        except np.linalg.LinAlgError:
            raise SingularDesign("inner normal matrix is singular") from None
        return np.linalg.solve(c.T, np.linalg.solve(c, rhs))

    def inner(self, v, rho, dispersion, gamma0=None) -> InnerFit:
        """Solve the spline-score equation for gamma at fixed theta."""
        cfg = self.config
        fam = self.family
        y = self.data.y
        sieve, u = self.sieve_at(v)
        B = sieve.basis(u)
        off = self.data.X @ v[: self.p]
        if fam.linear:
            s = np.full(self.N, np.sqrt(dispersion))
            A = self.whiten(B, s, rho)
            r = self.whiten(y - off, s, rho)
            gamma = self._solve_normal(A.T @ A, A.T @ r)
            return InnerFit(gamma, sieve.with_gamma(gamma), B, fam.mean(off + B @ gamma), 1)

        if gamma0 is None:
            c = float(fam.link(np.mean(y)) - np.mean(off))
            gamma = sieve.constant_coef(c)
        else:
            gamma = np.array(gamma0, dtype=float)
        tol = cfg.tol_gamma * self.n

        def at(gam):
            xi = off + B @ gam
            mu = fam.mean(xi)
            s = np.sqrt(dispersion * fam.variance(mu))
            A = self.whiten(B * fam.dmu_dxi(xi)[:, None], s, rho)
            return mu, A, A.T @ self.whiten(y - mu, s, rho)

        mu, A, score = at(gamma)
        for it in range(cfg.max_inner + 1):
            if np.max(np.abs(score)) <= tol:
                break
            if it == cfg.max_inner:
                raise NonConvergence(f"inner IRLS did not converge in {cfg.max_inner} iterations")
            step = self._solve_normal(A.T @ A, score)
            big = np.max(np.abs(B @ step))
            if big > 10.0:
                step *= 10.0 / big
            # scoring with a mean-dependent correlated V can cycle; halve until |score| drops
            norm0 = np.linalg.norm(score)
            for _ in range(10):
                cand = at(gamma + step)
                if np.linalg.norm(cand[2]) < norm0:
                    break
                step = 0.5 * step
            gamma = gamma + step
            mu, A, score = cand
            if np.max(np.abs(step)) <= 1e-13 * (1.0 + np.max(np.abs(gamma))):
                break
        if fam.name == "bernoulli" and np.any((mu <= 1e-10) | (mu >= 1 - 1e-10)):
            raise NonConvergence("fitted means reached the clamp boundary (separation)")
        if fam.name == "poisson" and np.any(mu <= 1e-10):
            raise NonConvergence("fitted means reached the clamp boundary")
        return InnerFit(gamma, sieve.with_gamma(gamma), B, mu, it)

    # -- profiled quantities ----------------------------------------------

    def jacobian(self, v, rho, dispersion, gamma, scale=None) -> np.ndarray:
        """Central-difference total derivative of the profiled mean, (N, d)."""
        scale = self.config.fd_scale if scale is None else scale
        G = np.empty((self.N, self.d))
        for k in range(self.d):
            h = scale * (1.0 + abs(v[k]))
            vp, vm = v.copy(), v.copy()
            vp[k] += h
            vm[k] -= h
            if self.valid(vp) and self.valid(vm):
                mp = self.inner(vp, rho, dispersion, gamma).mu
                mm = self.inner(vm, rho, dispersion, gamma).mu
                G[:, k] = (mp - mm) / (2 * h)
            else:
                # next to the boundary of the phi ball: one-sided
                m0 = self.inner(v, rho, dispersion, gamma).mu
                if self.valid(vp):
                    G[:, k] = (self.inner(vp, rho, dispersion, gamma).mu - m0) / h
                else:
                    G[:, k] = (m0 - self.inner(vm, rho, dispersion, gamma).mu) / h
        return G

    def moments(self, mu, rho):
        """Pearson-residual update of (rho, dispersion)."""
        fam = self.family
        e = (self.data.y - mu) / np.sqrt(fam.variance(mu))
        n_params = self.d if self.config.rho_df_correction else 0
        rho_new, scale = update_rho_packed(
            self.corr if self.config.update_rho else CorrFamily.INDEPENDENCE,
            e, self.data.offsets, self.data.sizes, self.data.groups, n_params, rho)
        if self.corr is not CorrFamily.INDEPENDENCE and not self.config.update_rho:
            rho_new = rho
        if fam.linear and np.isfinite(scale):
            disp = max(scale, 1e-12 * self._y_scale)
        else:
            disp = 1.0
        return rho_new, disp

    def scores_from(self, inner: InnerFit, v, rho, dispersion, G=None) -> ProfileState:
        if G is None:
            G = self.jacobian(v, rho, dispersion, inner.gamma)
        fam = self.family
        s = np.sqrt(dispersion * fam.variance(inner.mu))
        Gt = self.whiten(G, s, rho)
        rt = self.whiten(self.data.y - inner.mu, s, rho)
        contrib = Gt * rt[:, None]
        if self.units == "subject":
            g = np.add.reduceat(contrib, self.data.offsets, axis=0)
        else:
            g = contrib
        return ProfileState(np.array(v, dtype=float), inner.gamma, inner.sieve, inner.mu, G, g,
                            float(rho), float(dispersion))

    def evaluate(self, v, rho, dispersion, gamma0=None, profile_nuisance=False) -> ProfileState:
        """Profiled scores at ``v``; optionally re-estimate (rho, dispersion) once."""
        v = np.asarray(v, dtype=float)
        inner = self.inner(v, rho, dispersion, gamma0)
        if profile_nuisance:
            rho2, disp2 = self.moments(inner.mu, rho)
            if rho2 != rho or disp2 != dispersion:
                rho, dispersion = rho2, disp2
                inner = self.inner(v, rho, dispersion, inner.gamma)
        return self.scores_from(inner, v, rho, dispersion)

    def score_jacobian(self, v, rho, dispersion, gamma, central=True, base=None,
                       scale=None) -> np.ndarray:
        """d (sum_i g_i) / d theta by differencing with nuisances held fixed."""
        scale = self.config.jac_scale if scale is None else scale
        v = np.asarray(v, dtype=float)
        J = np.empty((self.d, self.d))
        if base is None and not central:
            base = self.evaluate(v, rho, dispersion, gamma).U
        for k in range(self.d):
            h = scale * (1.0 + abs(v[k]))
            vp = v.copy()
            vp[k] += h
            if central:
                vm = v.copy()
                vm[k] -= h
                if not (self.valid(vp) and self.valid(vm)):
                    vp, vm = (v, vm) if not self.valid(vp) else (vp, v)
                    h = h / 2
                Up = self.evaluate(vp, rho, dispersion, gamma).U
                Um = self.evaluate(vm, rho, dispersion, gamma).U
                J[:, k] = (Up - Um) / (2 * h)
            else:
                if not self.valid(vp):
                    vp = v.copy()
                    vp[k] -= h
                    h = -h
                J[:, k] = (self.evaluate(vp, rho, dispersion, gamma).U - base) / h
        return J

    def deviance(self, mu) -> float:
        return float(np.sum(self.family.deviance(self.data.y, mu)))

    def score_ok(self, state: ProfileState) -> bool:
        # dispersion-free scale, so the threshold does not depend on sigma^2
        return np.max(np.abs(state.U)) * state.dispersion <= self.config.score_tol * self.n


# --------------------------------------------------------------------------
# Results
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FitResult:
    theta_hat: Theta
    alpha_hat: np.ndarray
    sieve_hat: object
    rho_hat: float
    dispersion_hat: float
    converged: bool
    n_outer: int
    per_subject_g: np.ndarray
    jacobian_flat: np.ndarray
    mu_hat: np.ndarray
    spec: WorkingCovSpec
    config: FitConfig
    score_jacobian: np.ndarray
    deviance: float
    merit_history: tuple = field(default=())
    units: str = "subject"
    offsets: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.sieve_hat.K

    @property
    def d(self) -> int:
        return self.theta_hat.d

    @property
    def profiled_jacobians(self) -> list:
        return np.split(self.jacobian_flat, self.offsets[1:])

    def eta(self, u):
        return self.sieve_hat.eta(u)

    def eta_unit(self, t):
        return self.sieve_hat.eta_unit(t)

    def score_norm(self) -> float:
        return float(np.max(np.abs(self.per_subject_g.sum(axis=0))))


# --------------------------------------------------------------------------
# Initialization
# --------------------------------------------------------------------------


def _glm_irls(family, y, D, max_iter=50, tol=1e-10):
    fam = family
    if fam.linear:
        return np.linalg.lstsq(D, y, rcond=None)[0]
    xi = fam.link(fam.clamp((y + np.mean(y)) / 2))
    coef = np.zeros(D.shape[1])
    for _ in range(max_iter):
        dmu = fam.dmu_dxi(xi)
        w = dmu ** 2 / fam.variance(fam.mean(xi))
        z = xi + (y - fam.mean(xi)) / dmu
        sw = np.sqrt(w)
        new, *_ = np.linalg.lstsq(D * sw[:, None], z * sw, rcond=None)
        xi = np.clip(D @ new, -30, 30)
        done = np.max(np.abs(new - coef)) < tol * (1 + np.max(np.abs(new)))
        coef = new
        if done:
            break
    return coef


def _hemisphere(q: int, count: int) -> np.ndarray:
    rng = np.random.default_rng(0)
    A = rng.standard_normal((count, q))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    A[:, 0] = np.abs(A[:, 0])
    return A


def _cap_phi(alpha, cap=0.999):
    phi = alpha[1:]
    r = np.linalg.norm(phi)
    return phi * (cap / r) if r > cap else phi


def initial_theta(dataset: LongitudinalDataset, family, basis=None, search: int = 64) -> Theta:
    """Starting value from a working GLM that ignores the index nonlinearity.

    The GLM of y on (1, X, Z) gives beta and a candidate direction.  With
    ``search > 0`` that direction competes with ``search`` fixed hemisphere
    directions: for each, a GLM of y on (X, B(u)) is fitted and the
    direction with the smallest deviance wins, its X coefficients becoming
    the starting beta.
    """
    fam = get_family(family)
    data = dataset.packed
    p, q = dataset.p, dataset.q
    D = np.column_stack([np.ones(len(data.y)), data.X, data.Z])
    coef = _glm_irls(fam, data.y, D)
    beta = coef[1 : 1 + p]
    if q == 1:
        return Theta(beta, np.zeros(0))
    c = coef[1 + p:]
    norm = np.linalg.norm(c)
    alpha = np.eye(q)[0] if not norm > 1e-10 else c / norm
    if alpha[0] < 0:
        alpha = -alpha
    if not search:
        return Theta(beta, _cap_phi(alpha))

    basis = basis if basis is not None else SplineSieve(8)
    best = (np.inf, beta, alpha)
    for a in np.vstack([alpha, np.eye(q)[0], _hemisphere(q, search)]):
        u = data.Z @ a
        lo, hi = u.min(), u.max()
        if not hi > lo:
            continue
        Bm = basis.with_range(lo, hi).basis(u)
        coef = _glm_irls(fam, data.y, np.column_stack([data.X, Bm]))
        mu = fam.mean(np.column_stack([data.X, Bm]) @ coef)
        dev = float(np.sum(fam.deviance(data.y, mu)))
        if np.isfinite(dev) and dev < best[0]:
            best = (dev, coef[:p], a)
    _, beta, alpha = best
    return Theta(beta, _cap_phi(alpha))


# --------------------------------------------------------------------------
# Outer solver
# --------------------------------------------------------------------------


def _newton_step(J, U):
    try:
        step = -np.linalg.solve(J, U)
        if np.all(np.isfinite(step)):
            return step
    except np.linalg.LinAlgError:
        pass
    return -np.linalg.lstsq(J, U, rcond=None)[0]


def solve_profile(problem: ProfileProblem, v0, rho, dispersion, jac_init=None):
    """Damped Broyden iteration for ``sum_i g_i(theta) = 0``.

    Returns ``(state, converged, n_outer, J, merit_history)``.
    """
    cfg = problem.config
    update_nuisance = problem.family.linear or (
        cfg.update_rho and problem.corr is not CorrFamily.INDEPENDENCE)
    v = problem.project(np.asarray(v0, dtype=float))
    state = problem.evaluate(v, rho, dispersion)
    if update_nuisance:
        state = problem.evaluate(v, state.rho, state.dispersion, state.gamma,
                                 profile_nuisance=True)

    if jac_init is not None:
        J, fresh = np.array(jac_init, dtype=float), False
    else:
        J = problem.score_jacobian(v, state.rho, state.dispersion, state.gamma,
                                   central=False, base=state.U)
        fresh = True
    merit = float(state.U @ state.U)
    history = [merit]
    converged = False
    it = 0
    while it < cfg.max_outer:
        it += 1
        U = state.U
        step = _newton_step(J, U)
        rel = np.linalg.norm(step) / (1.0 + np.linalg.norm(v))
        if rel < cfg.tol_theta and problem.score_ok(state):
            converged = True
            break
        lam = 1.0
        accepted = None
        for _ in range(cfg.max_halvings + 1):
            cand = problem.project(v + lam * step)
            try:
                new = problem.evaluate(cand, state.rho, state.dispersion, state.gamma)
            except (NonConvergence, SingularDesign, DomainError, NumericalError):
                new = None
            if new is not None:
                f_new = float(new.U @ new.U)
                if np.isfinite(f_new) and f_new < merit:
                    accepted = new
                    break
            lam *= cfg.backtrack
        if accepted is None:
            if problem.score_ok(state):
                converged = True
                break
            if fresh:
                break
            J = problem.score_jacobian(v, state.rho, state.dispersion, state.gamma,
                                       central=False, base=state.U)
            fresh = True
            continue
        dv = accepted.theta - v
        dU = accepted.U - U
        denom = float(dv @ dv)
        if denom > 0:
            J = J + np.outer(dU - J @ dv, dv) / denom
        fresh = False
        v = accepted.theta
        state = accepted
        merit = float(state.U @ state.U)
        history.append(merit)
        if update_nuisance:
            state = problem.evaluate(v, state.rho, state.dispersion, state.gamma,
                                     profile_nuisance=True)
            merit = float(state.U @ state.U)
        rel = np.linalg.norm(dv) / (1.0 + np.linalg.norm(v))
        if rel < cfg.tol_theta and problem.score_ok(state):
            converged = True
            break
    return state, converged, it, J, tuple(history)


def _result(problem: ProfileProblem, state: ProfileState, converged, n_outer, J, history):
    theta = Theta.from_vector(state.theta, problem.p)
    spec = replace(problem.spec, rho=state.rho, dispersion=state.dispersion)
    return FitResult(
        theta_hat=theta, alpha_hat=theta.alpha, sieve_hat=state.sieve, rho_hat=state.rho,
        dispersion_hat=state.dispersion, converged=bool(converged), n_outer=int(n_outer),
        per_subject_g=state.g, jacobian_flat=state.G, mu_hat=state.mu, spec=spec,
        config=problem.config, score_jacobian=J, deviance=problem.deviance(state.mu),
        merit_history=history, units=problem.units, offsets=problem.data.offsets)


def fit(dataset: LongitudinalDataset, spec: WorkingCovSpec | None = None,
        config: FitConfig | None = None, theta_init: Theta | None = None, K: int | None = None,
        basis=None, jac_init=None, K_candidates=(6, 8, 10, 12)) -> FitResult:
    """Profile fit of theta and the link function.

    With neither ``K`` nor ``basis`` given, K is chosen by :func:`select_K`
    over ``K_candidates``.  Non-convergence is reported through
    ``FitResult.converged`` rather than raised.
    """
    spec = spec or WorkingCovSpec()
    config = config or FitConfig()
    dataset.check_family(spec.family)
    if basis is None:
        if K is None:
            from .splines import select_K

            if theta_init is None:
                theta_init = initial_theta(dataset, spec.family)

            best, fits = select_K(dataset, theta_init, spec.family, K_candidates, spec=spec,
                                  config=config, return_fits=True)
            return fits[best]
        basis = SplineSieve(int(K))
    if theta_init is None:
        theta_init = initial_theta(dataset, spec.family, basis)
    problem = ProfileProblem(dataset, spec, basis, config)
    state, conv, it, J, hist = solve_profile(problem, theta_init.vector, spec.rho,
                                             spec.dispersion, jac_init)
    return _result(problem, state, conv, it, J, hist)


# --------------------------------------------------------------------------
# Operation-level helpers on explicit (theta, sieve) pairs
# --------------------------------------------------------------------------


def _problem_for(dataset, spec, sieve, config, units="subject"):
    return ProfileProblem(dataset, spec, sieve, config or FitConfig(), units)


def inner_fit_gamma(dataset, theta: Theta, sieve, spec: WorkingCovSpec,
                    config: FitConfig | None = None) -> np.ndarray:
    """gamma-hat(theta) with (rho, dispersion) fixed at the values in ``spec``."""
    prob = _problem_for(dataset, spec, sieve, config)
    return prob.inner(theta.vector, spec.rho, spec.dispersion).gamma


def profiled_mean(dataset, theta: Theta, spec: WorkingCovSpec, sieve,
                  config: FitConfig | None = None):
    """Per-subject profiled means and the fitted gamma."""
    prob = _problem_for(dataset, spec, sieve, config)
    inner = prob.inner(theta.vector, spec.rho, spec.dispersion)
    return np.split(inner.mu, prob.data.offsets[1:]), inner.gamma


def profiled_jacobian(dataset, theta: Theta, spec: WorkingCovSpec, sieve,
                      config: FitConfig | None = None, step_scale: float | None = None):
    """Per-subject m_i x d matrices G_i(theta)."""
    prob = _problem_for(dataset, spec, sieve, config)
    v = theta.vector
    gamma = prob.inner(v, spec.rho, spec.dispersion).gamma
    G = prob.jacobian(v, spec.rho, spec.dispersion, gamma, scale=step_scale)
    return np.split(G, prob.data.offsets[1:])


def subject_estimating_function(block, G_i, mu_i, spec: WorkingCovSpec) -> np.ndarray:
    """g_i = G_i' V_i^{-1} (y_i - mu_i) via a dense Cholesky of V_i."""
    _, L = assemble_V(spec, mu_i)
    a = np.linalg.solve(L, np.asarray(G_i, dtype=float))
    b = np.linalg.solve(L, block.y - np.asarray(mu_i, dtype=float))
    return a.T @ b

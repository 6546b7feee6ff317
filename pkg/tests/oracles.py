"""Independent reference computations used by several test modules."""
from __future__ import annotations

import numpy as np

from gplsim.competitors import PolynomialBasis, gee_wald
from gplsim.model import LongitudinalDataset, Theta
from gplsim.profile import FitConfig, fit
from gplsim.splines import uniform_knots
from gplsim.workingcov import WorkingCovSpec


def bisect_lambda(g, iters: int = 200) -> float:
    """Root of sum g/(1 + lam g) on the interval where every weight stays positive."""
    g = np.asarray(g, dtype=float)
    lo = -1.0 / g.max() * (1 - 1e-12)
    hi = -1.0 / g.min() * (1 - 1e-12)

    def psi(lam):
        return np.sum(g / (1 + lam * g))

    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        # psi is decreasing in lambda
        if psi(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def cox_de_boor(i, k, t, knots) -> float:
    """Textbook recursion for the i-th B-spline of order k (closed at the right end)."""
    if k == 1:
        if knots[i] <= t < knots[i + 1]:
            return 1.0
        if t == knots[-1] and knots[i] < knots[i + 1] == knots[-1]:
            return 1.0
        return 0.0
    out = 0.0
    d1 = knots[i + k - 1] - knots[i]
    if d1 > 0:
        out += (t - knots[i]) / d1 * cox_de_boor(i, k - 1, t, knots)
    d2 = knots[i + k] - knots[i + 1]
    if d2 > 0:
        out += (knots[i + k] - t) / d2 * cox_de_boor(i + 1, k - 1, t, knots)
    return out


def reference_row(K, t) -> np.ndarray:
    knots = uniform_knots(K)
    return np.array([cox_de_boor(i, 4, t, knots) for i in range(K)])


def linear_model_data(seed=11, n=80, m=4):
    """Heteroskedastic Gaussian data with a linear link and a two-dimensional index."""
    rng = np.random.default_rng(seed)
    N = n * m
    X = rng.standard_normal((N, 2))
    Z = rng.standard_normal((N, 2))
    y = (X @ [1.0, -0.5] + 0.3 + 0.9 * (Z @ [0.8, 0.6])
         + (0.5 + np.abs(X[:, 0])) * rng.standard_normal(N))
    ids = np.repeat(np.arange(n), m)
    return LongitudinalDataset.from_arrays(ids, y, X, Z), ids, X, Z, y


def sandwich_vs_least_squares(seed=11):
    """(package sandwich, closed-form cluster-robust OLS covariance mapped to theta, fit)."""
    data, ids, X, Z, y = linear_model_data(seed)
    cfg = FitConfig(refresh_rescale=False, tol_theta=1e-12)
    f = fit(data, WorkingCovSpec("independence"), cfg, theta_init=Theta([0.9, -0.4], [0.5]),
            basis=PolynomialBasis(1, -50.0, 50.0))
    w = gee_wald(data, config=cfg, fit=f)
    D = np.column_stack([np.ones(len(y)), X, Z])
    b = np.linalg.lstsq(D, y, rcond=None)[0]
    e = y - D @ b
    bread = np.linalg.inv(D.T @ D)
    meat = np.zeros((5, 5))
    for i in range(data.n):
        s = D[ids == i].T @ e[ids == i]
        meat += np.outer(s, s)
    cov_b = bread @ meat @ bread
    # theta = (beta, second coordinate of the normalized index coefficients)
    wv = b[3:]
    r = np.linalg.norm(wv)
    J = np.zeros((3, 5))
    J[0, 1] = J[1, 2] = 1.0
    J[2, 3:] = np.array([0.0, 1.0]) / r - wv[1] * wv / r ** 3
    theta_ls = np.array([b[1], b[2], wv[1] / r])
    return w.sandwich.cov, J @ cov_b @ J.T, f, theta_ls


def richardson_slope(dataset, theta, spec, K=8, steps=(4e-3, 2e-3, 1e-3)) -> float:
    from gplsim.profile import profiled_jacobian
    from gplsim.splines import SplineSieve

    Gs = [np.vstack(profiled_jacobian(dataset, theta, spec, SplineSieve(K), step_scale=h))
          for h in steps]
    d1 = np.linalg.norm(Gs[0] - Gs[1])
    d2 = np.linalg.norm(Gs[1] - Gs[2])
    return float(np.log2(d1 / d2))

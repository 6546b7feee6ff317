"""Cubic B-spline sieve on a min-max rescaled index.

The basis lives on [0, 1] with equally spaced interior knots and boundary
knots repeated ``order`` times.  Raw index values are mapped through
``(u - lo) / (hi - lo)`` and clamped to [0, 1]; there is no extrapolation.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError

ORDER = 4


def uniform_knots(K: int, order: int = ORDER) -> np.ndarray:
    """Open knot vector of length ``K + order`` on [0, 1]."""
    if K < order:
        raise ConfigError(f"K={K} is below the spline order {order}")
    n_interior = K - order
    interior = np.arange(1, n_interior + 1) / (n_interior + 1)
    return np.concatenate([np.zeros(order), interior, np.ones(order)])


def _nonzero_basis(x, knots, K, order):
    """Cox-de Boor triangle for all points at once.

    Returns the span index of every point and the table ``N[k]`` of the
    ``k+1`` nonzero basis values of degree ``k`` (shape (len(x), k+1)),
    for k = 0 .. order-1.
    """
    deg = order - 1
    span = np.searchsorted(knots, x, side="right") - 1
    span = np.clip(span, deg, K - 1)
    npts = len(x)
    left = np.empty((npts, order))
    right = np.empty((npts, order))
    tables = [np.ones((npts, 1))]
    N = tables[0]
    for j in range(1, order):
        left[:, j] = x - knots[span + 1 - j]
        right[:, j] = knots[span + j] - x
        new = np.zeros((npts, j + 1))
        saved = np.zeros(npts)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = N[:, r] / denom
            new[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        new[:, j] = saved
        N = new
        tables.append(N)
    return span, tables


def bspline_basis(x, knots, order: int = ORDER, deriv: int = 0) -> np.ndarray:
    """Dense matrix of B-spline values (``deriv=0``) or first derivatives (``deriv=1``).

    ``x`` must already lie in [knots[0], knots[-1]].
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    K = len(knots) - order
    deg = order - 1
    span, tables = _nonzero_basis(x, knots, K, order)
    if deriv == 0:
        vals = tables[deg]
    elif deriv == 1:
        lower = tables[deg - 1]  # degree deg-1 values on basis indices span-deg+1 .. span
        vals = np.zeros((len(x), order))
        for r in range(order):
            i = span - deg + r
            if r > 0:
                den = knots[i + deg] - knots[i]
                vals[:, r] += deg * lower[:, r - 1] / den
            if r < deg:
                den = knots[i + deg + 1] - knots[i + 1]
                vals[:, r] -= deg * lower[:, r] / den
    else:
        raise ValueError("only deriv 0 or 1 is supported")
    out = np.zeros((len(x), K))
    cols = span[:, None] - deg + np.arange(order)[None, :]
    np.put_along_axis(out, cols, vals, axis=1)
    return out


def greville(knots, order: int = ORDER) -> np.ndarray:
    """Greville abscissae; spline coefficients that reproduce the identity."""
    K = len(knots) - order
    deg = order - 1
    return np.array([knots[j + 1 : j + 1 + deg].mean() for j in range(K)])


@dataclass(frozen=True, eq=False)
class SplineSieve:
    """Cubic B-spline space of dimension ``K`` plus the index rescaling map.

    Attributes
    ----------
    K : int
        Basis dimension (``K >= order``).
    lo, hi : float
        Raw index range mapped onto [0, 1].
    gamma : ndarray or None
        Fitted coefficients, length ``K``.
    """

    K: int
    lo: float = 0.0
    hi: float = 1.0
    gamma: np.ndarray | None = None
    order: int = ORDER

    def __post_init__(self):
        if self.K < self.order:
            raise ConfigError(f"K={self.K} is below the spline order {self.order}")
        if not self.hi > self.lo:
            raise ConfigError("rescaling map needs hi > lo")
        if self.gamma is not None:
            g = np.array(self.gamma, dtype=float)
            if g.shape != (self.K,):
                raise ConfigError(f"gamma must have length {self.K}")
            g.setflags(write=False)
            object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "_knots", uniform_knots(self.K, self.order))

    kind = "spline"

    @property
    def dim(self) -> int:
        return self.K

    @property
    def knots(self) -> np.ndarray:
        return self._knots

    def rescale(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.clip((u - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def basis_unit(self, t) -> np.ndarray:
        """Basis at already rescaled points ``t`` in [0, 1]."""
        return bspline_basis(t, self._knots, self.order)

    def basis(self, u) -> np.ndarray:
        return self.basis_unit(self.rescale(np.atleast_1d(u)))

    def basis_deriv(self, u) -> np.ndarray:
        """d B / d u at raw index values (chain rule through the rescaling)."""
        t = self.rescale(np.atleast_1d(u))
        return bspline_basis(t, self._knots, self.order, deriv=1) / (self.hi - self.lo)

    def eta(self, u) -> np.ndarray:
        return self.basis(u) @ self.gamma

    def eta_unit(self, t) -> np.ndarray:
        return self.basis_unit(np.clip(t, 0.0, 1.0)) @ self.gamma

    def with_range(self, lo, hi) -> "SplineSieve":
        return replace(self, lo=float(lo), hi=float(hi))

    def with_gamma(self, gamma) -> "SplineSieve":
        return replace(self, gamma=gamma)

    def constant_coef(self, c: float) -> np.ndarray:
        # partition of unity: c * ones reproduces the constant c
        return np.full(self.K, float(c))

    def mirrored(self) -> "SplineSieve":
        """Same curve expressed in the reflected coordinate 1 - t (knots are symmetric)."""
        return self.with_gamma(None if self.gamma is None else self.gamma[::-1].copy())


def basis_row(sieve: SplineSieve, u: float) -> np.ndarray:
    return sieve.basis(np.array([u], dtype=float))[0]


def basis_deriv_row(sieve: SplineSieve, u: float) -> np.ndarray:
    return sieve.basis_deriv(np.array([u], dtype=float))[0]


def design_matrix(block, theta, sieve) -> np.ndarray:
    """Rows ``B(z_ij' alpha)`` for one subject block."""
    u = block.Z @ theta.alpha
    return sieve.basis(u)


def select_K(dataset, theta_init, family, candidates=(6, 8, 10, 12), spec=None, config=None,
             return_fits=False):
    """Pick the sieve dimension minimizing deviance + K log(N).

    Each candidate is fitted with the full profile algorithm; ties go to the
    smaller K.  With ``return_fits`` the dict of successful fits is returned
    alongside the chosen K.
    """
    from .errors import GplsimError
    from .model import get_family
    from .profile import fit
    from .workingcov import WorkingCovSpec

    candidates = sorted(set(int(k) for k in candidates))
    if not candidates:
        raise ConfigError("no K candidates given")
    if any(k < ORDER for k in candidates):
        raise ConfigError(f"K candidates must be >= {ORDER}")
    family = get_family(family)
    if spec is None:
        spec = WorkingCovSpec(family=family)
    log_n = np.log(dataset.n_obs)
    fits, scores = {}, {}
    for K in candidates:
        try:
            res = fit(dataset, spec, config, theta_init=theta_init, K=K)
        except GplsimError:
            continue
        fits[K] = res
        scores[K] = res.deviance + K * log_n
    if not scores:
        raise ConfigError("every K candidate failed to fit")
    best = min(scores, key=lambda k: (scores[k], k))
    return (best, fits) if return_fits else best

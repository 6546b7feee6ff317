"""Working correlation families, subject covariances and moment updates of rho."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .errors import DomainError, NumericalError
from .model import GAUSSIAN, OutcomeFamily, get_family

RHO_EPS = 1e-6


class CorrFamily(str, enum.Enum):
    INDEPENDENCE = "independence"
    EXCHANGEABLE = "exchangeable"
    AR1 = "ar1"

    @property
    def short(self) -> str:
        return {"independence": "ind", "exchangeable": "exc", "ar1": "ar1"}[self.value]


_ALIASES = {
    "ind": CorrFamily.INDEPENDENCE, "independence": CorrFamily.INDEPENDENCE,
    "exc": CorrFamily.EXCHANGEABLE, "exchangeable": CorrFamily.EXCHANGEABLE,
    "exch": CorrFamily.EXCHANGEABLE,
    "ar1": CorrFamily.AR1, "ar(1)": CorrFamily.AR1,
}


def get_corr_family(name) -> CorrFamily:
    if isinstance(name, CorrFamily):
        return name
    try:
        return _ALIASES[str(name).lower()]
    except KeyError:
        raise DomainError(f"unknown working correlation {name!r}") from None


def rho_bounds(corr: CorrFamily, m_max: int) -> tuple[float, float]:
    """Open interval of valid rho values, shrunk by ``RHO_EPS`` on both sides."""
    if corr is CorrFamily.INDEPENDENCE:
        return 0.0, 0.0
    if corr is CorrFamily.EXCHANGEABLE and m_max > 1:
        return -1.0 / (m_max - 1) + RHO_EPS, 1.0 - RHO_EPS
    return -1.0 + RHO_EPS, 1.0 - RHO_EPS


@dataclass(frozen=True)
class WorkingCovSpec:
    """Outcome family plus working correlation ``R(rho)`` and dispersion."""

    corr_family: CorrFamily = CorrFamily.INDEPENDENCE
    rho: float = 0.0
    family: OutcomeFamily = field(default=GAUSSIAN)
    dispersion: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "corr_family", get_corr_family(self.corr_family))
        object.__setattr__(self, "family", get_family(self.family))
        if self.corr_family is CorrFamily.INDEPENDENCE:
            object.__setattr__(self, "rho", 0.0)
        if not self.dispersion > 0:
            raise DomainError("dispersion must be positive")

    def with_rho(self, rho) -> "WorkingCovSpec":
        return replace(self, rho=float(rho))

    def with_dispersion(self, dispersion) -> "WorkingCovSpec":
        return replace(self, dispersion=float(dispersion))

    def check_rho(self, m: int) -> None:
        if self.corr_family is CorrFamily.INDEPENDENCE or m <= 1:
            return
        lo, hi = rho_bounds(self.corr_family, m)
        if not (lo - RHO_EPS) < self.rho < (hi + RHO_EPS):
            raise DomainError(f"rho={self.rho} invalid for {self.corr_family.value} with m={m}")


@lru_cache(maxsize=4096)
def _corr(corr: CorrFamily, rho: float, m: int) -> np.ndarray:
    if corr is CorrFamily.INDEPENDENCE:
        R = np.eye(m)
    elif corr is CorrFamily.EXCHANGEABLE:
        R = np.full((m, m), rho)
        np.fill_diagonal(R, 1.0)
    else:
        lags = np.abs(np.subtract.outer(np.arange(m), np.arange(m)))
        R = rho ** lags.astype(float)
    R.setflags(write=False)
    return R


def correlation_matrix(spec: WorkingCovSpec, m: int) -> np.ndarray:
    if m < 1:
        raise DomainError("cluster size must be >= 1")
    spec.check_rho(m)
    R = _corr(spec.corr_family, float(spec.rho), int(m))
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise DomainError(f"R(rho={spec.rho}) is not positive definite for m={m}") from None
    return R.copy()


@lru_cache(maxsize=4096)
def inverse_cholesky(corr: CorrFamily, rho: float, m: int) -> np.ndarray:
    """``L^{-1}`` with ``R = L L'``; whitening a block is ``L^{-1} (r / s)``."""
    R = _corr(corr, rho, m)
    L = np.linalg.cholesky(R)
    Linv = np.linalg.solve(L, np.eye(m))
    Linv.setflags(write=False)
    return Linv


def assemble_V(spec: WorkingCovSpec, mu) -> tuple[np.ndarray, np.ndarray]:
    """``V = dispersion * A^{1/2} R A^{1/2}`` and its lower Cholesky factor."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    fam = spec.family
    R = correlation_matrix(spec, len(mu))
    a = np.sqrt(spec.dispersion * fam.variance(fam.clamp(mu)))
    V = a[:, None] * R * a[None, :]
    try:
        L = np.linalg.cholesky(V)
    except np.linalg.LinAlgError:
        raise NumericalError("working covariance is not positive definite") from None
    return V, L


def pearson_scale(residuals, n_params: int = 0) -> float:
    e = np.concatenate([np.asarray(r, dtype=float) for r in residuals])
    denom = len(e) - n_params
    if denom <= 0:
        return float("nan")
    return float(e @ e / denom)


def update_rho(spec: WorkingCovSpec, residuals, n_params: int = 0) -> float:
    """Method-of-moments rho from per-subject Pearson residual vectors.

    Both correlated families normalize by the Pearson scale
    ``sum(e^2) / (N - n_params)``; ``n_params`` is the degrees-of-freedom
    correction.  Degenerate denominators return ``spec.rho`` unchanged and
    the estimate is clipped into the valid range.
    """
    corr = spec.corr_family
    if corr is CorrFamily.INDEPENDENCE:
        return 0.0
    blocks = [np.asarray(r, dtype=float) for r in residuals]
    scale = pearson_scale(blocks, n_params)
    if not np.isfinite(scale) or scale <= 0:
        return spec.rho
    if corr is CorrFamily.EXCHANGEABLE:
        num = sum(0.5 * (b.sum() ** 2 - b @ b) for b in blocks)
        pairs = sum(len(b) * (len(b) - 1) / 2 for b in blocks)
    else:
        num = sum(b[:-1] @ b[1:] for b in blocks)
        pairs = sum(len(b) - 1 for b in blocks)
    denom = (pairs - n_params) * scale
    if denom <= 0:
        return spec.rho
    m_max = max(len(b) for b in blocks)
    lo, hi = rho_bounds(corr, m_max)
    return float(np.clip(num / denom, lo, hi))


def update_rho_packed(corr: CorrFamily, e: np.ndarray, offsets, sizes, groups,
                      n_params: int, previous: float) -> tuple[float, float]:
    """Vectorized :func:`update_rho` on flat, subject-contiguous residuals.

    Returns ``(rho, pearson_scale)``.
    """
    N = len(e)
    denom_scale = N - n_params
    scale = float(e @ e / denom_scale) if denom_scale > 0 else float("nan")
    if corr is CorrFamily.INDEPENDENCE:
        return 0.0, scale
    if not np.isfinite(scale) or scale <= 0:
        return previous, scale
    if corr is CorrFamily.EXCHANGEABLE:
        sums = np.add.reduceat(e, offsets)
        sq = np.add.reduceat(e * e, offsets)
        num = 0.5 * float(np.sum(sums * sums - sq))
        pairs = float(np.sum(sizes * (sizes - 1) / 2))
    else:
        num = 0.0
        for m, rows in groups:
            if m > 1:
                blk = e[rows]
                num += float(np.sum(blk[:, :-1] * blk[:, 1:]))
        pairs = float(np.sum(sizes - 1))
    denom = (pairs - n_params) * scale
    if denom <= 0:
        return previous, scale
    lo, hi = rho_bounds(corr, int(np.max(sizes)))
    return float(np.clip(num / denom, lo, hi)), scale

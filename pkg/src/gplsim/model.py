"""Data model, index-direction parameterization and outcome families.

Data are stored blockwise per subject.  Estimators work on a packed view
(:attr:`LongitudinalDataset.packed`) in which all observations are
concatenated subject by subject and subjects are grouped by cluster size,
so per-subject linear algebra can be batched.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import expit, logit

from .errors import DomainError

MU_EPS = 1e-10
_XI_MAX = 700.0


def _readonly(a, ndim, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    if a.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SubjectBlock:
    """All visits of one subject: response ``y`` (m,), ``X`` (m, p), ``Z`` (m, q)."""

    id: object
    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        y = _readonly(self.y, 1)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(len(y), 0)
        X = _readonly(X, 2)
        Z = _readonly(self.Z, 2)
        if len(y) < 1:
            raise ValueError(f"subject {self.id!r} has no observations")
        if X.shape[0] != len(y) or Z.shape[0] != len(y):
            raise ValueError(f"subject {self.id!r}: row counts of y, X, Z differ")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Z", Z)

    @property
    def m(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class PackedData:
    y: np.ndarray  # (N,)
    X: np.ndarray  # (N, p)
    Z: np.ndarray  # (N, q)
    sizes: np.ndarray  # (n,)
    offsets: np.ndarray  # (n,) start row of each subject
    subject_of: np.ndarray  # (N,) subject position of each row
    groups: tuple  # ((m, rows (n_m, m)), ...) rows index into the flat arrays


class LongitudinalDataset:
    """Independent subjects with repeated measurements.

    Parameters
    ----------
    subjects : sequence of SubjectBlock
        At least two subjects with unique ids and identical ``p``/``q``.
    """

    def __init__(self, subjects: Sequence[SubjectBlock]):
        subjects = tuple(subjects)
        if len(subjects) < 2:
            raise DomainError("a dataset needs at least two subjects")
        p, q = subjects[0].X.shape[1], subjects[0].Z.shape[1]
        if q < 1:
            raise DomainError("at least one index covariate is required")
        seen = set()
        for s in subjects:
            if s.X.shape[1] != p or s.Z.shape[1] != q:
                raise DomainError(f"subject {s.id!r}: column counts differ from the first subject")
            if s.id in seen:
                raise DomainError(f"duplicate subject id {s.id!r}")
            seen.add(s.id)
        self.subjects = subjects
        self.p = p
        self.q = q

    @classmethod
    def from_arrays(cls, ids, y, X, Z) -> "LongitudinalDataset":
        """Build from flat arrays; rows are grouped by ``ids`` in order of first appearance."""
        ids = np.asarray(ids)
        y = np.asarray(y, dtype=float)
        X = np.asarray(X, dtype=float).reshape(len(y), -1)
        Z = np.asarray(Z, dtype=float).reshape(len(y), -1)
        _, first, inverse = np.unique(ids, return_index=True, return_inverse=True)
        order = np.argsort(first)
        blocks = []
        for u in order:
            rows = np.flatnonzero(inverse == u)
            sid = ids[rows[0]]
            blocks.append(SubjectBlock(sid.item() if hasattr(sid, "item") else sid,
                                       y[rows], X[rows], Z[rows]))
        return cls(blocks)

    def __len__(self):
        return len(self.subjects)

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def d(self) -> int:
        return self.p + self.q - 1

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.array([s.m for s in self.subjects], dtype=int)

    @property
    def n_obs(self) -> int:
        return int(self.sizes.sum())

    @cached_property
    def packed(self) -> PackedData:
        sizes = self.sizes
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)
        y = np.concatenate([s.y for s in self.subjects])
        X = np.vstack([s.X for s in self.subjects])
        Z = np.vstack([s.Z for s in self.subjects])
        groups = []
        for m in np.unique(sizes):
            members = np.flatnonzero(sizes == m)
            rows = offsets[members][:, None] + np.arange(m)[None, :]
            groups.append((int(m), rows))
        subject_of = np.repeat(np.arange(len(sizes)), sizes)
        for a in (y, X, Z, offsets, subject_of):
            a.setflags(write=False)
        return PackedData(y, X, Z, sizes, offsets, subject_of, tuple(groups))

    def subset(self, positions, fresh_ids: bool = False) -> "LongitudinalDataset":
        """Subjects at ``positions`` (repeats allowed when ``fresh_ids``)."""
        blocks = []
        for k, i in enumerate(positions):
            s = self.subjects[int(i)]
            sid = k if fresh_ids else s.id
            blocks.append(SubjectBlock(sid, s.y, s.X, s.Z))
        return LongitudinalDataset(blocks)

    def check_family(self, family: "OutcomeFamily") -> None:
        y = self.packed.y
        if not family.valid_response(y):
            raise DomainError(f"responses are not valid for the {family.name} family")


# --------------------------------------------------------------------------
# Parameterization
# --------------------------------------------------------------------------


def alpha_from_phi(phi) -> np.ndarray:
    """Map ``phi`` in the open unit ball to the unit vector (sqrt(1-|phi|^2), phi)."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    r2 = float(phi @ phi)
    if not r2 < 1.0:
        raise DomainError(f"|phi| must be < 1, got {np.sqrt(r2):.6g}")
    return np.concatenate([[np.sqrt(1.0 - r2)], phi])


def phi_from_alpha(alpha) -> np.ndarray:
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if abs(np.linalg.norm(alpha) - 1.0) > 1e-8:
        raise DomainError("alpha must have unit norm")
    if not alpha[0] > 0:
        raise DomainError("alpha must have a positive first coordinate")
    return alpha[1:].copy()


@dataclass(frozen=True, eq=False)
class Theta:
    """Finite-dimensional parameter (beta, phi); ``alpha`` is derived."""

    beta: np.ndarray
    phi: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        beta = _readonly(np.atleast_1d(np.asarray(self.beta, dtype=float)), 1)
        phi = _readonly(np.atleast_1d(np.asarray(self.phi, dtype=float)), 1)
        if not float(phi @ phi) < 1.0:
            raise DomainError("|phi| must be strictly less than 1")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "phi", phi)

    @property
    def alpha(self) -> np.ndarray:
        return alpha_from_phi(self.phi)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.beta, self.phi])

    @property
    def p(self) -> int:
        return len(self.beta)

    @property
    def d(self) -> int:
        return len(self.beta) + len(self.phi)

    @classmethod
    def from_vector(cls, v, p: int) -> "Theta":
        v = np.asarray(v, dtype=float)
        return cls(v[:p], v[p:])

    @classmethod
    def from_alpha(cls, beta, alpha) -> "Theta":
        return cls(beta, phi_from_alpha(alpha))


def component_names(p: int, q: int) -> list[str]:
    """Names of the entries of the theta vector: beta1..betap, phi1..phi(q-1)."""
    return [f"beta{j + 1}" for j in range(p)] + [f"phi{j + 1}" for j in range(q - 1)]


# --------------------------------------------------------------------------
# Outcome families
# --------------------------------------------------------------------------


class OutcomeFamily:
    """Link, inverse link, variance function and unit deviance of a family."""

    name = "base"
    linear = False

    def link(self, mu):
        raise NotImplementedError

    def mean(self, xi):
        """Inverse link, clamped to the family's safe mean range."""
        raise NotImplementedError

    def dmu_dxi(self, xi):
        raise NotImplementedError

    def variance(self, mu):
        raise NotImplementedError

    def clamp(self, mu):
        return mu

    def valid_response(self, y) -> bool:
        return bool(np.all(np.isfinite(y)))

    def valid_mean(self, mu) -> bool:
        return bool(np.all(np.isfinite(mu)))

    def deviance(self, y, mu):
        """Elementwise unit deviance (vectorized, no domain checks)."""
        raise NotImplementedError

    def __repr__(self):
        return f"<OutcomeFamily {self.name}>"


class Gaussian(OutcomeFamily):
    name = "gaussian"
    linear = True

    def link(self, mu):
        return np.asarray(mu, dtype=float)

    def mean(self, xi):
        return np.asarray(xi, dtype=float)

    def dmu_dxi(self, xi):
        return np.ones_like(np.asarray(xi, dtype=float))

    def variance(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def deviance(self, y, mu):
        return (np.asarray(y) - mu) ** 2


class Bernoulli(OutcomeFamily):
    name = "bernoulli"

    def link(self, mu):
        return logit(self.clamp(mu))

    def clamp(self, mu):
        return np.clip(mu, MU_EPS, 1.0 - MU_EPS)

    def mean(self, xi):
        return self.clamp(expit(xi))

    def dmu_dxi(self, xi):
        mu = self.mean(xi)
        return mu * (1.0 - mu)

    def variance(self, mu):
        mu = self.clamp(mu)
        return mu * (1.0 - mu)

    def valid_response(self, y):
        return bool(np.all((y == 0) | (y == 1)))

    def valid_mean(self, mu):
        return bool(np.all((mu > 0) & (mu < 1)))

    def deviance(self, y, mu):
        mu = self.clamp(mu)
        return -2.0 * (y * np.log(mu) + (1.0 - y) * np.log1p(-mu))


class Poisson(OutcomeFamily):
    name = "poisson"

    def link(self, mu):
        return np.log(self.clamp(mu))

    def clamp(self, mu):
        return np.maximum(mu, MU_EPS)

    def mean(self, xi):
        return self.clamp(np.exp(np.minimum(xi, _XI_MAX)))

    def dmu_dxi(self, xi):
        return self.mean(xi)

    def variance(self, mu):
        return self.clamp(mu)

    def valid_response(self, y):
        return bool(np.all((y >= 0) & (y == np.round(y))))

    def valid_mean(self, mu):
        return bool(np.all(mu > 0))

    def deviance(self, y, mu):
        y = np.asarray(y, dtype=float)
        mu = self.clamp(mu)
        with np.errstate(divide="ignore", invalid="ignore"):
            ylog = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu), 0.0)
        return 2.0 * (ylog - (y - mu))


GAUSSIAN = Gaussian()
BERNOULLI = Bernoulli()
POISSON = Poisson()

FAMILIES = {f.name: f for f in (GAUSSIAN, BERNOULLI, POISSON)}


def get_family(family) -> OutcomeFamily:
    if isinstance(family, OutcomeFamily):
        return family
    try:
        return FAMILIES[str(family).lower()]
    except KeyError:
        raise DomainError(f"unknown family {family!r}; expected one of {sorted(FAMILIES)}") from None


def unit_deviance(family, y: float, mu: float) -> float:
    """Unit deviance d(y, mu) >= 0 of a single observation."""
    family = get_family(family)
    if not family.valid_mean(np.asarray(mu, dtype=float)):
        raise DomainError(f"mean {mu!r} outside the {family.name} mean range")
    return float(family.deviance(np.asarray(y, dtype=float), np.asarray(mu, dtype=float)))


def linear_predictor(block: SubjectBlock, theta: Theta, sieve) -> np.ndarray:
    """xi = X beta + B(theta) gamma for one subject."""
    from .splines import design_matrix

    B = design_matrix(block, theta, sieve)
    return block.X @ theta.beta + B @ sieve.gamma

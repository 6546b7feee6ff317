"""Monte Carlo designs, metrics and the replication driver."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .model import LongitudinalDataset, SubjectBlock, Theta, get_family

log = logging.getLogger(__name__)

ALPHA0 = np.ones(3) / np.sqrt(3.0)
BETA0 = np.array([1.0, -1.0, 0.5])

_DESIGN_SETS = {
    "n": {100, 200},
    "m": {5},
    "family": {"gaussian", "bernoulli", "poisson"},
    "rho_latent": {0.0, 0.3, 0.6},
    "kappa": {0.0, 0.3},
}


def eta0(t):
    return np.sin(2 * np.pi * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class SimDesign:
    """One cell of the simulation grid."""

    n: int = 100
    m: int = 5
    family: str = "gaussian"
    rho_latent: float = 0.0
    kappa: float = 0.0
    sigma_b: float = 0.6
    sigma_eps: float = 1.0
    beta0: tuple = tuple(BETA0)
    alpha0: tuple = tuple(ALPHA0)
    B: int = 200
    seed: int = 2024
    heavy_tails: bool = False
    override: bool = False

    def __post_init__(self):
        object.__setattr__(self, "family", get_family(self.family).name)
        if self.override:
            return
        for name, allowed in _DESIGN_SETS.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name}={getattr(self, name)!r} outside the design set "
                                  f"{sorted(allowed)}; pass override=True to allow it")

    @property
    def theta0(self) -> Theta:
        return Theta.from_alpha(np.array(self.beta0), np.array(self.alpha0))


@dataclass(frozen=True, eq=False)
class Replication:
    dataset: LongitudinalDataset
    theta0: Theta
    index_range: tuple  # (min, max) of the true index used for rescaling
    rep: int

    def eta0_unit(self, t):
        return eta0(t)


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Independent substream for ``(seed, key...)``; order of use does not matter."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def toeplitz_corr(k: int, kappa: float) -> np.ndarray:
    idx = np.arange(k)
    return float(kappa) ** np.abs(np.subtract.outer(idx, idx)).astype(float)


def generate_replication(design: SimDesign, rep: int) -> Replication:
    """Draw one dataset from the design; fully determined by ``(design.seed, rep)``."""
    rng = rng_for(design.seed, rep)
    n, m = design.n, design.m
    beta0 = np.asarray(design.beta0, dtype=float)
    alpha0 = np.asarray(design.alpha0, dtype=float)
    p, q = len(beta0), len(alpha0)
    N = n * m
    C = np.linalg.cholesky(toeplitz_corr(p + q, design.kappa))
    if design.heavy_tails:
        E = rng.standard_t(5, size=(N, p + q)) / np.sqrt(5.0 / 3.0)
    else:
        E = rng.standard_normal((N, p + q))
    W = E @ C.T
    X, Z = W[:, :p], W[:, p:]
    u0 = Z @ alpha0
    lo, hi = float(u0.min()), float(u0.max())
    t0 = (u0 - lo) / (hi - lo)
    xi0 = X @ beta0 + eta0(t0)
    Rb = toeplitz_corr(m, design.rho_latent)
    b = (rng.standard_normal((n, m)) @ np.linalg.cholesky(Rb).T * design.sigma_b).ravel()
    fam = design.family
    if fam == "gaussian":
        y = xi0 + b + design.sigma_eps * rng.standard_normal(N)
    elif fam == "bernoulli":
        pr = 1.0 / (1.0 + np.exp(-(xi0 + b)))
        y = (rng.random(N) < pr).astype(float)
    else:
        y = rng.poisson(np.exp(xi0 + b)).astype(float)
    blocks = [SubjectBlock(i, y[i * m:(i + 1) * m], X[i * m:(i + 1) * m], Z[i * m:(i + 1) * m])
              for i in range(n)]
    return Replication(LongitudinalDataset(blocks), design.theta0, (lo, hi), rep)


def angle_error(alpha_hat, alpha0) -> float:
    """arccos |alpha_hat' alpha0| in [0, pi/2]."""
    c = abs(float(np.dot(alpha_hat, alpha0)))
    return float(np.arccos(min(1.0, c)))


def ise(eta_hat, eta_true) -> float:
    eta_hat = np.asarray(eta_hat, dtype=float)
    eta_true = np.asarray(eta_true, dtype=float)
    if eta_hat.shape != eta_true.shape:
        raise ValueError(f"grid length mismatch: {eta_hat.shape} vs {eta_true.shape}")
    return float(np.mean((eta_hat - eta_true) ** 2))


def unit_grid(L: int = 200) -> np.ndarray:
    return np.linspace(0.0, 1.0, L)


# --------------------------------------------------------------------------
# Replication driver
# --------------------------------------------------------------------------

METHODS = ("profile_bel", "naive_el", "gee_wald", "gee_poly")
DEFAULT_TARGETS = ("beta1", "beta2", "alpha2")


@dataclass(eq=False)
class Record:
    """Outcome of one method on one replication."""

    method: str
    working_corr: str
    rep: int
    converged: bool
    theta: np.ndarray | None = None
    alpha: np.ndarray | None = None
    ise: float = float("nan")
    K: int | None = None
    cis: dict = field(default_factory=dict)  # component -> (lo, hi)
    ell_truth: float = float("nan")
    error: str = ""


def _truth_value(name: str, design: SimDesign) -> float:
    if name.startswith("beta"):
        return float(design.beta0[int(name[4:]) - 1])
    if name.startswith("alpha"):
        return float(design.alpha0[int(name[5:]) - 1])
    if name.startswith("phi"):
        return float(design.alpha0[int(name[3:])])
    raise ConfigError(f"unknown target {name!r}")


def _record(method, wc, rep, res, grid, K=None) -> Record:
    eta_hat = res.eta_unit(grid)
    return Record(method, wc, rep, bool(res.converged), res.theta_hat.vector.copy(),
                  res.alpha_hat.copy(), ise(eta_hat, eta0(grid)), K if K is not None else res.K)


def run_replication(design: SimDesign, rep: int, working_corrs=("ar1",), methods=METHODS,
                    targets=DEFAULT_TARGETS, inference: bool = True, wilks: bool = False,
                    level: float = 0.95, K_candidates=(6, 8, 10, 12), config=None) -> list:
    """All requested methods on replication ``rep``; failures become records with ``error``."""
    from .competitors import gee_poly, gee_wald, naive_el_cis, naive_fit
    from .el import bel_statistic, profile_cis
    from .errors import GplsimError
    from .profile import FitConfig, fit
    from .workingcov import WorkingCovSpec, get_corr_family

    config = config or FitConfig()
    repl = generate_replication(design, rep)
    data = repl.dataset
    grid = unit_grid()
    family = design.family
    out = []
    naive_cache = {}

    def guard(method, wc, body):
        try:
            out.append(body())
        except GplsimError as exc:
            out.append(Record(method, wc, rep, False, error=f"{type(exc).__name__}: {exc}"))

    for wc_name in working_corrs:
        wc = get_corr_family(wc_name).short
        spec = WorkingCovSpec(wc_name, family=family)
        fit_res = {}

        def profile_fit():
            if "fit" not in fit_res:
                fit_res["fit"] = fit(data, spec, config, K_candidates=K_candidates)
            return fit_res["fit"]

        if "profile_bel" in methods:
            def body():
                res = profile_fit()
                r = _record("profile_bel", wc, rep, res, grid)
                if res.converged and inference:
                    for ci in profile_cis(data, res, targets, level, config):
                        r.cis[ci.component] = (ci.lo, ci.hi)
                if res.converged and wilks:
                    r.ell_truth = bel_statistic(data, repl.theta0, fit=res, config=config).ell
                return r
            guard("profile_bel", wc, body)

        if "gee_wald" in methods:
            def body():
                res = profile_fit()
                r = _record("gee_wald", wc, rep, res, grid)
                if res.converged and inference:
                    w = gee_wald(data, config=config, level=level, fit=res)
                    for ci in w.intervals(targets):
                        r.cis[ci.component] = (ci.lo, ci.hi)
                return r
            guard("gee_wald", wc, body)

        if "naive_el" in methods:
            def body():
                if "rec" not in naive_cache:
                    # independent of the working correlation: computed once
                    if wc == "ind" and "fit" in fit_res:
                        res = fit_res["fit"]
                    else:
                        res = naive_fit(data, spec, config, None)
                    r = _record("naive_el", wc, rep, res, grid)
                    if res.converged and inference:
                        for ci in naive_el_cis(data, targets, level, fit=res, config=config):
                            r.cis[ci.component] = (ci.lo, ci.hi)
                    naive_cache["rec"] = r
                base = naive_cache["rec"]
                return Record("naive_el", wc, rep, base.converged, base.theta, base.alpha,
                              base.ise, base.K, dict(base.cis))
            guard("naive_el", wc, body)

        if "gee_poly" in methods:
            def body():
                w = gee_poly(data, spec, config, level=level)
                r = _record("gee_poly", wc, rep, w.fit, grid)
                if w.fit.converged and inference:
                    for ci in w.intervals(targets):
                        r.cis[ci.component] = (ci.lo, ci.hi)
                return r
            guard("gee_poly", wc, body)
    return out


@dataclass
class MetricsTable:
    """Long-format rows ``(family, n, rho, working_corr, method, metric, value)``."""

    rows: list = field(default_factory=list)
    flagged: list = field(default_factory=list)

    COLUMNS = ("family", "n", "rho", "working_corr", "method", "metric", "value")

    def add(self, family, n, rho, wc, method, metric, value):
        self.rows.append((family, int(n), float(rho), wc, method, metric, float(value)))

    def get(self, method, metric, working_corr=None, family=None, n=None, rho=None) -> float:
        hits = [r for r in self.rows if r[4] == method and r[5] == metric
                and (working_corr is None or r[3] == working_corr)
                and (family is None or r[0] == family)
                and (n is None or r[1] == n)
                and (rho is None or r[2] == rho)]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match ({method}, {metric}, {working_corr})")
        return hits[0][6]

    def extend(self, other: "MetricsTable"):
        self.rows.extend(other.rows)
        self.flagged.extend(other.flagged)

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r[0], r[1], repr(r[2]), r[3], r[4], r[5], repr(r[6])])


def summarize(design: SimDesign, records, targets=DEFAULT_TARGETS,
              fail_threshold: float = 0.1) -> MetricsTable:
    """Aggregate records of one design cell; non-converged fits are excluded."""
    table = MetricsTable()
    keys = sorted({(r.working_corr, r.method) for r in records},
                  key=lambda k: (k[0], METHODS.index(k[1]) if k[1] in METHODS else 99))
    theta0_beta = np.asarray(design.beta0, dtype=float)
    alpha0 = np.asarray(design.alpha0, dtype=float)
    for wc, method in keys:
        recs = [r for r in records if r.working_corr == wc and r.method == method]
        ok = [r for r in recs if r.converged]
        add = _adder(table, design, wc, method)
        fail = 1.0 - len(ok) / len(recs)
        add("fail_rate", fail)
        add("n_converged", len(ok))
        if fail > fail_threshold:
            table.flagged.append((design.family, design.n, design.rho_latent, wc, method))
        if not ok:
            continue
        p = len(theta0_beta)
        B = np.array([r.theta[:p] for r in ok])
        A = np.array([r.alpha for r in ok])
        for j in range(p):
            err = B[:, j] - theta0_beta[j]
            add(f"bias_beta{j + 1}", err.mean())
            add(f"rmse_beta{j + 1}", np.sqrt(np.mean(err ** 2)))
        for j in range(len(alpha0)):
            err = A[:, j] - alpha0[j]
            add(f"bias_alpha{j + 1}", err.mean())
            add(f"rmse_alpha{j + 1}", np.sqrt(np.mean(err ** 2)))
        add("angle", np.mean([angle_error(a, alpha0) for a in A]))
        ises = np.array([r.ise for r in ok])
        add("ise_mean", ises.mean())
        for qq in (25, 50, 75):
            add(f"ise_q{qq}", np.percentile(ises, qq))
        add("k_med", np.median([r.K for r in ok]))
        for name in targets:
            cis = [r.cis[name] for r in ok if name in r.cis]
            if not cis:
                continue
            truth = _truth_value(name, design)
            lo = np.array([c[0] for c in cis])
            hi = np.array([c[1] for c in cis])
            add(f"cover_{name}", np.mean((lo <= truth) & (truth <= hi)))
            finite = np.isfinite(lo) & np.isfinite(hi)
            if finite.any():
                add(f"len_{name}", np.mean(hi[finite] - lo[finite]))
            add(f"unbounded_{name}", np.sum(~finite))
        ells = np.array([r.ell_truth for r in ok if not np.isnan(r.ell_truth)])
        if len(ells):
            from scipy import stats

            crit = stats.chi2.ppf(0.95, len(ok[0].theta))
            add("wilks_reject", np.mean(ells > crit))
    return table


def _adder(table, design, wc, method):
    def add(metric, value):
        table.add(design.family, design.n, design.rho_latent, wc, method, metric, value)
    return add


def _run_one(rep, design, kw):
    return run_replication(design, rep, **kw)


def run_study(designs, working_corrs=("ar1",), methods=METHODS, targets=DEFAULT_TARGETS,
              inference: bool = True, wilks: bool = False, level: float = 0.95,
              K_candidates=(6, 8, 10, 12), config=None, workers=None,
              return_records: bool = False):
    """Replicate every design cell ``design.B`` times and aggregate per method."""
    from functools import partial

    from .parallel import pmap

    if isinstance(designs, SimDesign):
        designs = [designs]
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ConfigError(f"unknown methods {sorted(unknown)}")
    kw = dict(working_corrs=tuple(working_corrs), methods=tuple(methods), targets=tuple(targets),
              inference=inference, wilks=wilks, level=level, K_candidates=tuple(K_candidates),
              config=config)
    table = MetricsTable()
    all_records = {}
    for design in designs:
        job = partial(_run_one, design=design, kw=kw)
        per_rep = pmap(job, range(design.B), workers)
        records = [r for rs in per_rep for r in rs]
        log.info("design %s: %d records", design, len(records))
        table.extend(summarize(design, records, targets))
        all_records[design] = records
    return (table, all_records) if return_records else table


# --------------------------------------------------------------------------
# Epilepsy-style count fixture
# --------------------------------------------------------------------------

EPIL_BETA = np.array([-0.15, 0.6, 0.15])  # treatment, baseline severity, age


def epil_eta(t):
    t = np.asarray(t, dtype=float)
    return 1.2 + 0.25 * np.cos(np.pi * t)


def generate_epil_like(seed: int = 59, n: int = 59, m: int = 4, sigma_b: float = 0.4):
    """Synthetic counts shaped like the classic epilepsy trial.

    Returns flat columns ``(subject_id, visit, y, X, Z)`` with X = (treatment
    indicator, standardized log baseline, standardized age) and Z = visit.
    """
    rng = rng_for(seed, 0)
    trt = (np.arange(n) % 2).astype(float)
    rng.shuffle(trt)
    base = rng.standard_normal(n)
    age = rng.standard_normal(n)
    b = sigma_b * rng.standard_normal(n)
    ids = np.repeat(np.arange(1, n + 1), m)
    visit = np.tile(np.arange(1, m + 1), n).astype(float)
    X = np.column_stack([np.repeat(trt, m), np.repeat(base, m), np.repeat(age, m)])
    t = (visit - 1) / (m - 1)
    xi = X @ EPIL_BETA + epil_eta(t) + np.repeat(b, m)
    y = rng.poisson(np.exp(xi)).astype(float)
    return ids, visit, y, X, visit[:, None]

"""Command-line front end: ``gplsim {fit,infer,band,simulate,cv,stability,fixture}``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigError, GplsimError
from .model import component_names, get_family
from .profile import FitConfig, fit as fit_model
from .workingcov import CorrFamily, WorkingCovSpec, get_corr_family

log = logging.getLogger("gplsim")

CORRS = ("independence", "ar1", "exchangeable")
EXIT_ERROR = 1
EXIT_NONCONVERGED = 3


@dataclass
class RunConfig:
    family: str = "gaussian"
    corr_family: str = "ar1"
    K_candidates: list = field(default_factory=lambda: [6, 8, 10, 12])
    K: int | None = None
    tol_theta: float = 1e-6
    tol_gamma: float = 1e-8
    max_outer: int = 100
    max_inner: int = 50
    B: int = 200
    B_star: int = 200
    level: float = 0.95
    seed: int = 2024
    cv_folds: int = 5
    out: str = "."
    data: str | None = None
    standardize: bool = False
    method: str = "all"
    components: list | None = None
    degree: int = 2
    n: int = 100
    rho: float = 0.0
    kappa: float = 0.0
    inference: bool = True
    workers: int | None = None
    allow_nonconverged: bool = False
    grid_points: int = 200
    inputs: list | None = None

    @classmethod
    def from_sources(cls, path=None, overrides=None) -> "RunConfig":
        values = {}
        if path:
            try:
                with open(path, encoding="utf-8") as fh:
                    values = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            if not isinstance(values, dict):
                raise ConfigError("config file must hold a flat JSON object")
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def validate(self):
        get_family(self.family)
        if self.corr_family != "all":
            get_corr_family(self.corr_family)
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be >= 2")
        if self.B < 1 or self.B_star < 1:
            raise ConfigError("B and B_star must be >= 1")

    def fit_config(self) -> FitConfig:
        return FitConfig(max_outer=self.max_outer, max_inner=self.max_inner,
                         tol_theta=self.tol_theta, tol_gamma=self.tol_gamma)

    def corrs(self) -> list[str]:
        if self.corr_family == "all":
            return list(CORRS)
        return [get_corr_family(self.corr_family).value]

    def write(self, out: Path):
        # the output directory itself is left out so reruns elsewhere stay byte-identical
        resolved = dataclasses.asdict(self)
        resolved.pop("out")
        io.write_json(out / "resolved_config.json", resolved)


class _State:
    """Tracks convergence across the fits of one command."""

    def __init__(self):
        self.nonconverged = []

    def check(self, label, res):
        if not res.converged:
            self.nonconverged.append(label)
        return res


def _load(cfg: RunConfig):
    if not cfg.data:
        raise ConfigError("--data is required")
    data = io.ingest_csv(cfg.data, standardize=cfg.standardize)
    data.check_family(get_family(cfg.family))
    return data


def _fit(data, cfg, corr, state, basis=None):
    spec = WorkingCovSpec(corr, family=cfg.family)
    res = fit_model(data, spec, cfg.fit_config(), K=cfg.K, basis=basis,
                    K_candidates=tuple(cfg.K_candidates))
    return state.check(f"fit[{get_corr_family(corr).short}]", res)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_fit(cfg: RunConfig, out: Path, state: _State):
    data = _load(cfg)
    res = _fit(data, cfg, cfg.corrs()[0], state)
    names = component_names(data.p, data.q)
    rows = [(nm, float(v)) for nm, v in zip(names, res.theta_hat.vector)]
    rows += [(f"alpha{k + 1}", float(a)) for k, a in enumerate(res.alpha_hat)]
    io.write_rows(out / "theta_hat.csv", ["component", "estimate"], rows)
    grid = np.linspace(0.0, 1.0, cfg.grid_points)
    io.write_rows(out / "eta_hat.csv", ["grid", "value"],
                  [(float(g), float(e)) for g, e in zip(grid, res.eta_unit(grid))])
    io.write_json(out / "fit_meta.json", {
        "converged": res.converged, "K": int(res.K), "rho_hat": res.rho_hat,
        "dispersion_hat": res.dispersion_hat, "iterations": res.n_outer,
        "working_corr": res.spec.corr_family.value, "family": cfg.family,
        "index_range": [res.sieve_hat.lo, res.sieve_hat.hi], "deviance": res.deviance,
    })


METHODS = ("profile_bel", "naive_el", "gee_wald", "gee_poly")


def _methods(cfg) -> list[str]:
    if cfg.method == "all":
        return list(METHODS)
    chosen = [m.strip() for m in cfg.method.split(",")]
    bad = [m for m in chosen if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)} or 'all'")
    return chosen


def cmd_infer(cfg: RunConfig, out: Path, state: _State):
    from .competitors import gee_poly, gee_wald, naive_el_cis, naive_fit
    from .el import profile_cis

    data = _load(cfg)
    comps = cfg.components or component_names(data.p, data.q)
    methods = _methods(cfg)
    fc = cfg.fit_config()
    rows = []
    naive = None
    for corr in cfg.corrs():
        short = get_corr_family(corr).short
        spec = WorkingCovSpec(corr, family=cfg.family)
        res = None
        if "profile_bel" in methods or "gee_wald" in methods:
            res = _fit(data, cfg, corr, state)
        results = []
        if "profile_bel" in methods:
            results += profile_cis(data, res, comps, cfg.level, fc)
        if "naive_el" in methods:
            if naive is None:
                nf = state.check("fit[naive]", naive_fit(data, spec, fc, cfg.K))
                naive = naive_el_cis(data, comps, cfg.level, fit=nf, config=fc)
            results += naive
        if "gee_wald" in methods:
            results += gee_wald(data, config=fc, level=cfg.level, fit=res).intervals(comps)
        if "gee_poly" in methods:
            w = gee_poly(data, spec, fc, degree=cfg.degree, level=cfg.level)
            state.check(f"fit[poly,{short}]", w.fit)
            results += w.intervals(comps)
        for ci in results:
            rows.append((ci.component, ci.method, short, float(ci.estimate), float(ci.lo),
                         float(ci.hi), float(ci.length)))
    io.write_rows(out / "ci.csv",
                  ["component", "method", "working_corr", "estimate", "lo", "hi", "length"], rows)


def cmd_band(cfg: RunConfig, out: Path, state: _State):
    from .bootstrap import cluster_bootstrap_band
    from .competitors import PolynomialBasis

    data = _load(cfg)
    corr = cfg.corrs()[0]
    res = _fit(data, cfg, corr, state)
    band = cluster_bootstrap_band(data, res, config=cfg.fit_config(), B_star=cfg.B_star,
                                  level=cfg.level, L=cfg.grid_points, seed=cfg.seed,
                                  workers=cfg.workers)
    sim_lo, sim_hi = band.simultaneous
    io.write_rows(out / "band.csv", ["grid", "eta_hat", "lo", "hi", "sim_lo", "sim_hi"],
                  [tuple(float(v) for v in r) for r in
                   zip(band.grid, band.eta_hat, band.lo, band.hi, sim_lo, sim_hi)])
    eta, lo, hi = io.normalize_curve(band.grid, band.eta_hat, band.lo, band.hi)
    overlays = []
    try:
        poly = _fit(data, cfg, corr, _State(), basis=PolynomialBasis(cfg.degree))
        overlays.append(("gee_poly", io.normalize_curve(band.grid, poly.eta_unit(band.grid))))
    except GplsimError as exc:
        log.warning("polynomial overlay skipped: %s", exc)
    svg = io.band_svg(band.grid, eta, lo, hi, overlays,
                      title=f"eta with {int(round(cfg.level * 100))}% bootstrap band")
    (out / "band.svg").write_text(svg, encoding="utf-8")
    io.write_json(out / "band_meta.json", {"B_star": band.B_star, "failures": band.failures,
                                           "sup_radius": band.sup_radius, "level": band.level})


def cmd_simulate(cfg: RunConfig, out: Path, state: _State):
    from .simulation import SimDesign, run_study

    design = SimDesign(n=cfg.n, family=cfg.family, rho_latent=cfg.rho, kappa=cfg.kappa,
                       B=cfg.B, seed=cfg.seed)
    table = run_study(design, working_corrs=cfg.corrs(), methods=_methods(cfg),
                      inference=cfg.inference, level=cfg.level,
                      K_candidates=tuple(cfg.K_candidates), config=cfg.fit_config(),
                      workers=cfg.workers)
    table.to_csv(out / "metrics.csv")
    for cell in table.flagged:
        log.warning("failure rate above 10%% in cell %s", cell)


def _predict(res, data):
    pk = data.packed
    xi = pk.X @ res.theta_hat.beta + res.eta(pk.Z @ res.alpha_hat)
    return res.spec.family.mean(xi)


def cmd_cv(cfg: RunConfig, out: Path, state: _State):
    from .competitors import PolynomialBasis
    from .simulation import rng_for

    data = _load(cfg)
    n = data.n
    if cfg.cv_folds > n:
        raise ConfigError(f"{cfg.cv_folds} folds for {n} subjects leaves empty folds")
    perm = rng_for(cfg.seed, 101).permutation(n)
    folds = [np.sort(perm[k::cfg.cv_folds]) for k in range(cfg.cv_folds)]
    if any(len(f) == 0 for f in folds):
        raise ConfigError("a fold has zero subjects")
    fam = get_family(cfg.family)
    methods = _methods(cfg)
    scores = {}
    naive_scores = None
    for corr in cfg.corrs():
        short = get_corr_family(corr).short
        per = {m: [] for m in methods}
        for k, test in enumerate(folds):
            train = np.setdiff1d(np.arange(n), test)
            dtr, dte = data.subset(train), data.subset(test)
            y = dte.packed.y

            def dev(res):
                mu = fam.clamp(_predict(res, dte))
                return float(np.mean(fam.deviance(y, mu)))

            if "profile_bel" in methods or "gee_wald" in methods:
                r = _fit(dtr, cfg, corr, state)
                for m in ("profile_bel", "gee_wald"):
                    if m in methods:
                        per[m].append(dev(r))
            if "gee_poly" in methods:
                r = _fit(dtr, cfg, corr, state, basis=PolynomialBasis(cfg.degree))
                per["gee_poly"].append(dev(r))
            if "naive_el" in methods and naive_scores is None:
                r = _fit(dtr, cfg, CorrFamily.INDEPENDENCE.value, state)
                per["naive_el"].append(dev(r))
        if "naive_el" in methods:
            if naive_scores is None:
                naive_scores = per["naive_el"]
            per["naive_el"] = naive_scores
        for m in methods:
            scores[(m, short)] = float(np.mean(per[m]))
    rows = [(m, c, v) for (m, c), v in scores.items()]
    io.write_rows(out / "cv.csv", ["method", "working_corr", "mean_deviance"], rows)


def cmd_stability(cfg: RunConfig, out: Path, state: _State):
    inputs = cfg.inputs or ([str(Path(cfg.out) / "ci.csv")])
    rows = []
    for path in inputs:
        rows += io.read_rows(path)
    lengths = {}
    for r in rows:
        lengths.setdefault((r["component"], r["method"]), {})[r["working_corr"]] = float(r["length"])
    need = ("ind", "ar1", "exc")
    out_rows = []
    for (comp, method), by in lengths.items():
        missing = [c for c in need if c not in by]
        if missing:
            raise ConfigError(f"{comp}/{method}: missing working correlations {missing}")
        vals = np.array([by[c] for c in need])
        out_rows.append((comp, method, float(vals.mean()), float(vals.max() - vals.min())))
    io.write_rows(out / "stability.csv", ["component", "method", "avg_length", "range"],
                  out_rows)


def cmd_fixture(cfg: RunConfig, out: Path, state: _State):
    """Write the synthetic epilepsy-style count data set as ``epil_like.csv``."""
    from .simulation import generate_epil_like

    ids, visit, y, X, Z = generate_epil_like(cfg.seed)
    io.write_dataset_csv(out / "epil_like.csv", ids, visit, y, X, Z)


COMMANDS = {"fit": cmd_fit, "infer": cmd_infer, "band": cmd_band, "simulate": cmd_simulate,
            "cv": cmd_cv, "stability": cmd_stability, "fixture": cmd_fixture}


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON file of settings; flags override it")
    common.add_argument("--out", help="output directory (created if missing)")
    common.add_argument("--data", help="input CSV: subject_id,visit,y,x1..xp,z1..zq")
    common.add_argument("--family", choices=["gaussian", "bernoulli", "poisson"])
    common.add_argument("--corr", dest="corr_family",
                        help="independence, exchangeable, ar1 or all")
    common.add_argument("--K", type=int, help="fix the spline dimension")
    common.add_argument("--K-candidates", dest="K_candidates", type=_int_list)
    common.add_argument("--tol-theta", dest="tol_theta", type=float)
    common.add_argument("--tol-gamma", dest="tol_gamma", type=float)
    common.add_argument("--max-outer", dest="max_outer", type=int)
    common.add_argument("--max-inner", dest="max_inner", type=int)
    common.add_argument("--level", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--standardize", action="store_true", default=None)
    common.add_argument("--allow-nonconverged", dest="allow_nonconverged",
                        action="store_true", default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="gplsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="fit the model")
    p = sub.add_parser("infer", parents=[common], help="confidence intervals")
    p.add_argument("--method")
    p.add_argument("--components", type=lambda s: s.split(","))
    p.add_argument("--degree", type=int)
    p = sub.add_parser("band", parents=[common], help="bootstrap band for eta")
    p.add_argument("--B-star", dest="B_star", type=int)
    p.add_argument("--grid-points", dest="grid_points", type=int)
    p.add_argument("--degree", type=int)
    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo study")
    p.add_argument("--n", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--B", type=int)
    p.add_argument("--method")
    p.add_argument("--no-inference", dest="inference", action="store_false", default=None)
    p = sub.add_parser("cv", parents=[common], help="subject-level cross-validation")
    p.add_argument("--folds", dest="cv_folds", type=int)
    p.add_argument("--method")
    p.add_argument("--degree", type=int)
    p = sub.add_parser("stability", parents=[common], help="CI length range across correlations")
    p.add_argument("--inputs", nargs="+")
    sub.add_parser("fixture", parents=[common], help="write the epilepsy-style CSV fixture")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config", "verbose")}
    try:
        cfg = RunConfig.from_sources(args.config, overrides)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        cfg.write(out)
        state = _State()
        COMMANDS[args.command](cfg, out, state)
    except (GplsimError, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        for attr in ("line", "missing"):
            if getattr(exc, attr, None) is not None:
                err[attr] = getattr(exc, attr)
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return EXIT_ERROR
    if state.nonconverged and not cfg.allow_nonconverged:
        sys.stderr.write(json.dumps({"error": "NonConvergence",
                                     "message": "fits did not converge",
                                     "fits": state.nonconverged}, sort_keys=True) + "\n")
        return EXIT_NONCONVERGED
    return 0


if __name__ == "__main__":
    sys.exit(main())

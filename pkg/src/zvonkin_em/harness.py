"""End-to-end experiments: corrector, chains over an eta grid, metrics, rate fits, report."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from . import problems
from .corrector import TransformedCoefficients, default_grid, select_lambda
from .errors import (DegenerateFit, InsufficientPoints, IoFailure, RuntimeFailure,
                     StageFailure, ValidationError, ZvonkinError)
from .functions import ConstantMatrix
from .metrics import (empirical_moment, lyapunov_drift_probe, sliced_w1, w1_exact_1d,
                      w1_to_reference_1d, _w1_ref_sorted)
from .model import (CASE1, CASE2, check_dissipativity, check_ellipticity,
                    check_lipschitz_b2, gibbs_reference_1d, make_problem)
from .sampler import ChainConfig, naive_chain, pull_back, run_ensemble

log = logging.getLogger(__name__)

CSV_HEADER = ["problem", "case", "eta", "n_samples", "w1", "w1_ci", "floor",
              "moment2", "moment6", "lambda", "sup_grad_u", "seed"]
PURE_POWER = "PurePower"
POWER_LOG = "PowerLog"
TRANSFORMED = "transformed"
NAIVE = "naive"

DEFAULT_ETA_GRID = tuple(2.0 ** -k for k in range(4, 10))


@dataclass(frozen=True)
class GibbsSpec:
    R_ref: float = 12.0
    n_grid: int = 24_001


@dataclass(frozen=True)
class ExperimentConfig:
    problem_spec: dict
    eta_grid: tuple = DEFAULT_ETA_GRID
    chains: int = 8
    T_burn: float = 20.0
    T_run: float = 2000.0
    master_seed: int = 0
    gamma_target: float = 0.9
    reference: Optional[GibbsSpec] = None
    baseline: bool = False
    out_dir: str = "results"
    grid_radius: float = 12.0
    grid_n: Optional[int] = None
    lambda_target: float = 0.4
    n_boot: int = 200
    probe_radius: float = 8.0
    probe_draws: int = 10_000
    n_directions: int = 64

    def __post_init__(self):
        grid = tuple(float(e) for e in self.eta_grid)
        object.__setattr__(self, "eta_grid", grid)
        if any(not (0 < e <= 0.5) for e in grid):
            raise ValidationError(f"eta_grid entries must lie in (0, 0.5], got {grid}")
        if any(a <= b for a, b in zip(grid, grid[1:])):
            raise ValidationError(f"eta_grid must be strictly descending, got {grid}")
        if not self.T_run > self.T_burn > 0:
            raise ValidationError(f"need T_run > T_burn > 0, got {self.T_run}, {self.T_burn}")
        if self.chains < 1:
            raise ValidationError("chains must be >= 1")
        if not 0 < self.gamma_target < 1:
            raise ValidationError("gamma_target must lie in (0, 1)")
        if self.n_boot < 0:
            raise ValidationError("n_boot must be >= 0")

    @property
    def problem(self):
        return make_problem(self.problem_spec)


def _reference_spec(table, problem):
    kind = table.get("kind", "auto")
    usable = problem.dim == 1 and isinstance(problem.sigma, ConstantMatrix)
    if kind == "none":
        return None
    if kind == "auto":
        if not usable:
            return None
    elif kind != "Gibbs1D":
        raise ValidationError(f"unknown reference kind {kind!r}; expected Gibbs1D, auto or none")
    elif not usable:
        raise ValidationError("Gibbs1D reference needs a 1D problem with constant sigma")
    return GibbsSpec(float(table.get("R_ref", 12.0)), int(table.get("n_grid", 24_001)))


_EXPERIMENT_KEYS = {"eta_grid", "chains", "T_burn", "T_run", "master_seed", "gamma_target",
                    "baseline", "grid_radius", "grid_n", "lambda_target", "n_boot",
                    "probe_radius", "probe_draws", "n_directions"}


def config_from_dict(doc, base_dir="."):
    """Validate a parsed config document (``[problem]``, ``[experiment]``, ...)."""
    if "problem" not in doc:
        raise ValidationError("config needs a [problem] section")
    spec = problems.resolve(doc["problem"])
    problem = make_problem(spec)
    exp = dict(doc.get("experiment", {}))
    unknown = set(exp) - _EXPERIMENT_KEYS
    if unknown:
        raise ValidationError(f"unknown [experiment] keys: {sorted(unknown)}")
    if exp.get("baseline") and problem.case_tag != CASE2:
        raise ValidationError("the naive baseline is only defined for Case2 problems")
    ref = _reference_spec(doc.get("reference", {}), problem)
    out = doc.get("output", {}).get("dir", "results")
    out = str(Path(base_dir, out)) if not os.path.isabs(out) else out
    try:
        return ExperimentConfig(problem_spec=spec, reference=ref, out_dir=out, **exp)
    except TypeError as exc:
        raise ValidationError(str(exc)) from None


def load_config(path):
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"malformed config {path}: {exc}") from None
    return config_from_dict(doc, base_dir=Path(path).parent)


@dataclass
class RateFit:
    model: str
    exponent: float
    log_constant: float
    residual_rms: float
    ci: tuple
    points_used: list
    points_dropped: list = field(default_factory=list)
    pinned: bool = False
    ci_method: str = "t"


def _design(eta, w1, model):
    x = np.log(eta)
    y = np.log(w1)
    if model == POWER_LOG:
        y = y - np.log(np.abs(np.log(eta)))
    elif model != PURE_POWER:
        raise ValidationError(f"unknown fit model {model!r}")
    return x, y


def _ols(x, y, pinned):
    if pinned is not None:
        p = float(pinned)
        c = float(np.mean(y - p * x))
    else:
        p, c = np.polyfit(x, y, 1)
    resid = y - (p * x + c)
    return float(p), float(c), resid


def fit_rate(points, model=PURE_POWER, replicates=None, pinned_exponent=None):
    """Least-squares power law through (eta, w1, floor) points in log-log space.

    Points with w1 <= 2 * floor are dropped before fitting. PowerLog divides
    w1 by |log eta| first (model w1 = C eta^p |log eta|). ``replicates`` is an
    array (B, len(points)) of bootstrap w1 values; when given, the exponent CI
    is the percentile interval of the refits, otherwise a 95% t-interval.
    """
    pts = [tuple(float(v) for v in p) for p in points]
    if len(pts) < 4:
        raise InsufficientPoints(f"need at least 4 points, got {len(pts)}")
    keep = [i for i, (e, w, f) in enumerate(pts) if w > 2.0 * f and w > 0]
    dropped = [pts[i] for i in range(len(pts)) if i not in keep]
    used = [pts[i] for i in keep]
    if len(used) < 3:
        raise InsufficientPoints(
            f"only {len(used)} of {len(pts)} points lie above twice the statistical floor")
    eta = np.array([u[0] for u in used])
    if np.ptp(eta) == 0:
        raise DegenerateFit("all eta values are equal")
    x, y = _design(eta, np.array([u[1] for u in used]), model)
    p, c, resid = _ols(x, y, pinned_exponent)
    rms = float(np.sqrt(np.mean(resid ** 2)))

    if pinned_exponent is not None:
        ci, method = (p, p), "pinned"
    elif replicates is not None and len(replicates):
        R = np.asarray(replicates, dtype=float)[:, keep]
        ok = np.all(R > 0, axis=1)
        slopes = [_ols(*_design(eta, r, model), None)[0] for r in R[ok]]
        lo, hi = np.percentile(slopes, [2.5, 97.5])
        ci, method = (float(min(lo, p)), float(max(hi, p))), "bootstrap"
    else:
        n = len(x)
        if n > 2:
            s2 = float(resid @ resid) / (n - 2)
            se = math.sqrt(s2 / float(np.sum((x - x.mean()) ** 2)))
            half = float(stats.t.ppf(0.975, n - 2)) * se
        else:
            half = math.inf
        ci, method = (p - half, p + half), "t"
    return RateFit(model=model, exponent=p, log_constant=c, residual_rms=rms, ci=ci,
                   points_used=used, points_dropped=dropped,
                   pinned=pinned_exponent is not None, ci_method=method)


@dataclass
class MetricRow:
    problem: str
    case: str
    eta: float
    n_samples: int
    w1: float
    w1_ci: float
    floor: float
    moment2: float
    moment6: float
    lam: float
    sup_grad_u: float
    seed: int
    scheme: str = TRANSFORMED

    def as_csv(self):
        vals = [self.problem, self.case, self.eta, self.n_samples, self.w1, self.w1_ci,
                self.floor, self.moment2, self.moment6, self.lam, self.sup_grad_u, self.seed]
        return [repr(float(v)) if isinstance(v, float) else str(v) for v in vals]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list
    fits: dict
    assumptions: dict
    lam: float
    sup_grad_u: float
    drift_reports: list = field(default_factory=list)
    replicates: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    telemetry: dict = field(default_factory=dict)


def _split_half(samples, chain_ids, n_chains):
    """Two disjoint halves of an ensemble: even vs odd chains, or first vs second half."""
    if n_chains >= 2:
        return samples[chain_ids % 2 == 0], samples[chain_ids % 2 == 1]
    mid = len(samples) // 2
    return samples[:mid], samples[mid:2 * mid]


def _floor(samples, chain_ids, n_chains, n_directions, seed):
    a, b = _split_half(samples, chain_ids, n_chains)
    if samples.shape[1] == 1:
        return w1_exact_1d(a, b).value
    return sliced_w1(a, b, n_directions, seed).value


def _chain_bootstrap(samples, chain_ids, n_chains, ref, n_boot, seed):
    """W1-to-reference recomputed on chain-resampled ensembles."""
    rng = np.random.default_rng([seed, 0xB007])
    x = samples[:, 0]
    if n_chains < 2:
        blocks = np.array_split(x, 8)
    else:
        blocks = [x[chain_ids == i] for i in range(n_chains)]
    out = np.empty(n_boot)
    for b in range(n_boot):
        pick = rng.integers(0, len(blocks), size=len(blocks))
        out[b] = _w1_ref_sorted(np.sort(np.concatenate([blocks[i] for i in pick])), ref)
    return out


def _probe_points(dim, radius):
    r = np.arange(0.0, radius + 0.5)
    P = np.zeros((len(r), dim))
    P[:, 0] = r
    return P


def _stage(stage, eta=None):
    class _Guard:
        def __enter__(self):
            return self

        def __exit__(self, et, exc, tb):
            if exc is not None and isinstance(exc, RuntimeFailure) \
                    and not isinstance(exc, StageFailure):
                raise StageFailure(stage, exc, eta) from exc
            return False
    return _Guard()


def assumption_reports(problem, n_points=10_000, radius=10.0, seed=0):
    dis = check_dissipativity(problem, n_points, radius, seed)
    lip = check_lipschitz_b2(problem, n_points, radius, seed)
    ell = check_ellipticity(problem, n_points, radius, seed)
    return {
        "dissipativity": {"max_violation": dis.max_violation, "passed": dis.passed,
                          "worst_point": dis.worst_point.tolist()},
        "lipschitz_b2": {"estimate": lip.estimate, "theta3": lip.theta3,
                         "passed": not lip.flagged},
        "ellipticity": {"min_eig": ell.min_eig, "max_eig": ell.max_eig,
                        "lambda_sigma": ell.lambda_sigma, "passed": ell.passed},
    }


def _scheme_metrics(cfg, problem, s, ref, lam, sup_grad, name, moments_from):
    """One CSV row plus bootstrap replicates for a pulled-back sample set."""
    X = s.samples
    n_chains = s.n_chains
    floor = _floor(X, s.chain_ids, n_chains, cfg.n_directions, cfg.master_seed)
    reps = None
    if ref is not None:
        w1 = w1_to_reference_1d(X, ref).value
        if cfg.n_boot > 0:
            reps = _chain_bootstrap(X, s.chain_ids, n_chains, ref, cfg.n_boot, cfg.master_seed)
            lo, hi = np.percentile(reps, [2.5, 97.5])
            ci = float(0.5 * (hi - lo))
        else:
            ci = math.nan
    else:
        w1, ci = math.nan, math.nan
    row = MetricRow(problem=name, case=problem.case_label, eta=s.eta, n_samples=len(X),
                    w1=float(w1), w1_ci=ci, floor=float(floor),
                    moment2=empirical_moment(moments_from, 2),
                    moment6=empirical_moment(moments_from, 6),
                    lam=float(lam), sup_grad_u=float(sup_grad), seed=int(cfg.master_seed))
    return row, reps


def _fit_all(rows, reps, model, pinned=None):
    points = [(r.eta, r.w1, r.floor) for r in rows]
    R = None
    if all(reps.get(r.eta) is not None for r in rows) and rows:
        R = np.stack([reps[r.eta] for r in rows], axis=1)
    return fit_rate(points, model, replicates=R, pinned_exponent=pinned)


def _try_fit(result, key, rows, reps, model, pinned=None):
    try:
        result.fits[key] = _fit_all(rows, reps, model, pinned)
    except (InsufficientPoints, DegenerateFit) as exc:
        result.fits[key] = None
        result.warnings.append(f"fit {key} skipped: {exc}")


def run_experiment(cfg: ExperimentConfig, n_threads=None) -> ExperimentResult:
    """Corrector, ensembles over the eta grid, metrics and rate fits; deterministic in cfg."""
    problem = cfg.problem
    name = problem.name
    with _stage("assumptions"):
        reports = assumption_reports(problem)
    for key, rep in reports.items():
        if not rep["passed"]:
            log.warning("assumption check %s failed: %s", key, rep)

    with _stage("corrector"):
        grid = default_grid(problem.dim, cfg.grid_radius, cfg.grid_n)
        lam, fld = select_lambda(problem, grid, target=cfg.lambda_target)
        tc = TransformedCoefficients(problem, fld)

    ref = None
    if cfg.reference is not None:
        with _stage("reference"):
            ref = gibbs_reference_1d(problem, cfg.reference.R_ref, cfg.reference.n_grid)

    result = ExperimentResult(config=cfg, rows=[], fits={}, assumptions=reports,
                              lam=lam, sup_grad_u=fld.sup_grad_u)
    if not cfg.eta_grid:
        result.warnings.append("empty eta grid: nothing was sampled")
    naive_rows = []
    reps = {TRANSFORMED: {}, NAIVE: {}}
    telemetry = {"max_excursion": 0.0, "out_of_domain_hits": 0, "untrusted_evaluations": 0}
    for eta in cfg.eta_grid:
        chain_cfg = ChainConfig.from_times(eta, cfg.T_burn, cfg.T_run)
        with _stage("sampling", eta):
            z = run_ensemble(tc, chain_cfg, cfg.chains, cfg.master_seed, name, n_threads)
            x = pull_back(fld, z)
        for k in ("out_of_domain_hits", "untrusted_evaluations"):
            telemetry[k] += z.telemetry[k]
        telemetry["max_excursion"] = max(telemetry["max_excursion"], z.telemetry["max_excursion"])
        with _stage("metrics", eta):
            row, r = _scheme_metrics(cfg, problem, x, ref, lam, fld.sup_grad_u, name, z)
            drift = lyapunov_drift_probe(tc, _probe_points(problem.dim, cfg.probe_radius), eta,
                                         cfg.probe_draws, cfg.master_seed)
        result.rows.append(row)
        result.drift_reports.append(drift)
        reps[TRANSFORMED][eta] = r
        log.info("eta=%g w1=%g floor=%g", eta, row.w1, row.floor)
        if cfg.baseline:
            with _stage("baseline", eta):
                nv = naive_chain(problem, chain_cfg, cfg.chains, cfg.master_seed, n_threads)
                nrow, nr = _scheme_metrics(cfg, problem, nv, ref, lam, fld.sup_grad_u,
                                           f"{name}[naive]", nv)
            nrow.scheme = NAIVE
            naive_rows.append(nrow)
            reps[NAIVE][eta] = nr
    result.rows.extend(naive_rows)
    result.replicates = reps
    result.telemetry = telemetry

    if ref is not None and cfg.eta_grid:
        trans = [r for r in result.rows if r.scheme == TRANSFORMED]
        _try_fit(result, f"{TRANSFORMED}/{PURE_POWER}", trans, reps[TRANSFORMED], PURE_POWER)
        _try_fit(result, f"{TRANSFORMED}/{POWER_LOG}", trans, reps[TRANSFORMED], POWER_LOG)
        if problem.case_tag == CASE2:
            _try_fit(result, f"{TRANSFORMED}/{PURE_POWER}@alpha/2", trans, reps[TRANSFORMED],
                     PURE_POWER, pinned=problem.alpha / 2)
        if naive_rows:
            _try_fit(result, f"{NAIVE}/{PURE_POWER}", naive_rows, reps[NAIVE], PURE_POWER)
    elif cfg.eta_grid:
        result.warnings.append("no exact reference: rate fits skipped, floor column only")
    return result


def primary_model(problem):
    return POWER_LOG if problem.case_tag == CASE2 else PURE_POWER


def _fit_json(fit):
    if fit is None:
        return None
    d = asdict(fit)
    d["ci"] = list(fit.ci)
    return d


def _theory_budget(problem, cfg, rows):
    """eps reachable at each eta by the theoretical budget, next to the measured W1."""
    out = []
    for r in rows:
        if problem.case_tag == CASE2:
            eps = r.eta ** (3.0 / 8.0)  # eta ~ eps^(8/3)
        else:
            eps = r.eta ** (cfg.gamma_target / 2.0)  # eta ~ eps^(2/gamma)
        out.append({"eta": r.eta, "scheme": r.scheme, "eps_theory": eps, "w1": r.w1})
    return out


def summary_dict(result):
    cfg = result.config
    problem = cfg.problem
    return {
        "problem": problem.name,
        "case": problem.case_label,
        "alpha": problem.alpha,
        "gamma_target": cfg.gamma_target,
        "target_exponent": 0.5 if problem.case_tag == CASE2 else cfg.gamma_target / 2,
        "lambda": result.lam,
        "sup_grad_u": result.sup_grad_u,
        "eta_grid": list(cfg.eta_grid),
        "chains": cfg.chains, "T_burn": cfg.T_burn, "T_run": cfg.T_run,
        "master_seed": cfg.master_seed,
        "assumptions": result.assumptions,
        "fits": {k: _fit_json(v) for k, v in result.fits.items()},
        "drift_probes": [
            {"eta": d.eta, "violations": d.violations, "theta1_hat": d.fitted_theta1_hat,
             "theta1_se": d.theta1_se, "c3": d.fitted_c3, "passed": d.passed}
            for d in result.drift_reports],
        "budget": _theory_budget(problem, cfg, result.rows),
        "telemetry": result.telemetry,
        "warnings": result.warnings,
    }


def write_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow(r.as_csv())


def read_csv(path):
    """Parse a results CSV back into MetricRows (scheme taken from the name suffix)."""
    rows = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != CSV_HEADER:
            raise ValidationError(f"unexpected CSV header {header}")
        for rec in rd:
            p, case, eta, n, w1, ci, fl, m2, m6, lam, sg, seed = rec
            rows.append(MetricRow(p, case, float(eta), int(n), float(w1), float(ci), float(fl),
                                  float(m2), float(m6), float(lam), float(sg), int(seed),
                                  NAIVE if p.endswith("[naive]") else TRANSFORMED))
    return rows


def emit_report(result, out_dir=None):
    """Write results.csv, w1_vs_eta.svg (when there is data) and summary.json."""
    out = Path(out_dir or result.config.out_dir)
    paths = {"csv": out / "results.csv", "summary": out / "summary.json"}
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(str(out), str(exc)) from None
    target = paths["csv"]
    try:
        write_csv(result.rows, target)
        if any(np.isfinite(r.w1) for r in result.rows):
            from .plotting import plot_rates
            target = paths["plot"] = out / "w1_vs_eta.svg"
            plot_rates(result, target)
        target = paths["summary"]
        with open(target, "w") as fh:
            json.dump(summary_dict(result), fh, indent=2, default=_json_default)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(str(target), str(exc)) from None
    return paths


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, ZvonkinError):
        return str(o)
    raise TypeError(type(o).__name__)

"""Replication engine for the simulation grids.

A config is a JSON object::

    {
      "scenario": "linear_bernoulli",          # linear_gaussian | linear_bernoulli | twins
      "schedule": {"rule": "N=p+50", "p": [150, 250]},
      "missing_probs": [0.0, 0.3],
      "estimators": ["oracle", "ols", "mf"],
      "replications": 20,
      "seed": 0,
      "mf": {"folds": 5, "n_lambdas": 20, "lambda_ratio": 1e-4, "rel_tol": 1e-6},
      "twins": {"n_pairs": 2000, "records": null, "perturb_prob": 0.5}
    }

Schedule rules: ``"N=2p"``, ``"N=p+50"``, ``"N=p/1.5"`` (take ``p``),
``"p=N/2"`` (takes ``N``), ``"fixed_p"`` (takes one ``p`` and a list ``N``),
or ``{"pairs": [[N, p], ...]}``. For ``twins`` the schedule lists ``p`` and
``N`` is the number of pairs. ``CONFOUND_MF_SEED`` overrides ``seed``.
"""

from __future__ import annotations

import io
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from . import ate as est
from .completion import SolverOptions, cross_validate, default_lambda_grid, extract_confounders
from .ingest import MiceImputer, mode_impute, read_twins_csv
from .synth import draw_loadings, gen_linear_scm, inject_mcar, synth_twins_standin, twins_semi_synth

logger = logging.getLogger(__name__)

SCENARIOS = ("linear_gaussian", "linear_bernoulli", "twins")
SEED_ENV = "CONFOUND_MF_SEED"
CSV_COLUMNS = ("scenario", "N", "p", "missing_prob", "estimator", "n_reps", "n_failed",
               "mean", "rmse_rel", "band", "mean_abs_err")
BAND_NOTE = ("# rmse_rel = sqrt(mean((tau_hat - tau)^2)) / |tau|; "
             "band = 2 * sd((tau_hat - tau)^2) / (sqrt(n_reps) * 2 * sqrt(mean((tau_hat - tau)^2))) / |tau|")

ESTIMATORS = ("oracle", "ols", "ridge", "lasso", "mf", "mode_ols", "lr", "dr", "ipw", "match",
              "psmatch", "mf_lr", "mf_dr", "mf_ipw", "mf_match", "mf_psmatch", "mode_lr",
              "mode_dr", "mode_ipw", "mode_match", "mode_psmatch", "mice_lr")


class UnknownEstimatorError(KeyError):
    pass


@dataclass(frozen=True)
class MfOptions:
    folds: int = 5
    n_lambdas: int = 20
    lambda_ratio: float = 1e-4
    rel_tol: float = 1e-6
    max_iters: int = 500
    rank_threshold: float = 1e-7


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    schedule: tuple
    estimators: tuple
    missing_probs: tuple = (0.0,)
    replications: int = 50
    seed: int = 0
    mf: MfOptions = field(default_factory=MfOptions)
    outcome_noise_sd: float = 1.0
    n_pairs: int = 2000
    twins_records: str = None
    perturb_prob: float = 0.5

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.schedule:
            raise ValueError("schedule is empty")
        if not self.estimators:
            raise ValueError("estimator list is empty")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown:
            raise UnknownEstimatorError(f"unknown estimators {unknown}")
        if any(not 0 <= q < 1 for q in self.missing_probs):
            raise ValueError("missing probabilities must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict, environ=None) -> "ExperimentConfig":
        environ = os.environ if environ is None else environ
        d = dict(d)
        twins = d.pop("twins", None) or {}
        mf = MfOptions(**d.pop("mf", {}))
        schedule = expand_schedule(d.pop("schedule"), d.get("scenario"), twins.get("n_pairs", 2000))
        seed = int(d.pop("seed", 0))
        if environ.get(SEED_ENV):
            seed = int(environ[SEED_ENV])
        return cls(schedule=schedule, estimators=tuple(d.pop("estimators")),
                   missing_probs=tuple(float(q) for q in d.pop("missing_probs", [0.0])),
                   mf=mf, seed=seed, n_pairs=int(twins.get("n_pairs", 2000)),
                   twins_records=twins.get("records"),
                   perturb_prob=float(twins.get("perturb_prob", 0.5)), **d)

    @classmethod
    def from_json(cls, path, environ=None) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), environ)


def expand_schedule(spec, scenario=None, n_pairs=2000) -> tuple:
    """Turn a schedule description into a tuple of ``(N, p)`` pairs."""
    if "pairs" in spec:
        return tuple((int(n), int(p)) for n, p in spec["pairs"])
    rule = spec.get("rule")
    ps = [int(p) for p in np.atleast_1d(spec.get("p", []))]
    if scenario == "twins":
        return tuple((int(n_pairs), p) for p in ps)
    if rule == "N=2p":
        return tuple((2 * p, p) for p in ps)
    if rule == "N=p+50":
        return tuple((p + 50, p) for p in ps)
    if rule == "N=p/1.5":
        return tuple((int(round(p / 1.5)), p) for p in ps)
    if rule == "p=N/2":
        return tuple((int(n), int(n) // 2) for n in spec["N"])
    if rule == "fixed_p":
        (p,) = ps
        return tuple((int(n), p) for n in spec["N"])
    raise ValueError(f"unknown schedule rule {rule!r}")


def task_seed(seed: int, *key) -> int:
    """64-bit seed for a replication, a pure function of ``(seed, *key)``."""
    ss = np.random.SeedSequence([int(seed)] + [int(k) for k in key])
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------- pipelines


@dataclass
class PipelineCache:
    """Per-dataset memo so every ``mf_*`` and ``mode_*`` estimator shares one fit."""

    confounders: np.ndarray = None
    mf_diagnostics: dict = None
    imputed: np.ndarray = None
    propensities: dict = field(default_factory=dict)


def mf_confounders(obs, options: MfOptions = MfOptions(), seed: int = 0):
    """Cross-validated completion followed by confounder extraction.

    Returns ``(basis, diagnostics)``. A zero solution still yields a one
    column basis so downstream regressions stay defined.
    """
    grid = default_lambda_grid(obs, options.n_lambdas, options.lambda_ratio)
    opts = SolverOptions(max_iters=options.max_iters, rel_tol=options.rel_tol, seed=seed)
    cv = cross_validate(obs, grid, options.folds, opts, options.rank_threshold)
    r_hat = max(cv.chosen_rank, 1)
    conf = extract_confounders(cv.phi, r_hat, options.rank_threshold)
    diag = {"chosen_lambda": cv.chosen_lambda, "chosen_rank": cv.chosen_rank, "r_hat": r_hat}
    return conf.basis, diag


def _covariates(base, data, obs, options, cache, seed):
    if base == "mf_":
        if cache.confounders is None:
            cache.confounders, cache.mf_diagnostics = mf_confounders(obs, options, seed)
        return cache.confounders
    if base == "mode_":
        if cache.imputed is None:
            cache.imputed = mode_impute(obs)
        return cache.imputed
    x = obs.to_dense()
    if np.isnan(x).any():
        raise ValueError("raw covariates contain missing entries; use an imputing pipeline")
    return x


def _split(name):
    for base in ("mf_", "mode_"):
        if name.startswith(base):
            return base, name[len(base):]
    if name == "mf":
        return "mf_", "ols"
    return "", name


def estimator_pipeline(name: str, data: est.CausalDataset, obs=None, options: MfOptions = MfOptions(),
                       cache: PipelineCache = None, seed: int = 0) -> est.AteReport:
    """Run one named estimator and tag the report with its pipeline.

    ``data.covariates`` is ignored except by ``oracle``, which regresses on
    ``data.true_confounders``; the others build covariates from ``obs``
    (raw, mode-imputed, or matrix-factorization confounders).
    """
    if name not in ESTIMATORS:
        raise UnknownEstimatorError(f"unknown estimator {name!r}")
    cache = cache if cache is not None else PipelineCache()
    if name == "oracle":
        report = est.ols_ate(data.with_covariates(data.true_confounders))
        report.diagnostics["pipeline"] = "oracle"
        return report
    if name == "mice_lr":
        MiceImputer().fit_transform(obs)
    base, method = _split(name)
    c = _covariates(base, data, obs, options, cache, seed)
    d = data.with_covariates(c)
    if method == "ols":
        report = est.ols_ate(d)
    elif method in ("ridge", "lasso"):
        pen = est.select_penalty_cv(d, method, seed=seed)
        report = est.ridge_ate(d, pen) if method == "ridge" else est.lasso_ate(d, pen)
    elif method == "lr":
        report = est.logistic_outcome_ate(d)
    else:
        if base not in cache.propensities:
            cache.propensities[base] = est.logistic_propensity(c, data.treatment)
        e = cache.propensities[base]
        fn = {"ipw": est.ipw_ate, "dr": est.doubly_robust_ate,
              "psmatch": est.propensity_match_ate}.get(method)
        report = est.mahalanobis_match_ate(d) if method == "match" else fn(d, e)
    report.diagnostics["pipeline"] = name
    if base == "mf_":
        report.diagnostics.update(cache.mf_diagnostics)
    return report


# ---------------------------------------------------------------- engine


def _linear_task(cfg: ExperimentConfig, n, p, rep):
    spec = est.GenerativeSpec(outcome_noise_sd=cfg.outcome_noise_sd,
                              noise="bernoulli" if cfg.scenario == "linear_bernoulli" else "gaussian")
    spec = spec.with_v(draw_loadings(p, spec.r, cfg.seed))
    s = task_seed(cfg.seed, n, p, rep)
    data, obs, _ = gen_linear_scm(n, p, spec, s)
    return data, obs, spec.tau, s


def _twins_records(cfg: ExperimentConfig):
    if cfg.twins_records:
        return read_twins_csv(cfg.twins_records)
    return synth_twins_standin(cfg.n_pairs, cfg.seed)


def run_task(cfg: ExperimentConfig, n: int, p: int, rep: int, records=None) -> list:
    """All estimators at every missingness level for one replication.

    The MCAR mask seed is shared across levels, so masks are nested.
    """
    if cfg.scenario == "twins":
        s = task_seed(cfg.seed, n, p, rep)
        data, obs = twins_semi_synth(records, p, s, cfg.perturb_prob)
        truth = data.sample_ate()
    else:
        data, obs, truth, s = _linear_task(cfg, n, p, rep)
    out = []
    for q in cfg.missing_probs:
        masked = inject_mcar(obs, q, s) if q > 0 else obs
        cache = PipelineCache()
        for name in cfg.estimators:
            try:
                tau_hat = estimator_pipeline(name, data, masked, cfg.mf, cache, s).tau_hat
            except Exception as exc:  # recorded per row, never aborts the sweep
                logger.info("%s failed at N=%d p=%d rep=%d q=%g: %s", name, n, p, rep, q, exc)
                tau_hat = math.nan
            out.append((n, p, q, name, rep, truth, tau_hat))
    return out


def summarize(errors, truths) -> dict:
    """Relative RMSE and its delta-method band over the finite replications."""
    errors = np.asarray(errors, dtype=float)
    truths = np.asarray(truths, dtype=float)
    ok = np.isfinite(errors)
    n_ok = int(ok.sum())
    res = {"n_reps": errors.size, "n_failed": errors.size - n_ok}
    if n_ok == 0:
        return {**res, "mean": math.nan, "rmse_rel": math.nan, "band": math.nan,
                "mean_abs_err": math.nan}
    e = errors[ok]
    scale = abs(float(np.mean(truths)))
    sq = e ** 2
    msq = float(sq.mean())
    rmse = math.sqrt(msq)
    sd_sq = float(sq.std(ddof=1)) if n_ok > 1 else 0.0
    band = 0.0 if rmse == 0 else 2 * sd_sq / math.sqrt(n_ok) / (2 * rmse)
    return {**res, "mean": float(np.mean(e + truths[ok])), "rmse_rel": rmse / scale,
            "band": band / scale, "mean_abs_err": float(np.mean(np.abs(e)))}


def run_experiment(cfg: ExperimentConfig, n_jobs: int = 1) -> list:
    """Run every replication and return one summary dict per output row."""
    records = _twins_records(cfg) if cfg.scenario == "twins" else None
    tasks = [(n, p, rep) for n, p in cfg.schedule for rep in range(cfg.replications)]
    results = Parallel(n_jobs=n_jobs)(delayed(run_task)(cfg, n, p, rep, records)
                                      for n, p, rep in tasks)
    by_key = {}
    for chunk in results:
        for n, p, q, name, rep, truth, tau_hat in chunk:
            by_key.setdefault((n, p, q, name), []).append((rep, tau_hat - truth, truth))
    rows = []
    for n, p in cfg.schedule:
        for q in cfg.missing_probs:
            for name in cfg.estimators:
                reps = sorted(by_key[(n, p, q, name)])
                stats = summarize([r[1] for r in reps], [r[2] for r in reps])
                rows.append({"scenario": cfg.scenario, "N": n, "p": p, "missing_prob": q,
                             "estimator": name, **stats})
    return rows


def _cell(v):
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(v)
    return str(v)


def format_table(rows) -> str:
    buf = io.StringIO()
    buf.write(BAND_NOTE + "\n")
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for row in rows:
        buf.write(",".join(_cell(row[c]) for c in CSV_COLUMNS) + "\n")
    return buf.getvalue()


def read_table(text: str) -> list:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        row = dict(zip(header, ln.split(",")))
        for k in ("N", "p", "n_reps", "n_failed"):
            row[k] = int(row[k])
        for k in ("missing_prob", "mean", "rmse_rel", "band", "mean_abs_err"):
            row[k] = math.nan if row[k] == "NA" else float(row[k])
        rows.append(row)
    return rows


def lookup(rows, **key) -> dict:
    hits = [r for r in rows if all(r[k] == v for k, v in key.items())]
    if len(hits) != 1:
        raise KeyError(f"{len(hits)} rows match {key}")
    return hits[0]


__all__ = ["ExperimentConfig", "MfOptions", "PipelineCache", "estimator_pipeline", "expand_schedule",
           "format_table", "lookup", "mf_confounders", "read_table", "run_experiment", "run_task",
           "summarize", "task_seed"]

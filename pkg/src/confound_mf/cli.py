"""Command-line entry point: ``confound-mf <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import ate as est
from . import diagnostics as diag
from .completion import (DivergedError, SolverOptions, cross_validate, effective_rank,
                         extract_confounders, solve_convex)
from .harness import ExperimentConfig, format_table, run_experiment
from .ingest import (read_csv_matrix, read_dataset_csv, read_dense_csv, write_csv_matrix,
                     write_dense_csv, write_schema, write_twins_csv)
from .synth import gen_linear_scm, synth_twins_standin

EXIT_DIVERGED = 2


def _clip(text):
    lo, hi = (float(v) for v in text.split(","))
    return lo, hi


def cmd_complete(args) -> int:
    obs = read_csv_matrix(args.input, args.schema, args.loss)
    opts = SolverOptions(max_iters=args.max_iters, rel_tol=args.tol, seed=args.seed)
    try:
        if args.cv:
            res = cross_validate(obs, folds=args.folds, opts=opts, rank_threshold=args.rank_threshold)
            phi, lam = res.phi, res.chosen_lambda
        else:
            phi, lam = solve_convex(obs, args.lam, opts), args.lam
    except DivergedError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    rank = effective_rank(phi, args.rank_threshold)
    write_dense_csv(args.output, phi.values, obs.col_names)
    if args.confounders:
        basis = extract_confounders(phi, max(rank, 1), args.rank_threshold).basis
        write_dense_csv(args.confounders, basis, [f"u{j}" for j in range(basis.shape[1])])
    summary = {"lambda": lam, "rank": rank, "iterations": phi.n_iter, "converged": phi.converged}
    print(json.dumps(summary))
    return 0


def cmd_diagnose(args) -> int:
    report = {}
    u_hat = None
    if args.u_true and args.u_hat:
        u = diag.orthonormalize(read_dense_csv(args.u_true)[0])
        u_hat = diag.orthonormalize(read_dense_csv(args.u_hat)[0])
        report["angle"] = diag.principal_angle(u, u_hat)
        report["projection_distance"] = diag.projection_distance(u, u_hat)
    if args.phi:
        report["spikiness"] = diag.spikiness_ratio(read_dense_csv(args.phi)[0])
    if args.treatment:
        cols = read_dataset_csv(args.treatment)
        basis = u_hat if u_hat is not None else diag.orthonormalize(read_dense_csv(args.u_hat)[0])
        report["residual_energy"] = diag.residual_treatment_energy(cols["treatment"], basis)
    print(json.dumps(report, indent=2))
    return 0


def cmd_ate(args) -> int:
    cols = read_dataset_csv(args.data)
    cov = read_dense_csv(args.covariates)[0] if args.covariates else np.zeros((cols["treatment"].size, 0))
    data = est.CausalDataset(cov, cols["treatment"], cols["outcome"])
    m = args.method
    if m == "ols":
        rep = est.ols_ate(data)
    elif m in ("ridge", "lasso"):
        pen = args.penalty if args.penalty is not None else est.select_penalty_cv(data, m)
        rep = est.ridge_ate(data, pen) if m == "ridge" else est.lasso_ate(data, pen)
    elif m == "logistic":
        rep = est.logistic_outcome_ate(data)
    elif m == "match":
        rep = est.mahalanobis_match_ate(data)
    else:
        e = est.logistic_propensity(cov, data.treatment)
        if m == "ipw":
            rep = est.ipw_ate(data, e, args.clip)
        elif m == "dr":
            rep = est.doubly_robust_ate(data, e, args.clip)
        else:
            rep = est.propensity_match_ate(data, e)
    text = json.dumps(rep.to_dict(), indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    return 0


def cmd_synth_linear(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data, obs, v = gen_linear_scm(args.n, args.p, est.GenerativeSpec(noise=args.noise), args.seed)
    write_csv_matrix(out / "X.csv", obs)
    write_schema(out / "schema.json", obs)
    write_dense_csv(out / "U.csv", data.true_confounders, [f"u{j}" for j in range(v.shape[1])])
    write_dense_csv(out / "V.csv", v, [f"v{j}" for j in range(v.shape[1])])
    po = data.potential_outcomes
    write_dense_csv(out / "data.csv", np.column_stack([data.treatment, data.outcome, po]),
                    ["treatment", "outcome", "y0", "y1"])
    return 0


def cmd_synth_twins(args) -> int:
    write_twins_csv(args.out, synth_twins_standin(args.pairs, args.seed))
    return 0


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    table = format_table(run_experiment(cfg, n_jobs=args.jobs))
    if args.out:
        Path(args.out).write_text(table)
    else:
        sys.stdout.write(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="confound-mf")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("complete", help="low-rank completion of a covariate matrix")
    c.add_argument("--input", required=True)
    c.add_argument("--schema")
    c.add_argument("--loss", default="auto", choices=["auto", "gaussian", "bernoulli", "poisson"])
    g = c.add_mutually_exclusive_group(required=True)
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--cv", action="store_true")
    c.add_argument("--folds", type=int, default=5)
    c.add_argument("--rank-threshold", type=float, default=1e-7)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--max-iters", type=int, default=500)
    c.add_argument("--tol", type=float, default=1e-6)
    c.add_argument("--output", required=True)
    c.add_argument("--confounders")
    c.set_defaults(func=cmd_complete)

    d = sub.add_parser("diagnose", help="subspace and conditioning diagnostics")
    d.add_argument("--u-true")
    d.add_argument("--u-hat")
    d.add_argument("--phi")
    d.add_argument("--treatment", help="dataset CSV with a treatment column")
    d.set_defaults(func=cmd_diagnose)

    a = sub.add_parser("ate", help="average treatment effect")
    a.add_argument("--data", required=True)
    a.add_argument("--covariates")
    a.add_argument("--method", default="ols",
                   choices=["ols", "ridge", "lasso", "logistic", "ipw", "dr", "match", "psmatch"])
    a.add_argument("--penalty", type=float)
    a.add_argument("--clip", type=_clip, default=est.DEFAULT_CLIP)
    a.add_argument("--output")
    a.set_defaults(func=cmd_ate)

    s = sub.add_parser("synth", help="synthetic data")
    ss = s.add_subparsers(dest="kind", required=True)
    sl = ss.add_parser("linear")
    sl.add_argument("--n", type=int, required=True)
    sl.add_argument("--p", type=int, required=True)
    sl.add_argument("--noise", choices=["gaussian", "bernoulli"], default="gaussian")
    sl.add_argument("--seed", type=int, default=0)
    sl.add_argument("--out-dir", required=True)
    sl.set_defaults(func=cmd_synth_linear)
    st = ss.add_parser("twins-standin")
    st.add_argument("--pairs", type=int, required=True)
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--out", required=True)
    st.set_defaults(func=cmd_synth_twins)

    e = sub.add_parser("experiment", help="run a replication grid")
    e.add_argument("--config", required=True)
    e.add_argument("--out")
    e.add_argument("--jobs", type=int, default=1)
    e.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

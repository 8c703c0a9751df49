"""Command line front end.

Subcommands:

* ``simulate``  write ``X.csv``, ``Y.csv``, ``truth.json`` from a simulation spec
* ``fit``       fit a model to X/Y CSVs, write ``model.json`` + ``report.csv``
* ``paths``     export a unit-rank stagewise path as ``path.jsonl``
* ``eval``      score a saved model against saved truth, write ``report.csv``
* ``benchmark`` replicate simulate + fit + score, write ``table.csv``

Every artifact write is atomic, and rerunning a command with the same config
and seed reproduces each artifact byte for byte.  Measured wall times are the
one exception; they go to a separate ``timing.csv`` sidecar that makes no
reproducibility promise.

Options may also come from a JSON config file (``--config``); explicit
command-line flags override config values, which override built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict

import numpy as np

from .baselines import (
    AcsConfig,
    default_lambda_grid,
    default_rrr_ridge,
    fit_rrr,
    lasso_gic_path,
    select_rank_cv,
)
from .core import (
    FactorModel,
    ProblemData,
    column_normalize,
    p_orthogonal_svd,
    rescale_factor_rows,
)
from .deflation import (
    DeflationConfig,
    LassoInitializer,
    RrrInitializer,
    deflate,
)
from .io import (
    atomic_write_text,
    fmt17,
    load_factor_model,
    read_matrix_csv,
    save_factor_model,
    write_matrix_csv,
    write_path_jsonl,
)
from .metrics import (
    EvalReport,
    aggregate_reports,
    estimation_errors,
    selection_rates,
    sparsity_summary,
)
from .simgen import SimSpec, gen_dataset
from .stagewise import StagewiseConfig, run_path
from .tuning import kfold_cv_select

METHODS = (
    "seqstl",
    "seqacs",
    "parstl_l",
    "parstl_r",
    "paracs_l",
    "paracs_r",
    "rrr",
    "lasso",
)
CRITERIA = ("gic", "aic", "bic", "cv")
RRR_RANK_CAP = 10

_DEFAULTS: dict[str, dict] = {}


def _opt(parser, defaults, flag, default=None, help="", **kw):
    dest = flag.lstrip("-").replace("-", "_")
    if default is not None:
        help = f"{help} (default: {default})" if help else f"default: {default}"
    defaults[dest] = default
    parser.add_argument(flag, dest=dest, default=argparse.SUPPRESS, help=help, **kw)


def _add_common(parser, defaults):
    _opt(parser, defaults, "--out-dir", default=".", help="directory for artifacts")
    _opt(parser, defaults, "--seed", default=0, type=int, help="random seed")
    parser.add_argument(
        "--config",
        default=argparse.SUPPRESS,
        help="JSON file of option values (flags override it)",
    )


def _add_sim_flags(parser, defaults):
    _opt(parser, defaults, "--model", default="I", choices=("I", "II", "III"),
         help="simulation model")
    _opt(parser, defaults, "--n", default=40, type=int, help="sample size")
    _opt(parser, defaults, "--p", default=40, type=int, help="number of predictors")
    _opt(parser, defaults, "--q", default=40, type=int, help="number of responses")
    _opt(parser, defaults, "--r-star", default=1, type=int, help="true rank")
    _opt(parser, defaults, "--snr", default=1.0, type=float, help="signal-to-noise ratio")
    _opt(parser, defaults, "--rho", default=0.0, type=float,
         help="AR(1) correlation of the noise columns")
    _opt(parser, defaults, "--s-u", default=3, type=int,
         help="per-layer left support size (models II/III)")
    _opt(parser, defaults, "--s-v", default=4, type=int,
         help="per-layer right support size (models II/III)")


def _add_solver_flags(parser, defaults):
    _opt(parser, defaults, "--rank", type=int,
         help="number of unit-rank layers (required for all methods except lasso;"
              " rrr falls back to CV rank selection)")
    _opt(parser, defaults, "--epsilon", default=1.0, type=float,
         help="stagewise step size")
    _opt(parser, defaults, "--xi", type=float,
         help="stagewise slack; default 1e-6 * epsilon^2")
    _opt(parser, defaults, "--mu", default=1e-4, type=float, help="ridge weight")
    _opt(parser, defaults, "--criterion", default="gic", choices=CRITERIA,
         help="per-layer tuning rule")
    _opt(parser, defaults, "--cv-folds", default=5, type=int, help="CV fold count")
    _opt(parser, defaults, "--early-stop-window", default=300, type=int,
         help="stop a stagewise path after this many steps without"
              " criterion improvement")
    _opt(parser, defaults, "--max-steps", default=100_000, type=int,
         help="stagewise step budget")
    _opt(parser, defaults, "--s-threshold", type=int,
         help="keep only this many largest entries of each pilot layer"
              " (parallel methods)")
    _opt(parser, defaults, "--threads", type=int,
         help="worker count; falls back to env CURE_THREADS, then 1")


def build_parser():
    top = argparse.ArgumentParser(
        prog="curereg",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = top.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="generate a dataset")
    d = _DEFAULTS["simulate"] = {}
    _add_sim_flags(ps, d)
    _add_common(ps, d)

    pf = sub.add_parser("fit", help="fit a model to CSV data")
    d = _DEFAULTS["fit"] = {}
    _opt(pf, d, "--x", help="predictor CSV (n rows, p columns)")
    _opt(pf, d, "--y", help="response CSV; NA marks missing entries")
    _opt(pf, d, "--method", choices=METHODS, help="fitting method")
    _opt(pf, d, "--truth", help="optional truth.json to fill the error columns")
    _add_solver_flags(pf, d)
    _add_common(pf, d)

    pp = sub.add_parser(
        "paths",
        help="export a single-layer stagewise path (X is used exactly as given)",
    )
    d = _DEFAULTS["paths"] = {}
    _opt(pp, d, "--x", help="predictor CSV")
    _opt(pp, d, "--y", help="response CSV; NA marks missing entries")
    _opt(pp, d, "--epsilon", default=1.0, type=float, help="step size")
    _opt(pp, d, "--xi", type=float, help="slack; default 1e-6 * epsilon^2")
    _opt(pp, d, "--mu", default=1e-4, type=float, help="ridge weight")
    _opt(pp, d, "--criterion", default="gic", choices=("gic", "aic", "bic", "none"),
         help="criterion recorded along the path")
    _opt(pp, d, "--early-stop-window", default=300, type=int,
         help="stop after this many steps without criterion improvement")
    _opt(pp, d, "--max-steps", default=100_000, type=int, help="step budget")
    _add_common(pp, d)

    pe = sub.add_parser("eval", help="score a saved model against saved truth")
    d = _DEFAULTS["eval"] = {}
    _opt(pe, d, "--model-json", help="model.json from fit")
    _opt(pe, d, "--truth", help="truth.json from simulate")
    _opt(pe, d, "--x", help="X.csv from simulate (needed for the prediction error)")
    _add_common(pe, d)

    pb = sub.add_parser("benchmark", help="replicated simulate + fit + score")
    d = _DEFAULTS["benchmark"] = {}
    _add_sim_flags(pb, d)
    _opt(pb, d, "--methods", default="seqstl,seqacs,rrr",
         help="comma-separated method list")
    _opt(pb, d, "--reps", default=20, type=int, help="replication count")
    _opt(pb, d, "--trim", default=0.0, type=float,
         help="two-sided trimming fraction for the aggregation (0.1 drops 10%%"
              " of replications in each tail)")
    _add_solver_flags(pb, d)
    _add_common(pb, d)

    return top


def _merge_options(args):
    ns = vars(args)
    command = ns.pop("command")
    merged = dict(_DEFAULTS[command])
    config_path = ns.pop("config", None)
    if config_path is not None:
        with open(config_path) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise SystemExit(f"config {config_path}: expected a JSON object")
        unknown = sorted(set(doc) - set(merged))
        if unknown:
            raise SystemExit(
                f"config {config_path}: unknown option(s) {', '.join(unknown)}"
            )
        merged.update(doc)
    merged.update(ns)
    return command, merged


def _resolve_threads(opts):
    threads = opts.get("threads")
    if threads is None:
        env = os.environ.get("CURE_THREADS", "").strip()
        threads = int(env) if env else 1
    if threads < 1:
        raise SystemExit("--threads must be a positive integer")
    return threads


def _sim_spec(opts):
    return SimSpec(
        model=opts["model"],
        n=opts["n"],
        p=opts["p"],
        q=opts["q"],
        r_star=opts["r_star"],
        snr=opts["snr"],
        rho=opts["rho"],
        s_u=opts["s_u"],
        s_v=opts["s_v"],
        seed=opts["seed"],
    )


def _stagewise_config(opts, record_criterion=None):
    crit = record_criterion
    if crit is None:
        crit = opts["criterion"] if opts["criterion"] in ("gic", "aic", "bic") else "none"
    return StagewiseConfig(
        epsilon=opts["epsilon"],
        xi=opts["xi"],
        mu=opts["mu"],
        max_steps=opts["max_steps"],
        early_stop_window=opts["early_stop_window"],
        criterion=crit,
    )


def _deflation_config(method, opts, threads):
    if opts["rank"] is None:
        raise SystemExit(f"method {method} requires --rank")
    if "stl" in method:
        solver = _stagewise_config(opts)
    else:
        solver = AcsConfig(mu=opts["mu"])
    strategy = "sequential" if method.startswith("seq") else "parallel"
    initializer = None
    if strategy == "parallel":
        initializer = LassoInitializer() if method.endswith("_l") else RrrInitializer()
    return DeflationConfig(
        strategy=strategy,
        rank=opts["rank"],
        solver=solver,
        initializer=initializer,
        s_threshold=opts["s_threshold"],
        parallel_layers_concurrent=threads > 1,
        criterion=opts["criterion"],
        cv_folds=opts["cv_folds"],
        cv_seed=opts["seed"],
        max_workers=threads,
    )


def _fit_scaled(problem, method, opts, threads):
    """Fit on an already column-normalized problem; returns a FactorModel."""
    X, Y = problem.X, problem.Y
    n, p = X.shape
    q = Y.shape[1]
    if method == "lasso":
        if opts["criterion"] == "cv":
            grid = default_lambda_grid(problem)
            sel = kfold_cv_select(
                problem,
                lambda pb: lasso_gic_path(pb, grid)[2],
                folds=opts["cv_folds"],
                seed=opts["seed"],
            )
            C = lasso_gic_path(problem, grid)[2][sel.index][1]
        else:
            C, _, _ = lasso_gic_path(problem, criterion=opts["criterion"])
        if not C.any():
            return FactorModel(())
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return p_orthogonal_svd(X, C, min(n, p, q))
    if method == "rrr":
        if problem.mask is not None:
            raise SystemExit("method rrr requires a fully observed Y")
        ridge = 0.0 if n > p else default_rrr_ridge(X)
        rank = opts["rank"]
        if rank is None:
            rank, _ = select_rank_cv(
                X, Y, r_max=min(n, p, q, RRR_RANK_CAP),
                folds=opts["cv_folds"], ridge=ridge, seed=opts["seed"],
            )
        C = fit_rrr(X, Y, rank, ridge)
        if not C.any():
            return FactorModel(())
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return p_orthogonal_svd(X, C, rank)
    return deflate(problem, _deflation_config(method, opts, threads))


def fit_method(X_raw, Y, mask, method, opts, threads=1):
    """Column-normalize, fit by name, return the model on the raw X scale."""
    if method not in METHODS:
        raise SystemExit(f"unknown method {method!r}")
    Xn, scale = column_normalize(X_raw)
    model = _fit_scaled(ProblemData(Xn, Y, mask), method, opts, threads)
    return FactorModel(tuple(rescale_factor_rows(lay, scale) for lay in model.layers))


def score_model(model, truth_model, C_star, X):
    """EvalReport of a fitted model against the ground truth.

    Layers are aligned to the truth by descending d before the selection
    rates are pooled.
    """
    p, q = C_star.shape
    C_hat = model.to_matrix(shape=(p, q))
    er_c, er_xc = estimation_errors(C_hat, C_star, X)
    if model.rank == 0:
        U_hat = np.zeros((p, 1))
        V_hat = np.zeros((q, 1))
        counts = (0, 0, 0, 0)
    else:
        order = np.argsort(-model.d_values(), kind="stable")
        ordered = FactorModel(tuple(model.layers[i] for i in order))
        U_hat = ordered.stacked_u()
        V_hat = ordered.stacked_v()
        counts = sparsity_summary(model)
    rates = selection_rates(U_hat, V_hat, truth_model.stacked_u(), truth_model.stacked_v())
    return EvalReport(
        er_c=er_c,
        er_xc=er_xc,
        fpr=rates.fpr,
        fnr=rates.fnr,
        u_l0=counts[0],
        u_l20=counts[1],
        v_l0=counts[2],
        v_l20=counts[3],
    )


def _write_report(path, report):
    header = ",".join(EvalReport.csv_header())
    row = ",".join(report.csv_row())
    atomic_write_text(path, header + "\n" + row + "\n")


def _write_timing(path, rows):
    lines = ["stage,seconds"]
    lines += [f"{name},{fmt17(sec)}" for name, sec in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def _load_truth(path):
    model, doc = load_factor_model(path)
    return model, float(doc["sigma"])


def _cmd_simulate(opts):
    out = opts["out_dir"]
    os.makedirs(out, exist_ok=True)
    truth = gen_dataset(_sim_spec(opts))
    write_matrix_csv(os.path.join(out, "X.csv"), truth.X)
    write_matrix_csv(os.path.join(out, "Y.csv"), truth.Y)
    save_factor_model(
        os.path.join(out, "truth.json"),
        truth.factors,
        extra={"sigma": truth.sigma, "spec": asdict(truth.spec)},
    )
    return 0


def _read_xy(opts):
    if not opts["x"] or not opts["y"]:
        raise SystemExit("--x and --y are required")
    X, x_mask = read_matrix_csv(opts["x"], allow_missing=True)
    if x_mask is not None:
        raise SystemExit(f"{opts['x']}: X must not contain missing entries")
    Y, mask = read_matrix_csv(opts["y"], allow_missing=True)
    if X.shape[0] != Y.shape[0]:
        raise SystemExit(
            f"row mismatch: X has {X.shape[0]} rows, Y has {Y.shape[0]}"
        )
    return X, Y, mask


def _cmd_fit(opts):
    out = opts["out_dir"]
    os.makedirs(out, exist_ok=True)
    if not opts["method"]:
        raise SystemExit("--method is required")
    X, Y, mask = _read_xy(opts)
    threads = _resolve_threads(opts)
    t0 = time.perf_counter()
    model = fit_method(X, Y, mask, opts["method"], opts, threads)
    wall = time.perf_counter() - t0
    save_factor_model(
        os.path.join(out, "model.json"),
        model,
        extra={"method": opts["method"]},
    )
    if opts["truth"]:
        truth_model, _ = _load_truth(opts["truth"])
        report = score_model(model, truth_model, truth_model.to_matrix(), X)
    else:
        report = EvalReport()
        if model.rank > 0:
            counts = sparsity_summary(model)
            report.u_l0, report.u_l20, report.v_l0, report.v_l20 = counts
    _write_report(os.path.join(out, "report.csv"), report)
    _write_timing(os.path.join(out, "timing.csv"), [("fit", wall)])
    return 0


def _cmd_paths(opts):
    out = opts["out_dir"]
    os.makedirs(out, exist_ok=True)
    X, Y, mask = _read_xy(opts)
    config = StagewiseConfig(
        epsilon=opts["epsilon"],
        xi=opts["xi"],
        mu=opts["mu"],
        max_steps=opts["max_steps"],
        early_stop_window=opts["early_stop_window"],
        criterion=opts["criterion"],
    )
    path = run_path(ProblemData(X, Y, mask), config)
    write_path_jsonl(os.path.join(out, "path.jsonl"), path)
    return 0


def _cmd_eval(opts):
    out = opts["out_dir"]
    os.makedirs(out, exist_ok=True)
    for key in ("model_json", "truth", "x"):
        if not opts[key]:
            raise SystemExit("--model-json, --truth and --x are required")
    model, _ = load_factor_model(opts["model_json"])
    truth_model, _ = _load_truth(opts["truth"])
    X, x_mask = read_matrix_csv(opts["x"], allow_missing=True)
    if x_mask is not None:
        raise SystemExit(f"{opts['x']}: X must not contain missing entries")
    report = score_model(model, truth_model, truth_model.to_matrix(), X)
    _write_report(os.path.join(out, "report.csv"), report)
    return 0


def _benchmark_rep(payload):
    spec_dict, methods, opts = payload
    truth = gen_dataset(SimSpec(**spec_dict))
    out = {}
    for method in methods:
        t0 = time.perf_counter()
        model = fit_method(truth.X, truth.Y, None, method, opts, threads=1)
        wall = time.perf_counter() - t0
        report = score_model(model, truth.factors, truth.c_star, truth.X)
        report.wall_time_s = wall
        out[method] = report
    return out


def _cmd_benchmark(opts):
    out = opts["out_dir"]
    os.makedirs(out, exist_ok=True)
    methods = [m.strip() for m in opts["methods"].split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise SystemExit(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    if opts["reps"] < 1:
        raise SystemExit("--reps must be a positive integer")
    threads = _resolve_threads(opts)
    base = _sim_spec(opts)
    payloads = [
        ({**asdict(base), "seed": base.seed + i}, methods, opts)
        for i in range(opts["reps"])
    ]
    if threads > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_benchmark_rep, payloads))
    else:
        results = [_benchmark_rep(pl) for pl in payloads]

    metric_names = EvalReport.METRIC_FIELDS
    header = ["method", "reps"]
    for name in metric_names:
        header += [f"{name}_mean", f"{name}_sd"]
    lines = [",".join(header)]
    timing_rows = []
    for method in methods:
        reports = [res[method] for res in results]
        agg = aggregate_reports(reports, trim=opts["trim"])
        cells = [method, str(len(reports))]
        for name in metric_names:
            mean, sd = agg[name]
            cells += [fmt17(mean), fmt17(sd)]
        lines.append(",".join(cells))
        t_mean, t_sd = agg["wall_time_s"]
        timing_rows.append((f"{method}_mean", t_mean))
        timing_rows.append((f"{method}_sd", t_sd))
    atomic_write_text(os.path.join(out, "table.csv"), "\n".join(lines) + "\n")
    _write_timing(os.path.join(out, "timing.csv"), timing_rows)
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "paths": _cmd_paths,
    "eval": _cmd_eval,
    "benchmark": _cmd_benchmark,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    command, opts = _merge_options(args)
    try:
        return _COMMANDS[command](opts)
    except (ValueError, OSError) as exc:
        print(f"curereg {command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

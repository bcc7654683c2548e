"""Command line entry points: simulate / analyze / benchmark / report.

Configuration is a flat INI file with one section per knob group, e.g.

    [simulate]
    n = 120
    T = 30
    p = 50
    c = 2.4
    error_regime = laplace

    [selection]
    kappa = 1.0

    [experiment]
    methods = si,polyhedral,splitting,naive
    replications = 500
    alpha = 0.1
    signals = 1.2,2.4,4.4
    regimes = gaussian,laplace,exponential

    [data]
    id_col = id
    ...
    moderator_cols = S1,S2,S3

Exit codes: 0 success, 2 configuration problem, 3 numeric failure.
"""

import argparse
import configparser
import sys
from dataclasses import replace

import numpy as np

from .comparators import (naive_intervals, null_randomization,
                          polyhedral_intervals, splitting_intervals)
from .data import CsvSchema, ingest_csv, write_csv
from .design import stack_design
from .errors import (ConfigError, ConvergenceError, NumericError, ParseError,
                     SingularityError, ValidationError)
from .estimation import fit_nuisance, sandwich, wcls_refit
from .harness import (ExperimentConfig, emit_intervals, emit_results,
                      parse_results, run_experiment)
from .randlasso import draw_randomization, lambda_rule, solve, tau_rule
from .selective import selective_intervals
from .synth import SimConfig, generate

_SIM_KEYS = {
    "n": int, "t": int, "p": int, "active_size": int, "c": float,
    "rho": float, "theta2": float, "sigma_e": float, "error_regime": str,
    "gamma0_diag": float, "gamma1_const": float, "effect_intercept": float,
    "laplace_scale": float, "exponential_scale": float, "seed": int,
}
_SEL_KEYS = {"kappa": float, "tau": float}
_EXP_KEYS = {
    "methods": str, "replications": int, "alpha": float,
    "nuisance_fraction": float, "select_fraction": float,
    "oracle_cells": int, "signals": str, "regimes": str, "setting": str,
}
_DATA_KEYS = {
    "id_col": str, "time_col": str, "action_col": str, "prob_col": str,
    "response_col": str, "moderator_cols": str,
}


def _read_config(path):
    if path is None:
        return {}
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    known = {"simulate": _SIM_KEYS, "selection": _SEL_KEYS,
             "experiment": _EXP_KEYS, "data": _DATA_KEYS}
    out = {}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown config section [{section}]")
        out[section] = {}
        for key, raw in parser.items(section):
            if key not in known[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
            conv = known[section][key]
            try:
                out[section][key] = conv(raw)
            except ValueError:
                raise ConfigError(
                    f"cannot parse [{section}] {key} = {raw!r} as {conv.__name__}")
    return out


def _sim_config(conf, seed=None):
    sec = dict(conf.get("simulate", {}))
    kwargs = {}
    for src, dst in (("n", "n"), ("t", "T"), ("p", "p"),
                     ("active_size", "active_size"), ("c", "c"),
                     ("rho", "rho"), ("theta2", "theta2"),
                     ("sigma_e", "sigma_e"), ("error_regime", "error_regime"),
                     ("effect_intercept", "effect_intercept"),
                     ("laplace_scale", "laplace_scale"),
                     ("exponential_scale", "exponential_scale"),
                     ("seed", "seed")):
        if src in sec:
            kwargs[dst] = sec[src]
    cfg = SimConfig(**kwargs)
    p = cfg.p
    if "gamma0_diag" in sec:
        cfg = replace(cfg, Gamma0=sec["gamma0_diag"] * np.eye(p))
    if "gamma1_const" in sec:
        cfg = replace(cfg, Gamma1=np.full(p, sec["gamma1_const"]))
    if seed is not None:
        cfg = cfg.with_seed(seed)
    return cfg


def _schema(conf):
    sec = conf.get("data", {})
    if "moderator_cols" not in sec:
        raise ConfigError("[data] moderator_cols is required for analyze")
    return CsvSchema(
        id_col=sec.get("id_col", "id"),
        time_col=sec.get("time_col", "t"),
        action_col=sec.get("action_col", "action"),
        prob_col=sec.get("prob_col", "prob"),
        response_col=sec.get("response_col", "response"),
        moderator_cols=tuple(s.strip() for s in sec["moderator_cols"].split(",")),
    )


def cmd_simulate(args):
    conf = _read_config(args.config)
    cfg = _sim_config(conf, seed=args.seed)
    dataset, truth = generate(cfg)
    out = args.out or "simulated.csv"
    write_csv(dataset, out)
    print(f"wrote {dataset.n} participants x {dataset.T[0]} times "
          f"({dataset.p_raw} moderators) to {out}")
    print(f"true nonzero effects: {list(truth.active_set)} "
          f"each {truth.beta_star[list(truth.active_set)][0] if truth.active_set else 0:.4g}, "
          f"effect intercept {truth.effect_intercept:g}")
    return 0


def _print_interval_table(rows):
    header = f"{'method':<12}{'column':<22}{'estimate':>12}{'lower':>14}{'upper':>14}"
    print(header)
    print("-" * len(header))
    for method, name, est, lo, up in rows:
        print(f"{method:<12}{name:<22}{est:>12.5f}{lo:>14.5f}{up:>14.5f}")


def cmd_analyze(args):
    conf = _read_config(args.config)
    schema = _schema(conf)
    data = ingest_csv(args.data, schema)
    if data.dropped_rows:
        print(f"dropped {data.dropped_rows} incomplete rows", file=sys.stderr)

    exp = conf.get("experiment", {})
    sel = conf.get("selection", {})
    alpha = exp.get("alpha", 0.1)
    kappa = sel.get("kappa", 1.0)
    methods = tuple(m.strip() for m in exp.get("methods", "si").split(","))
    seed = args.seed if args.seed is not None else 0
    ss = np.random.SeedSequence(entropy=[seed])
    seeds = ss.spawn(6)

    nuisance, analysis = fit_nuisance(
        data, exp.get("nuisance_fraction", 1.0 / 3.0), seed=seeds[0])
    design = stack_design(analysis, nuisance)
    tau = sel.get("tau") or tau_rule(design)

    table = []
    for method in methods:
        if method == "si":
            lam = lambda_rule(design, tau, seeds[1], kappa=kappa)
            rand = draw_randomization(design.p, tau, seeds[2])
            selection = solve(design, lam, rand)
            targets = selection.penalized_active()
            if not targets:
                print("si: empty selection (no moderators survived the penalty)")
                continue
            bhatE = wcls_refit(design, list(selection.E))
            sw = sandwich(design, list(selection.E), bhatE)
            for r in selective_intervals(design, selection, sw, bhatE,
                                         alpha, rand.Omega):
                table.append(("si", design.col_names[r["j"]], r["estimate"],
                              r["lower"], r["upper"]))
        elif method in ("polyhedral", "naive"):
            lam0 = lambda_rule(design, 0.0, seeds[3], kappa=kappa)
            fn = polyhedral_intervals if method == "polyhedral" else naive_intervals
            report = fn(design, lam0, alpha)
            if report.empty:
                print(f"{method}: empty selection")
                continue
            for iv in report.intervals:
                table.append((method, design.col_names[iv.j], iv.estimate,
                              iv.lower, iv.upper))
        elif method == "splitting":
            report = splitting_intervals(design, exp.get("select_fraction", 0.7),
                                         alpha, seed=seeds[4], kappa=kappa)
            if report.empty:
                print("splitting: empty selection")
                continue
            for iv in report.intervals:
                table.append((method, design.col_names[iv.j], iv.estimate,
                              iv.lower, iv.upper))
        else:
            raise ConfigError(f"unknown method '{method}'")

    if table:
        _print_interval_table(table)
    if args.out and table:
        import csv
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("method", "column", "estimate", "lower", "upper"))
            for row in table:
                writer.writerow([row[0], row[1], repr(row[2]), repr(row[3]),
                                 repr(row[4])])
        print(f"wrote {args.out}")
    return 0


_SIGNAL_LABELS = {1.2: "low", 2.4: "medium", 4.4: "high"}


def cmd_benchmark(args):
    import os
    conf = _read_config(args.config)
    exp = conf.get("experiment", {})
    sel = conf.get("selection", {})
    seed = args.seed if args.seed is not None else 0
    methods = tuple(m.strip() for m in
                    exp.get("methods", ",".join(("si", "polyhedral",
                                                 "splitting", "naive"))).split(","))
    signals = ([float(s) for s in exp["signals"].split(",")]
               if "signals" in exp else [None])
    regimes = ([r.strip() for r in exp["regimes"].split(",")]
               if "regimes" in exp else [None])

    out_dir = args.out or "results"
    os.makedirs(out_dir, exist_ok=True)

    all_rows, all_records = [], []
    for regime in regimes:
        for c in signals:
            sim = _sim_config(conf)
            if c is not None:
                sim = replace(sim, c=c)
            if regime is not None:
                sim = replace(sim, error_regime=regime)
            label = exp.get("setting")
            if label is None:
                sig = _SIGNAL_LABELS.get(sim.c, f"c={sim.c:g}")
                label = f"{sim.error_regime}/{sig}"
            cfg = ExperimentConfig(
                sim=sim, methods=methods,
                replications=exp.get("replications", 500),
                alpha=exp.get("alpha", 0.1),
                kappa=sel.get("kappa", 1.0), tau=sel.get("tau"),
                nuisance_fraction=exp.get("nuisance_fraction", 1.0 / 3.0),
                select_fraction=exp.get("select_fraction", 0.7),
                seed=seed, setting=label, threads=args.threads,
                oracle_cells=exp.get("oracle_cells", 1_000_000),
            )
            rows, records = run_experiment(cfg)
            all_rows.extend(rows)
            all_records.extend(records)
            for row in rows:
                print(f"{row.setting:24s} {row.method:<12} "
                      f"coverage={_fmt(row.coverage)} fcr={_fmt(row.fcr)} "
                      f"len={_fmt(row.avg_length_finite)} "
                      f"finite={_fmt(row.pct_finite)} n_sel={row.n_sel}")

    emit_results(all_rows, "csv", f"{out_dir}/results.csv")
    emit_results(all_rows, "json", f"{out_dir}/results.json")
    emit_intervals(all_records, f"{out_dir}/intervals.csv")
    print(f"wrote {out_dir}/results.csv, results.json, intervals.csv")
    return 0


def _fmt(x):
    return "  n/a" if x is None else f"{x:.3f}"


def cmd_report(args):
    rows = []
    for path in args.results:
        rows.extend(parse_results(path))
    if not rows:
        raise ConfigError("no result rows found")
    print(f"{'setting':<24}{'method':<12}{'coverage':>10}{'fcr':>8}"
          f"{'length':>10}{'finite':>9}{'n_sel':>7}")
    for row in sorted(rows, key=lambda r: (r.setting, r.method)):
        print(f"{row.setting:<24}{row.method:<12}{_fmt(row.coverage):>10}"
              f"{_fmt(row.fcr):>8}{_fmt(row.avg_length_finite):>10}"
              f"{_fmt(row.pct_finite):>9}{row.n_sel:>7}")
    if args.out:
        emit_results(rows, "csv", args.out)
        print(f"wrote {args.out}")
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="INI config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", default=None, help="output path")

    parser = argparse.ArgumentParser(
        prog="selmod",
        description="selective inference for effect moderation in MRTs")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", parents=[common],
                           help="write a synthetic dataset CSV")
    p_sim.set_defaults(func=cmd_simulate)

    p_an = sub.add_parser("analyze", parents=[common],
                          help="selection + intervals on a dataset CSV")
    p_an.add_argument("--data", required=True, help="dataset CSV path")
    p_an.set_defaults(func=cmd_analyze)

    p_bm = sub.add_parser("benchmark", parents=[common],
                          help="Monte-Carlo coverage benchmark over a config grid")
    p_bm.set_defaults(func=cmd_benchmark)

    p_rep = sub.add_parser("report", parents=[common],
                           help="aggregate result files into one table")
    p_rep.add_argument("results", nargs="+", help="results CSV/JSON files")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, ParseError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, ConvergenceError, SingularityError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``madsbo <subcommand> --config PATH``.

Exit codes: 0 on success, 1 on configuration errors, 2 when a run diverges.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from ..errors import ConfigError, DivergedError
from .config import ExperimentConfig, load_config, parse_int_list
from . import runner

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2


def _load(args) -> ExperimentConfig:
    exp = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "problem", None):
        exp.problem = args.problem
    if args.out:
        exp.out = args.out
    if args.seeds:
        exp.seeds = parse_int_list(args.seeds, "--seeds")
    if args.no_plots:
        exp.emit_plots = False
    if args.jobs:
        exp.jobs = args.jobs
    return exp


def _cmd_run(args):
    exp = _load(args)
    summary = runner.cli_run(exp)
    print(json.dumps(summary["aggregate"], indent=2, sort_keys=True))
    print(f"wrote {exp.out_dir()}")


def _cmd_rate_sweep(args):
    exp = _load(args)
    ks = parse_int_list(args.ks, "--ks") if args.ks else None
    res = runner.cli_rate_sweep(exp, ks=ks)
    for K, s, c in zip(res["K"], res["min_stationarity"], res["tail_consensus"]):
        print(f"K={K:<7d} min_stationarity={s:.4e} tail_consensus={c:.4e}")
    print(f"stationarity slope {res['stationarity_slope']:+.3f}")
    print(f"consensus slope    {res['consensus_slope']:+.3f}")


def _cmd_baseline(args):
    exp = _load(args)
    report = runner.cli_baseline_compare(exp)
    print(f"{'method':<8} {'terminal_stationarity':>22} {'comm_scalars':>14}")
    for method, r in report.items():
        print(f"{method:<8} {r['terminal_stationarity']:>22.6e} {r['comm_scalars']:>14d}")


def _cmd_hypergrad(args):
    exp = _load(args)
    rows = runner.hypergrad_check(exp, points=args.points, N=args.N)
    for r in rows:
        print(f"point {r['point']}: |grad|={r['truth_norm']:.4e} abs_err={r['abs_error']:.3e} "
              f"rel_err={r['rel_error']:.3e}")


def _cmd_gamma(args):
    exp = _load(args)
    gammas = [float(g) for g in args.gammas.split(",")] if args.gammas else None
    rows = runner.gamma_sweep(exp, gammas=gammas, N=args.N)
    out = exp.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "gamma_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gamma", "predicted_radius", "status", "max_agent_error"])
        for r in rows:
            w.writerow([runner.fmt(r["gamma"]), runner.fmt(r["predicted_radius"]), r["status"],
                        runner.fmt(r["max_agent_error"])])
    for r in rows:
        err = "-" if r["max_agent_error"] is None else f"{r['max_agent_error']:.3e}"
        print(f"gamma={r['gamma']:.4f} radius={r['predicted_radius']:.4f} {r['status']:<11} {err}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="madsbo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", type=Path, help="INI experiment config")
        p.add_argument("--out", help="output directory (default $MADSBO_OUT or ./results)")
        p.add_argument("--seeds", help="comma-separated seeds, overrides the config")
        p.add_argument("--no-plots", action="store_true", help="write CSVs only")
        p.add_argument("--jobs", type=int, help="worker processes for independent seeds")
        p.set_defaults(fn=fn)
        return p

    add("run", _cmd_run, "run MA-DSBO for every seed")
    p = add("rate-sweep", _cmd_rate_sweep, "fit log-log rates over a list of K")
    p.add_argument("--ks", help="comma-separated K values (>= 3)")
    add("baseline-compare", _cmd_baseline, "compare against naive local hypergradients")
    p = add("hypergrad-check", _cmd_hypergrad, "estimator against the closed form")
    p.add_argument("--problem", help="registered problem name")
    p.add_argument("--points", type=int, default=3)
    p.add_argument("--N", type=int, default=300)
    p = add("gamma-sweep", _cmd_gamma, "locate the stable HIGP stepsize range")
    p.add_argument("--problem", help="registered problem name")
    p.add_argument("--gammas", help="comma-separated stepsizes")
    p.add_argument("--N", type=int, default=300)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergedError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

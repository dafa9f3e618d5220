"""Experiment orchestration: per-seed runs, CSV traces, summaries, comparisons."""
from __future__ import annotations

import csv
import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..driver import TRACE_COLUMNS, RunConfig, madsbo_run, rate_sweep
from ..errors import BaselineUnavailable, ConfigError, DivergedError
from ..higp import QuadOracle, default_gamma, higp_run, tracking_radius
from ..hypergrad import estimate_hypergradient, local_hypergradients
from ..netgraph import build_complete, make_topology
from ..problems import make_problem
from . import plots
from .config import ExperimentConfig, echo

INT_COLUMNS = {"k", "samples_cum", "comm_scalars_cum"}
CONVERGED_TOL = 1e-6


def fmt(v) -> str:
    """CSV cell: empty for missing, exact ``repr`` for floats."""
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def build_problem(exp: ExperimentConfig):
    try:
        return make_problem(exp.problem, **exp.problem_params)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    except TypeError as exc:
        raise ConfigError(f"[problem] bad parameters for {exp.problem!r}: {exc}") from None


def write_trace(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for rec in trace:
            w.writerow([fmt(v) for v in rec.row()])


def read_trace(path) -> list:
    """Rows as dicts; empty cells become ``None``."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        for raw in reader:
            row = {}
            for k, v in raw.items():
                if v == "":
                    row[k] = None
                elif k in INT_COLUMNS:
                    row[k] = int(v)
                else:
                    row[k] = float(v)
            rows.append(row)
    return rows


def _run_one(exp: ExperimentConfig, seed: int, run_dir: str, run_cfg: RunConfig | None = None):
    # worker entry point; builds its own problem so nothing mutable is shared
    cfg = dataclasses.replace(run_cfg or exp.run, master_seed=int(seed))
    problem = build_problem(exp)
    t0 = time.perf_counter()
    res = madsbo_run(cfg, problem)
    wall = time.perf_counter() - t0
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_trace(run_dir / "trace.csv", res.trace)
    return {"seed": int(seed), "wall_time": wall, "counters": res.counters.as_dict()}


def run_seeds(exp: ExperimentConfig, out_dir, run_cfg: RunConfig | None = None) -> list:
    """Run every seed, each writing ``seed_<s>/trace.csv``; results come back in seed order."""
    out_dir = Path(out_dir)
    dirs = [str(out_dir / f"seed_{s}") for s in exp.seeds]
    if exp.jobs > 1 and len(exp.seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(exp.jobs, len(exp.seeds))) as pool:
            futures = [pool.submit(_run_one, exp, s, d, run_cfg) for s, d in zip(exp.seeds, dirs)]
            return [f.result() for f in futures]
    return [_run_one(exp, s, d, run_cfg) for s, d in zip(exp.seeds, dirs)]


def summarize_traces(traces: dict) -> dict:
    """Aggregate statistics from traces read back from disk.

    Per seed: minimum stationarity over the trace (``None`` when absent),
    final consensus of ``x``, final samples and communicated scalars and the
    final upper loss. The aggregate is the mean over seeds in seed order.
    """
    per_seed = {}
    for seed, rows in traces.items():
        stat = [r["stationarity"] for r in rows if r["stationarity"] is not None]
        last = rows[-1]
        per_seed[str(seed)] = {
            "min_stationarity": min(stat) if stat else None,
            "final_consensus_x": last["consensus_x"],
            "final_upper_loss": last["upper_loss"],
            "samples": last["samples_cum"],
            "comm_scalars": last["comm_scalars_cum"],
            "records": len(rows),
        }
    agg = {}
    for key in ("min_stationarity", "final_consensus_x", "final_upper_loss"):
        vals = [v[key] for v in per_seed.values() if v[key] is not None]
        agg[key] = float(np.mean(vals)) if vals else None
    agg["samples"] = sum(v["samples"] for v in per_seed.values())
    agg["comm_scalars"] = sum(v["comm_scalars"] for v in per_seed.values())
    return {"per_seed": per_seed, "aggregate": agg}


def cli_run(exp: ExperimentConfig, out_dir=None) -> dict:
    """Run all seeds and write traces, ``summary.json``, ``config.json`` and plots."""
    exp.validate()
    out_dir = Path(out_dir or exp.out_dir())
    out_dir.mkdir(parents=True, exist_ok=True)
    build_problem(exp)
    results = run_seeds(exp, out_dir)
    traces = {s: read_trace(out_dir / f"seed_{s}" / "trace.csv") for s in exp.seeds}
    summary = summarize_traces(traces)
    summary["wall_time"] = {str(r["seed"]): r["wall_time"] for r in results}
    summary["counters"] = {str(r["seed"]): r["counters"] for r in results}
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    with open(out_dir / "config.json", "w") as fh:
        json.dump(echo(exp), fh, indent=2, sort_keys=True)
    if exp.emit_plots:
        plots.emit_trace_plots(traces, out_dir / "plots")
    return summary


def cli_rate_sweep(exp: ExperimentConfig, out_dir=None, ks=None) -> dict:
    """Theorem-schedule sweep over ``ks``; writes ``sweep.csv`` and ``slopes.csv``."""
    exp.validate()
    ks = list(ks or exp.ks)
    if len(ks) < 3:
        raise ConfigError(f"rate sweep needs >= 3 values of K, got {len(ks)}")
    out_dir = Path(out_dir or exp.out_dir())
    out_dir.mkdir(parents=True, exist_ok=True)
    problem = build_problem(exp)
    if not problem.has_ground_truth:
        raise ConfigError(f"problem {exp.problem!r} has no closed-form hypergradient")
    cfg = dataclasses.replace(exp.run, schedule="theorem")
    try:
        res = rate_sweep(cfg, problem, ks, exp.seeds, jobs=exp.jobs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["K", "min_stationarity", "tail_consensus"])
        for row in zip(res.K, res.min_stationarity, res.tail_consensus):
            w.writerow([fmt(v) for v in row])
    with open(out_dir / "slopes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "slope"])
        w.writerow(["stationarity", fmt(res.stationarity_slope)])
        w.writerow(["consensus", fmt(res.consensus_slope)])
    if exp.emit_plots:
        plots.plot_sweep(res.K, res.min_stationarity, res.stationarity_slope,
                         out_dir / "sweep_stationarity.svg")
        plots.plot_sweep(res.K, res.tail_consensus, res.consensus_slope,
                         out_dir / "sweep_consensus.svg", ylabel="tail consensus")
    return {"K": res.K, "min_stationarity": res.min_stationarity,
            "tail_consensus": res.tail_consensus,
            "stationarity_slope": res.stationarity_slope,
            "consensus_slope": res.consensus_slope}


def cli_baseline_compare(exp: ExperimentConfig, out_dir=None) -> dict:
    """MA-DSBO against the naive local-hypergradient direction on the same seeds."""
    exp.validate()
    out_dir = Path(out_dir or exp.out_dir())
    problem = build_problem(exp)
    if not problem.has_ground_truth:
        raise ConfigError(f"problem {exp.problem!r} has no closed-form hypergradient")
    try:
        with problem.uncounted():
            local_hypergradients(problem, np.zeros((problem.p, problem.n)))
    except BaselineUnavailable as exc:
        raise ConfigError(f"baseline unavailable: {exc}") from None
    report = {}
    for method in ("madsbo", "naive"):
        cfg = dataclasses.replace(exp.run, direction=method)
        sub = out_dir / method
        run_seeds(exp, sub, cfg)
        rows = {s: read_trace(sub / f"seed_{s}" / "trace.csv") for s in exp.seeds}
        report[method] = {
            "terminal_stationarity": float(np.mean([r[-1]["stationarity"] for r in rows.values()])),
            "comm_scalars": int(np.mean([r[-1]["comm_scalars_cum"] for r in rows.values()])),
        }
    with open(out_dir / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "terminal_stationarity", "comm_scalars"])
        for method, r in report.items():
            w.writerow([method, fmt(r["terminal_stationarity"]), fmt(r["comm_scalars"])])
    return report


def hypergrad_check(exp: ExperimentConfig, points=3, N=300, seed=0) -> list:
    """Deterministic estimates at consensus points against the closed form.

    Uses the complete graph so that the check isolates the estimator from
    the topology. Returns one dict per probe point.
    """
    problem = build_problem(exp)
    if not problem.has_ground_truth:
        raise ConfigError(f"problem {exp.problem!r} has no closed-form hypergradient")
    W = build_complete(problem.n)
    c = problem.declared_constants()
    gamma = exp.run.gamma or default_gamma(W, c["mu_g"], c["L_g1"])
    rng = np.random.default_rng(seed)
    out = []
    with problem.uncounted():
        for j in range(points):
            x = rng.standard_normal(problem.p) if j else np.zeros(problem.p)
            X, Y = problem.tile(x, problem.lower_solution(x))
            est = estimate_hypergradient(W, problem, X, Y, gamma, N).ubar
            truth = problem.hypergradient(x)
            err = float(np.linalg.norm(est - truth))
            rel = err / max(float(np.linalg.norm(truth)), 1e-12)
            out.append({"point": j, "abs_error": err, "rel_error": rel,
                        "truth_norm": float(np.linalg.norm(truth))})
    return out


def gamma_sweep(exp: ExperimentConfig, gammas=None, N=300) -> list:
    """Noiseless HIGP at a consensus point for a grid of stepsizes.

    Reports the final distance of each agent's ``z`` to the centralized
    solution (or divergence) next to the predicted worst mode radius. A
    stepsize counts as converged when that distance is at most ``1e-6``.
    """
    problem = build_problem(exp)
    run = exp.run
    try:
        W = make_topology(run.topology, problem.n, run.ring_w, run.topology_path)
    except ValueError as exc:
        raise ConfigError(f"topology: {exc}") from None
    c = problem.declared_constants()
    L = float(c["L_g1"])
    if gammas is None:
        gammas = np.round(np.linspace(0.05, 1.0, 20) / L, 12)
    x = np.zeros(problem.p)
    with problem.uncounted():
        if problem.has_ground_truth:
            y = problem.lower_solution(x)
        else:
            y = np.zeros(problem.q)
        X, Y = problem.tile(x, y)
        quad = QuadOracle(hv=lambda t, V: problem.hess_gyy_vec(X, Y, V),
                          rhs=lambda t: problem.grad_fy(X, Y))
        ref = higp_run(build_complete(problem.n), quad, default_gamma(build_complete(problem.n),
                       c["mu_g"], L), 2000).z.mean(axis=1)
        modes = np.linalg.eigvalsh(W.w)
        rows = []
        for g in gammas:
            radius = max(tracking_radius(m, h, g) for m in modes for h in {c["mu_g"], L})
            try:
                z = higp_run(W, quad, float(g), N).z
                err = float(np.max(np.linalg.norm(z - ref[:, None], axis=0)))
                status = "converged" if err <= CONVERGED_TOL else "unconverged"
            except DivergedError:
                err, status = None, "diverged"
            rows.append({"gamma": float(g), "predicted_radius": float(radius),
                         "status": status, "max_agent_error": err})
    return rows


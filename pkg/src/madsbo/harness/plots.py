"""Deterministic SVG plots of traces and rate sweeps.

Figures are built with the object-oriented matplotlib API (no pyplot state)
and saved with a fixed hash salt and no date stamp, so the same data always
produces byte-identical files. Each plotted series carries a ``gid`` of the
form ``series-<label>`` that tests can find in the SVG.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.figure import Figure

SVG_META = {"Date": None, "Creator": "madsbo"}
RC = {"svg.hashsalt": "madsbo", "path.simplify": False, "svg.fonttype": "none"}

# metrics worth plotting on a log axis
LOG_METRICS = {"stationarity", "surrogate", "consensus_x", "consensus_y", "inner_residual"}
PLOT_METRICS = ("stationarity", "surrogate", "consensus_x", "consensus_y", "inner_residual",
                "upper_loss")


def _save(fig, path):
    with matplotlib.rc_context(RC):
        fig.savefig(path, format="svg", metadata=SVG_META)


def plot_metric(series: dict, metric: str, path, xlabel="k"):
    """One figure for ``metric``; ``series`` maps label to ``(xs, ys)``."""
    fig = Figure(figsize=(5, 3.5))
    ax = fig.add_subplot()
    for label, (xs, ys) in series.items():
        ax.plot(xs, ys, lw=1.2, label=str(label), gid=f"series-{label}")
    positive = all(np.all(np.asarray(ys) > 0) for _, ys in series.values())
    if metric in LOG_METRICS and positive:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(metric)
    if len(series) > 1:
        ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)
    return Path(path)


def emit_trace_plots(traces: dict, out_dir) -> list:
    """Write one SVG per available metric, plus ``upper_loss`` against communicated scalars.

    ``traces`` maps seed to a list of row dicts as read back from the CSVs.
    Metrics that are empty in every trace are skipped.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for metric in PLOT_METRICS:
        series = {}
        for seed, rows in traces.items():
            pts = [(r["k"], r[metric]) for r in rows if r[metric] is not None]
            if pts:
                xs, ys = zip(*pts)
                series[f"seed{seed}"] = (list(xs), list(ys))
        if series:
            written.append(plot_metric(series, metric, out_dir / f"{metric}.svg"))
    comm = {}
    for seed, rows in traces.items():
        pts = [(r["comm_scalars_cum"], r["upper_loss"]) for r in rows if r["upper_loss"] is not None]
        if pts:
            xs, ys = zip(*pts)
            comm[f"seed{seed}"] = (list(xs), list(ys))
    if comm:
        written.append(plot_metric(comm, "upper_loss", out_dir / "upper_loss_vs_comm.svg",
                                   xlabel="communicated scalars"))
    return written


def plot_sweep(Ks, values, slope, path, ylabel="min stationarity"):
    """Log-log plot of a sweep with the fitted line and its slope written on the axes."""
    Ks = np.asarray(Ks, dtype=float)
    values = np.asarray(values, dtype=float)
    fig = Figure(figsize=(5, 3.5))
    ax = fig.add_subplot()
    ax.loglog(Ks, values, "o-", label="measured", gid="series-measured")
    intercept = np.mean(np.log(values) - slope * np.log(Ks))
    ax.loglog(Ks, np.exp(intercept) * Ks ** slope, "--", label="fit", gid="series-fit")
    ax.text(0.05, 0.08, f"slope = {slope:.3f}", transform=ax.transAxes, gid="slope-annotation")
    ax.set_xlabel("K")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)
    return Path(path)

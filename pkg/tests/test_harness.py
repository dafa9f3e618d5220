import csv
import json
import re
from pathlib import Path

import numpy as np
import pytest

from madsbo.driver import TRACE_COLUMNS, RunConfig
from madsbo.errors import ConfigError
from madsbo.harness import (ExperimentConfig, cli_baseline_compare, cli_rate_sweep, cli_run,
                            load_config, read_trace, summarize_traces)
from madsbo.harness.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def small_exp(tmp_path, **run):
    run = {"K": 10, **run}
    return ExperimentConfig(problem="quadratic",
                            problem_params={"sigma_f": 0.5, "sigma_g1": 0.5, "sigma_g2": 0.5,
                                            "seed": 1},
                            run=RunConfig(**run), seeds=[0], out=str(tmp_path))


def write_ini(path, text):
    path.write_text(text)
    return path


def series_points(svg_text, gid):
    m = re.search(r'<g id="%s">\s*<path d="([^"]*)"' % re.escape(gid), svg_text)
    assert m, gid
    return len(re.findall(r"[ML]", m.group(1)))


def test_minimal_config_runs_and_records_every_step(tmp_path):
    summary = cli_run(small_exp(tmp_path))
    rows = read_trace(tmp_path / "seed_0" / "trace.csv")
    assert len(rows) == 11
    assert [r["k"] for r in rows] == list(range(11))
    assert summary["per_seed"]["0"]["records"] == 11
    for name in ("summary.json", "config.json"):
        assert (tmp_path / name).is_file()


def test_trace_columns_are_exact(tmp_path):
    cli_run(small_exp(tmp_path))
    with open(tmp_path / "seed_0" / "trace.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert tuple(header) == TRACE_COLUMNS
    assert len(header) == 9


def test_reruns_are_bitwise_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cli_run(small_exp(a))
    cli_run(small_exp(b))
    for rel in ("seed_0/trace.csv", "plots/stationarity.svg"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_parallel_seeds_match_serial(tmp_path):
    outs = {}
    for jobs in (1, 2):
        exp = small_exp(tmp_path / f"j{jobs}")
        exp.seeds, exp.jobs = [0, 1, 2], jobs
        cli_run(exp)
        outs[jobs] = exp
    for s in (0, 1, 2):
        rel = f"seed_{s}/trace.csv"
        assert (tmp_path / "j1" / rel).read_bytes() == (tmp_path / "j2" / rel).read_bytes()
    # different seeds give different traces
    assert (tmp_path / "j1/seed_0/trace.csv").read_bytes() != \
        (tmp_path / "j1/seed_1/trace.csv").read_bytes()


def test_summary_matches_values_recomputed_from_csv(tmp_path):
    exp = small_exp(tmp_path)
    exp.seeds = [3, 4]
    cli_run(exp)
    summary = json.loads((tmp_path / "summary.json").read_text())
    mins, finals = [], []
    for s in (3, 4):
        with open(tmp_path / f"seed_{s}" / "trace.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        stat = [float(r["stationarity"]) for r in rows]
        mins.append(min(stat))
        finals.append(float(rows[-1]["consensus_x"]))
        assert summary["per_seed"][str(s)]["min_stationarity"] == min(stat)
        assert summary["per_seed"][str(s)]["samples"] == int(rows[-1]["samples_cum"])
    assert summary["aggregate"]["min_stationarity"] == float(np.mean(mins))
    assert summary["aggregate"]["final_consensus_x"] == float(np.mean(finals))


def test_summarize_handles_missing_stationarity():
    rows = [{"stationarity": None, "consensus_x": 1.0, "upper_loss": 0.5, "samples_cum": 3,
             "comm_scalars_cum": 7}]
    out = summarize_traces({0: rows})
    assert out["per_seed"]["0"]["min_stationarity"] is None
    assert out["aggregate"]["min_stationarity"] is None
    assert out["aggregate"]["comm_scalars"] == 7


def test_plots_reference_every_record(tmp_path):
    cli_run(small_exp(tmp_path))
    plots = sorted(p.name for p in (tmp_path / "plots").glob("*.svg"))
    assert "stationarity.svg" in plots and "upper_loss_vs_comm.svg" in plots
    svg = (tmp_path / "plots" / "stationarity.svg").read_text()
    assert series_points(svg, "series-seed0") == 11


def test_no_plots_writes_no_svg(tmp_path):
    assert main(["run", "--config", str(CONFIGS / "quadratic_small.ini"), "--out",
                 str(tmp_path), "--no-plots"]) == 0
    assert list(tmp_path.rglob("*.svg")) == []
    assert (tmp_path / "seed_0" / "trace.csv").is_file()


def test_cli_rejects_bad_alpha(tmp_path, capsys):
    ini = write_ini(tmp_path / "bad.ini", "[run]\nK = 5\nschedule = manual\nalpha = 1.5\n")
    assert main(["run", "--config", str(ini), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "alpha" in err
    assert not (tmp_path / "o" / "seed_0").exists()


def test_cli_reports_divergence(tmp_path, capsys):
    ini = write_ini(tmp_path / "div.ini", "[problem]\nname = quadratic\nseed = 0\n\n"
                    "[run]\nK = 50\ngamma = 5.0\nstochastic = false\n")
    assert main(["run", "--config", str(ini), "--out", str(tmp_path / "o"), "--no-plots"]) == 2
    assert "diverged" in capsys.readouterr().err


def test_cli_unknown_keys_and_sections(tmp_path):
    for text in ("[run]\nKK = 3\n", "[extra]\na = 1\n", "[experiment]\nfoo = 1\n",
                 "[problem]\nname = nothing\n", "[run]\nK = many\n"):
        ini = write_ini(tmp_path / "x.ini", text)
        assert main(["run", "--config", str(ini), "--out", str(tmp_path / "o")]) == 1


def test_shipped_configs_parse():
    for path in sorted(CONFIGS.glob("*.ini")):
        exp = load_config(path)
        exp.validate()
    lr = load_config(CONFIGS / "logreg.ini")
    assert lr.problem == "logreg" and lr.run.a0 == 3.0 and lr.seeds == [0, 1, 2]
    assert load_config(CONFIGS / "rate_sweep.ini").ks == (250, 1000, 4000)


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MADSBO_OUT", str(tmp_path / "env"))
    assert ExperimentConfig().out_dir() == tmp_path / "env"
    assert ExperimentConfig(out="explicit").out_dir() == Path("explicit")
    monkeypatch.delenv("MADSBO_OUT")
    assert ExperimentConfig().out_dir() == Path("results")


def test_rate_sweep_writes_outputs_and_slope_annotation(tmp_path):
    exp = small_exp(tmp_path)
    exp.seeds = [0, 1]
    res = cli_rate_sweep(exp, ks=[20, 40, 80])
    assert len(res["K"]) == 3
    with open(tmp_path / "slopes.csv", newline="") as fh:
        slopes = {r["metric"]: float(r["slope"]) for r in csv.DictReader(fh)}
    assert slopes["stationarity"] == res["stationarity_slope"]
    svg = (tmp_path / "sweep_stationarity.svg").read_text()
    assert 'id="slope-annotation"' in svg
    assert f"slope = {res['stationarity_slope']:.3f}" in svg


def test_rate_sweep_rejects_single_K(tmp_path):
    with pytest.raises(ConfigError):
        cli_rate_sweep(small_exp(tmp_path), ks=[100])
    assert main(["rate-sweep", "--config", str(CONFIGS / "quadratic_small.ini"), "--out",
                 str(tmp_path), "--ks", "100"]) == 1


def test_baseline_compare_heterogeneous(tmp_path):
    exp = load_config(CONFIGS / "baseline.ini")
    assert (exp.run.K, exp.run.a0, exp.run.b0) == (2000, 0.5, 4.0)
    exp.out = str(tmp_path)
    exp.emit_plots = False
    report = cli_baseline_compare(exp)
    assert report["madsbo"]["terminal_stationarity"] < report["naive"]["terminal_stationarity"]
    assert report["naive"]["terminal_stationarity"] > 0.1
    assert report["madsbo"]["comm_scalars"] > 0
    with open(tmp_path / "compare.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["method"] for r in rows] == ["madsbo", "naive"]
    assert {"terminal_stationarity", "comm_scalars"} <= set(rows[0])


def test_baseline_compare_homogeneous(tmp_path):
    exp = ExperimentConfig(problem="quadratic",
                           problem_params={"heterogeneity": 0.0, "n": 4, "p": 3, "q": 3,
                                           "seed": 2},
                           run=RunConfig(K=2000, stochastic=False, a0=0.5, b0=4.0),
                           out=str(tmp_path),
                           emit_plots=False)
    report = cli_baseline_compare(exp)
    for method in ("madsbo", "naive"):
        assert report[method]["terminal_stationarity"] <= 1e-3


def test_baseline_compare_unavailable_for_logreg(tmp_path):
    ini = write_ini(tmp_path / "lr.ini", "[problem]\nname = logreg\np = 3\nn = 2\n"
                    "samples_per_node = 10\n\n[run]\nK = 3\n")
    assert main(["baseline-compare", "--config", str(ini), "--out", str(tmp_path / "o")]) == 1


def test_hypergrad_check_command(capsys):
    assert main(["hypergrad-check", "--problem", "quadratic", "--points", "2"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 2
    errs = [float(re.search(r"rel_err=(\S+)", line).group(1)) for line in out]
    assert max(errs) <= 1e-5


def test_gamma_sweep_command(tmp_path, capsys):
    assert main(["gamma-sweep", "--problem", "quadratic", "--gammas", "0.05,0.1,0.6",
                 "--out", str(tmp_path)]) == 0
    with open(tmp_path / "gamma_sweep.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    status = [r["status"] for r in rows]
    assert status[:2] == ["converged", "converged"]
    assert status[2] == "diverged"
    assert float(rows[2]["predicted_radius"]) > 1

"""INI experiment configuration.

A config has up to four sections::

    [problem]      name plus keyword parameters for the problem factory
    [run]          RunConfig fields
    [experiment]   seeds, out, plots, jobs
    [sweep]        ks (for rate-sweep)

Values in ``[problem]`` are parsed as int, float or bool when they look like
one and kept as strings otherwise. ``configs/annotated.ini`` documents every key.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

from ..driver import RunConfig
from ..errors import ConfigError

OUT_ENV = "MADSBO_OUT"
DEFAULT_OUT = "results"
DEFAULT_KS = (250, 1000, 4000)

_BOOL = {"true": True, "yes": True, "on": True, "false": False, "no": False, "off": False}


@dataclass
class ExperimentConfig:
    problem: str = "quadratic"
    problem_params: dict = field(default_factory=dict)
    run: RunConfig = field(default_factory=RunConfig)
    seeds: list = field(default_factory=lambda: [0])
    out: str = ""
    emit_plots: bool = True
    jobs: int = 1
    ks: tuple = DEFAULT_KS

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("seeds must be a nonempty list")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        self.run.validate()

    def out_dir(self) -> Path:
        return Path(self.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def parse_scalar(text: str):
    s = text.strip()
    if s.lower() in _BOOL:
        return _BOOL[s.lower()]
    if s.lower() in ("none", ""):
        return None
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


def parse_int_list(text: str, what="list") -> list:
    try:
        return [int(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise ConfigError(f"{what} must be comma-separated integers, got {text!r}") from None


def _coerce(name, ftype, raw):
    s = raw.strip()
    args = typing.get_args(ftype) or (ftype,)
    if type(None) in args and s.lower() in ("none", ""):
        return None
    base = next(a for a in args if a is not type(None))
    try:
        if base is bool:
            if s.lower() not in _BOOL:
                raise ValueError
            return _BOOL[s.lower()]
        if base is int:
            return int(s)
        if base is float:
            return float(s)
    except ValueError:
        raise ConfigError(f"[run] {name}: cannot parse {raw!r} as {base.__name__}") from None
    return s


def run_config_from_mapping(values: dict) -> RunConfig:
    hints = typing.get_type_hints(RunConfig)
    kwargs = {}
    for key, raw in values.items():
        if key not in hints:
            raise ConfigError(f"[run] unknown key {key!r}")
        kwargs[key] = _coerce(key, hints[key], raw)
    return RunConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    """Parse an INI file; raise :class:`ConfigError` on anything malformed."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    known = {"problem", "run", "experiment", "sweep"}
    extra = set(parser.sections()) - known
    if extra:
        raise ConfigError(f"unknown section(s) {sorted(extra)}")

    exp = ExperimentConfig()
    if parser.has_section("problem"):
        params = {k: parse_scalar(v) for k, v in parser["problem"].items()}
        exp.problem = str(params.pop("name", exp.problem))
        exp.problem_params = params
    if parser.has_section("run"):
        exp.run = run_config_from_mapping(dict(parser["run"]))
    if parser.has_section("experiment"):
        sec = dict(parser["experiment"])
        if "seeds" in sec:
            exp.seeds = parse_int_list(sec.pop("seeds"), "seeds")
        if "out" in sec:
            exp.out = sec.pop("out")
        if "plots" in sec:
            v = sec.pop("plots").strip().lower()
            if v not in _BOOL:
                raise ConfigError(f"[experiment] plots must be a boolean, got {v!r}")
            exp.emit_plots = _BOOL[v]
        if "jobs" in sec:
            exp.jobs = int(sec.pop("jobs"))
        if sec:
            raise ConfigError(f"[experiment] unknown key(s) {sorted(sec)}")
    if parser.has_section("sweep"):
        sec = dict(parser["sweep"])
        if "ks" in sec:
            exp.ks = tuple(parse_int_list(sec.pop("ks"), "ks"))
        if sec:
            raise ConfigError(f"[sweep] unknown key(s) {sorted(sec)}")
    return exp


def echo(exp: ExperimentConfig) -> dict:
    """JSON-ready copy of the resolved configuration, for provenance."""
    alpha, beta, N = exp.run.resolved()
    return {
        "problem": exp.problem,
        "problem_params": dict(exp.problem_params),
        "run": dataclasses.asdict(exp.run),
        "resolved": {"alpha": alpha, "beta": beta, "N": N},
        "seeds": list(exp.seeds),
        "emit_plots": exp.emit_plots,
    }

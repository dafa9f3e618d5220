"""Configuration, orchestration, persistence and plotting around the driver."""
from .config import ExperimentConfig, load_config
from .runner import (cli_baseline_compare, cli_rate_sweep, cli_run, gamma_sweep, hypergrad_check,
                     read_trace, summarize_traces, write_trace)

__all__ = [
    "ExperimentConfig", "cli_baseline_compare", "cli_rate_sweep", "cli_run", "gamma_sweep",
    "hypergrad_check", "load_config", "read_trace", "summarize_traces", "write_trace",
]

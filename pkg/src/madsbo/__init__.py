"""Decentralized stochastic bilevel optimization with matrix-free hypergradients."""
from .driver import (OuterState, RunConfig, RunResult, TraceRecord, inner_loop, madsbo_run,
                     madsbo_step, rate_sweep)
from .errors import ConfigError, DivergedError
from .higp import QuadOracle, higp_run
from .hypergrad import estimate_hypergradient, local_hypergradients, naive_local_average
from .netgraph import MixingMatrix, build_complete, build_ring, mix, validate
from .oracle import (BilevelOracle, OracleCounters, SampleStreams, compute_smoothness_constants,
                     measure_heterogeneity)

__version__ = "0.1.0"

__all__ = [
    "BilevelOracle", "ConfigError", "DivergedError", "MixingMatrix", "OracleCounters",
    "OuterState", "QuadOracle", "RunConfig", "RunResult", "SampleStreams", "TraceRecord",
    "build_complete", "build_ring", "compute_smoothness_constants", "estimate_hypergradient",
    "higp_run", "inner_loop", "local_hypergradients", "madsbo_run", "madsbo_step",
    "measure_heterogeneity", "mix", "naive_local_average", "rate_sweep", "validate",
]

"""Moving-average decentralized stochastic bilevel optimization.

Each outer iteration warm-starts the lower iterates, runs ``T`` rounds of
gossip SGD on ``y``, estimates per-agent hypergradients with the HIGP
solver, takes a gossip step on ``x`` along the moving-average direction
``r`` and finally refreshes ``r``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, DivergedError
from .higp import BLOWUP, default_gamma
from .hypergrad import estimate_hypergradient, local_hypergradients
from .netgraph import CommCounter, MixingMatrix, consensus_error, make_topology, mix
from .oracle import BilevelOracle, OracleCounters, SampleStreams

TRACE_COLUMNS = ("k", "stationarity", "surrogate", "consensus_x", "consensus_y",
                 "inner_residual", "samples_cum", "comm_scalars_cum", "upper_loss")
MAX_TRACE_ROWS = 10_000


@dataclass
class RunConfig:
    """Algorithm parameters for one run.

    In ``"theorem"`` mode the stepsizes and HIGP length follow
    ``alpha = a0 / sqrt(K)``, ``beta = b0 / sqrt(K)``, ``N = ceil(c0 ln K)``
    and the explicit ``alpha``, ``beta``, ``N`` are ignored. ``gamma=None``
    selects :func:`madsbo.higp.default_gamma` for the topology and the
    problem's declared ``mu_g``, ``L_g1``. Dimensions
    ``n``, ``p``, ``q`` are optional and, if given, checked against the problem.
    """

    K: int = 100
    T: int = 1
    N: int = 10
    alpha: float = 0.1
    beta: float = 0.1
    gamma: float | None = None
    schedule: str = "theorem"
    a0: float = 1.0
    b0: float = 1.0
    c0: float = 2.0
    topology: str = "ring"
    ring_w: float = 0.4
    topology_path: str | None = None
    master_seed: int = 0
    stochastic: bool = True
    shared_streams: bool = False
    direction: str = "madsbo"
    n: int | None = None
    p: int | None = None
    q: int | None = None

    def resolved(self):
        """Effective ``(alpha, beta, N)`` after applying the schedule."""
        if self.schedule == "manual":
            return self.alpha, self.beta, self.N
        if self.schedule != "theorem":
            raise ConfigError(f"schedule must be 'manual' or 'theorem', got {self.schedule!r}")
        K = max(self.K, 1)
        N = max(1, math.ceil(self.c0 * math.log(K)))
        return self.a0 / math.sqrt(K), self.b0 / math.sqrt(K), N

    def validate(self) -> None:
        """Raise :class:`ConfigError` naming the first violated invariant."""
        if int(self.K) != self.K or self.K < 0:
            raise ConfigError(f"K must be a nonnegative integer, got {self.K}")
        if int(self.T) != self.T or self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        alpha, beta, N = self.resolved()
        if int(N) != N or N < 1:
            raise ConfigError(f"N must be >= 1, got {N}")
        if not 0 < alpha <= 1:
            raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")
        if not 0 < beta <= 1:
            raise ConfigError(f"beta must lie in (0, 1], got {beta}")
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.direction not in ("madsbo", "naive"):
            raise ConfigError(f"direction must be 'madsbo' or 'naive', got {self.direction!r}")
        if self.topology not in ("ring", "complete", "custom"):
            raise ConfigError(f"unknown topology {self.topology!r}")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class OuterState:
    X: np.ndarray
    Y: np.ndarray
    R: np.ndarray
    k: int = 0

    @classmethod
    def zeros(cls, p, q, n):
        return cls(X=np.zeros((p, n)), Y=np.zeros((q, n)), R=np.zeros((p, n)), k=0)


@dataclass
class TraceRecord:
    k: int
    stationarity: float | None
    surrogate: float
    consensus_x: float
    consensus_y: float
    inner_residual: float | None
    samples_cum: int
    comm_scalars_cum: int
    upper_loss: float | None

    def row(self) -> list:
        return [getattr(self, c) for c in TRACE_COLUMNS]


@dataclass
class RunResult:
    xbar: np.ndarray
    trace: list
    state: OuterState
    counters: OracleCounters
    comm: CommCounter
    config: RunConfig
    per_step_comm: list = field(default_factory=list)


def _blown(F):
    return not np.all(np.isfinite(F)) or np.max(np.abs(F), initial=0.0) > BLOWUP


def inner_loop(W: MixingMatrix, oracle: BilevelOracle, X, Y_init, beta, T,
               streams: SampleStreams | None = None, comm: CommCounter | None = None):
    """``T`` rounds of ``Y <- mix(Y) - beta * grad_gy(X, Y)`` with ``X`` held fixed."""
    samples = None if streams is None else oracle.sample_lower(streams.rngs("inner"), T)
    Y = np.array(Y_init, dtype=float)
    for t in range(T):
        V = oracle.grad_gy(X, Y, None if samples is None else samples[t])
        Y = mix(W, Y, comm) - beta * V
        if _blown(Y):
            raise DivergedError("inner", t + 1)
    return Y


def measure(oracle: BilevelOracle, state: OuterState, samples_cum: int,
            comm_cum: int) -> TraceRecord:
    """Trace metrics at the current iterate (agent averages of ``X``, ``Y``, ``R``)."""
    xbar = state.X.mean(axis=1)
    ybar = state.Y.mean(axis=1)
    rbar = state.R.mean(axis=1)
    stationarity = residual = None
    if oracle.has_ground_truth:
        g = oracle.hypergradient(xbar)
        stationarity = float(g @ g)
        dy = ybar - oracle.lower_solution(xbar)
        residual = float(dy @ dy)
    loss = oracle.upper_loss(xbar, ybar)
    return TraceRecord(
        k=state.k, stationarity=stationarity, surrogate=float(rbar @ rbar),
        consensus_x=consensus_error(state.X), consensus_y=consensus_error(state.Y),
        inner_residual=residual, samples_cum=int(samples_cum), comm_scalars_cum=int(comm_cum),
        upper_loss=None if loss is None else float(loss),
    )


def madsbo_step(W: MixingMatrix, oracle: BilevelOracle, state: OuterState, *, alpha, beta,
                gamma, N, T=1, streams: SampleStreams | None = None,
                comm: CommCounter | None = None, direction="madsbo"):
    """One outer iteration; returns ``(new_state, U)``.

    ``state.Y`` holds the previous iteration's final lower iterates and is
    used as the warm start. ``U`` is the ``p x n`` array of hypergradient
    estimates. The ``x`` step uses the pre-update direction ``r_k``.
    """
    Y = inner_loop(W, oracle, state.X, state.Y, beta, T, streams, comm)
    if direction == "naive":
        U = local_hypergradients(oracle, state.X)
    else:
        U = estimate_hypergradient(W, oracle, state.X, Y, gamma, N, streams, comm).u
    X = mix(W, state.X, comm) - alpha * state.R
    R = (1.0 - alpha) * state.R + alpha * U
    if _blown(X) or _blown(R):
        raise DivergedError("outer", state.k + 1)
    return OuterState(X=X, Y=Y, R=R, k=state.k + 1), U


def trace_stride(K: int) -> int:
    return 1 if K <= MAX_TRACE_ROWS else math.ceil(K / MAX_TRACE_ROWS)


def resolve_gamma(cfg: RunConfig, oracle: BilevelOracle, W: MixingMatrix) -> float:
    if cfg.gamma is not None:
        return float(cfg.gamma)
    c = oracle.declared_constants()
    return default_gamma(W, c["mu_g"], c["L_g1"])


def madsbo_run(cfg: RunConfig, problem, W: MixingMatrix | None = None) -> RunResult:
    """Run ``cfg.K`` outer iterations from the all-zeros start.

    ``problem`` is a :class:`BilevelOracle` or a registered problem name
    (built with default parameters). The problem's counters are reset at the
    start so that the returned counters describe this run only. The trace
    holds one record per logged iteration including ``k = 0`` and ``k = K``.

    Raises
    ------
    ConfigError
        On invalid parameters or dimension mismatch.
    DivergedError
        With ``index`` set to the outer iteration that blew up.
    """
    if isinstance(problem, str):
        from .problems import make_problem
        try:
            problem = make_problem(problem)
        except KeyError as exc:
            raise ConfigError(str(exc)) from None
    oracle = problem
    cfg.validate()
    for name in ("n", "p", "q"):
        want = getattr(cfg, name)
        if want is not None and want != getattr(oracle, name):
            raise ConfigError(f"config {name} = {want} but problem has {getattr(oracle, name)}")
    if W is None:
        try:
            W = make_topology(cfg.topology, oracle.n, cfg.ring_w, cfg.topology_path)
        except ValueError as exc:
            raise ConfigError(f"topology: {exc}") from None
    if W.n != oracle.n:
        raise ConfigError(f"mixing matrix has {W.n} agents, problem has {oracle.n}")
    alpha, beta, N = cfg.resolved()
    gamma = resolve_gamma(cfg, oracle, W)
    oracle.counters = OracleCounters()
    comm = CommCounter()
    streams = SampleStreams(cfg.master_seed, oracle.n, cfg.shared_streams) if cfg.stochastic else None
    state = OuterState.zeros(oracle.p, oracle.q, oracle.n)
    stride = trace_stride(cfg.K)
    trace = [measure(oracle, state, 0, 0)]
    per_step = []
    for k in range(cfg.K):
        before = comm.scalars
        try:
            state, _ = madsbo_step(W, oracle, state, alpha=alpha, beta=beta, gamma=gamma, N=N,
                                   T=cfg.T, streams=streams, comm=comm, direction=cfg.direction)
        except DivergedError as exc:
            raise DivergedError("outer", k, f"outer iteration {k}: {exc}") from exc
        per_step.append(comm.scalars - before)
        if state.k % stride == 0 or state.k == cfg.K:
            trace.append(measure(oracle, state, oracle.counters.samples_drawn, comm.scalars))
    return RunResult(xbar=state.X.mean(axis=1), trace=trace, state=state,
                     counters=oracle.counters_snapshot(), comm=comm, config=cfg,
                     per_step_comm=per_step)


def expected_samples(n, K, T, N, batch=1) -> int:
    """Samples per run: ``T`` inner plus ``N + 1`` upper and ``N + 1`` lower per agent and step."""
    return n * K * batch * (T + 2 * (N + 1))


def expected_comm_per_step(W: MixingMatrix, p, q, T, N) -> int:
    """Scalars sent per outer step: ``T`` mixes of ``y``, ``2N`` of HIGP vectors, one of ``x``."""
    return W.directed_edges * (T * q + N * 2 * q + p)


@dataclass
class SweepResult:
    K: list
    min_stationarity: list
    tail_consensus: list
    stationarity_slope: float
    consensus_slope: float
    runs: dict = field(default_factory=dict, repr=False)


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def _sweep_point(args):
    cfg, problem, W = args
    return madsbo_run(cfg, problem, W)


def rate_sweep(cfg: RunConfig, problem: BilevelOracle, K_list, seeds,
               W: MixingMatrix | None = None, keep_runs=False, jobs=1) -> SweepResult:
    """Theorem-schedule runs over ``K_list`` averaged across ``seeds``.

    For each ``K`` the stationarity ``||grad Phi(xbar_k)||^2`` is averaged
    over seeds and minimized over ``k``; the consensus error of ``X`` is
    averaged over seeds and over the last quarter of the iterations. Slopes
    are least-squares fits in log-log coordinates. With ``jobs > 1`` the
    (K, seed) points run in worker processes; results are combined in the
    same order, so they do not depend on ``jobs``.
    """
    K_list = list(K_list)
    seeds = list(seeds)
    if len(K_list) < 3:
        raise ValueError("need at least 3 values of K to fit a rate")
    if sorted(K_list) != K_list:
        raise ValueError("K_list must be ascending")
    if not problem.has_ground_truth:
        raise ValueError("rate sweep needs a problem with a closed-form hypergradient")
    points = [(K, s) for K in K_list for s in seeds]
    tasks = [(dataclasses.replace(cfg, K=K, master_seed=s), problem, W) for K, s in points]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]
    by_point = dict(zip(points, results))
    mins, tails = [], []
    for K in K_list:
        stat = np.mean([[r.stationarity for r in by_point[K, s].trace] for s in seeds], axis=0)
        cons = np.mean([[r.consensus_x for r in by_point[K, s].trace] for s in seeds], axis=0)
        mins.append(float(stat.min()))
        tails.append(float(cons[-max(1, len(cons) // 4):].mean()))
    return SweepResult(K=K_list, min_stationarity=mins, tail_consensus=tails,
                       stationarity_slope=loglog_slope(K_list, mins),
                       consensus_slope=loglog_slope(K_list, tails),
                       runs=by_point if keep_runs else {})

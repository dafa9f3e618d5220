"""Per-agent stochastic oracles with call and sample accounting.

Every algorithm in the package touches a problem only through
:class:`BilevelOracle`. All methods are batched over agents: ``X`` is
``p x n`` and ``Y`` is ``q x n``, column ``i`` belonging to agent ``i``, and
the returned array has one column per agent. There is deliberately no method
that returns or accepts a ``p x q`` or ``q x q`` matrix.

Samples are drawn up front from per-agent, per-role random streams and
passed back into the oracle calls. The same realized sample can therefore be
reused by several calls, e.g. the hypergradient estimator evaluates
``grad_fx`` and ``grad_fy`` on the same upper-level sample. Passing
``sample=None`` evaluates the expectation (deterministic) oracle.
"""
from __future__ import annotations

import contextlib
import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import BaselineUnavailable

ROLES = ("inner", "higp_upper", "higp_lower")


class SampleStreams:
    """Independent Philox streams, one per (role, agent) pair.

    Stream keys are derived from ``master_seed`` with the counter-style
    ``spawn_key=(role, agent)`` of :class:`numpy.random.SeedSequence`, so the
    streams do not depend on how many other streams exist. With
    ``shared=True`` every agent gets a copy of agent 0's stream, which is only
    useful for homogeneous-consensus checks.
    """

    def __init__(self, master_seed: int, n: int, shared: bool = False):
        self.master_seed = int(master_seed)
        self.n = int(n)
        self.shared = shared
        self._gens = {}
        for r, role in enumerate(ROLES):
            self._gens[role] = [
                np.random.Generator(np.random.Philox(
                    np.random.SeedSequence(self.master_seed, spawn_key=(r, 0 if shared else i))
                ))
                for i in range(self.n)
            ]

    def rngs(self, role: str) -> list:
        return self._gens[role]


@dataclass
class OracleCounters:
    """Per-agent call counts. A batched call over n agents adds n."""

    grad_fx_calls: int = 0
    grad_fy_calls: int = 0
    grad_gy_calls: int = 0
    hess_vec_calls: int = 0
    jac_vec_calls: int = 0
    samples_drawn: int = 0
    full_matrix_materializations: int = 0

    def total_calls(self) -> int:
        return (self.grad_fx_calls + self.grad_fy_calls + self.grad_gy_calls
                + self.hess_vec_calls + self.jac_vec_calls)

    def copy(self) -> "OracleCounters":
        return dataclasses.replace(self)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


class BilevelOracle:
    """Base class for the problems in :mod:`madsbo.problems`.

    Subclasses set ``n``, ``p``, ``q`` and implement the underscored hooks
    ``_draw_upper``, ``_draw_lower``, ``_grad_fx``, ``_grad_fy``, ``_grad_gy``,
    ``_hess_gyy_vec`` and ``_jac_gxy_vec``. Problems with closed forms also
    override :meth:`lower_solution`, :meth:`hypergradient` and friends and
    set ``has_ground_truth = True``.
    """

    n: int
    p: int
    q: int
    batch: int = 1
    has_ground_truth = False

    def __init__(self):
        self.counters = OracleCounters()
        self._counting = True

    # -- accounting ---------------------------------------------------------

    def counters_snapshot(self) -> OracleCounters:
        return self.counters.copy()

    @contextlib.contextmanager
    def uncounted(self):
        """Suspend counting, for diagnostics that are not part of a run."""
        prev, self._counting = self._counting, False
        try:
            yield self
        finally:
            self._counting = prev

    def _count(self, name: str, amount: int) -> None:
        if self._counting:
            setattr(self.counters, name, getattr(self.counters, name) + amount)

    # -- sampling -----------------------------------------------------------

    def sample_upper(self, rngs, count: int) -> np.ndarray:
        """Draw ``count`` upper-level samples per agent; result indexed ``[t][..., i]``."""
        return self._stack_draws(self._draw_upper, rngs, count)

    def sample_lower(self, rngs, count: int) -> np.ndarray:
        return self._stack_draws(self._draw_lower, rngs, count)

    def _stack_draws(self, draw, rngs, count):
        if len(rngs) != self.n:
            raise ValueError(f"need {self.n} streams, got {len(rngs)}")
        self._count("samples_drawn", count * self.n * self.batch)
        return np.stack([draw(g, count) for g in rngs], axis=-1)

    # -- oracles ------------------------------------------------------------

    def grad_fx(self, X, Y, sample=None) -> np.ndarray:
        self._count("grad_fx_calls", self.n)
        return self._grad_fx(X, Y, sample)

    def grad_fy(self, X, Y, sample=None) -> np.ndarray:
        self._count("grad_fy_calls", self.n)
        return self._grad_fy(X, Y, sample)

    def grad_gy(self, X, Y, sample=None) -> np.ndarray:
        self._count("grad_gy_calls", self.n)
        return self._grad_gy(X, Y, sample)

    def hess_gyy_vec(self, X, Y, V, sample=None) -> np.ndarray:
        """Columnwise ``grad^2_yy g_i(x_i, y_i) v_i``, shape ``q x n``."""
        self._count("hess_vec_calls", self.n)
        return self._hess_gyy_vec(X, Y, V, sample)

    def jac_gxy_vec(self, X, Y, V, sample=None) -> np.ndarray:
        """Columnwise ``grad^2_xy g_i(x_i, y_i) v_i`` (``p x q`` times ``q``), shape ``p x n``."""
        self._count("jac_vec_calls", self.n)
        return self._jac_gxy_vec(X, Y, V, sample)

    # -- objective values (for finite-difference checks and diagnostics) ----

    def f_values(self, X, Y) -> np.ndarray:
        """Per-agent deterministic upper objective values, length ``n``."""
        raise NotImplementedError

    def g_values(self, X, Y) -> np.ndarray:
        raise NotImplementedError

    # -- ground truth, where available --------------------------------------

    def lower_solution(self, x) -> np.ndarray:
        """Exact ``y*(x)`` of the averaged lower problem."""
        raise NotImplementedError(f"{type(self).__name__} has no closed-form y*(x)")

    def hypergradient(self, x) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no closed-form hypergradient")

    def upper_objective(self, x) -> float:
        raise NotImplementedError(f"{type(self).__name__} has no closed-form Phi(x)")

    def local_lower_solutions(self, x) -> np.ndarray:
        """``q x n`` array of each agent's own minimizer ``argmin_y g_i(x, y)``."""
        raise BaselineUnavailable(f"{type(self).__name__} has no per-agent lower solutions")

    def upper_loss(self, xbar, ybar) -> float | None:
        """Upper-level loss reported in traces; ``Phi(xbar)`` when known."""
        if self.has_ground_truth:
            return self.upper_objective(xbar)
        return None

    def declared_constants(self) -> dict:
        """Raw smoothness constants (``mu_g``, ``L_g1`` ...) declared by the problem."""
        raise NotImplementedError

    def tile(self, x, y):
        """Broadcast one point to all agents: ``(p x n, q x n)``."""
        x = np.asarray(x, dtype=float).reshape(self.p)
        y = np.asarray(y, dtype=float).reshape(self.q)
        return np.repeat(x[:, None], self.n, axis=1), np.repeat(y[:, None], self.n, axis=1)


@dataclass(frozen=True)
class ProblemConstants:
    mu_g: float
    L_f0: float
    L_f1: float
    L_g1: float
    L_g2: float
    sigma_f: float = 0.0
    sigma_g1: float = 0.0
    sigma_g2: float = 0.0
    delta: float = 0.0
    L_Phi: float = float("nan")
    L_ystar: float = float("nan")


def compute_smoothness_constants(*, mu_g, L_f0, L_f1, L_g1, L_g2, sigma_f=0.0,
                                 sigma_g1=0.0, sigma_g2=0.0, delta=0.0) -> ProblemConstants:
    """Fill in the Lipschitz constants of ``y*(x)`` and of the hypergradient.

    ``L_ystar = L_g1 / mu_g`` and ``L_Phi`` is the usual four-term bound
    ``L_f1 + (2 L_f1 L_g1 + L_g2 L_f0^2) / mu + (2 L_g1 L_f0 L_g2 + L_g1^2 L_f1) / mu^2
    + L_g2 L_g1^2 L_f0 / mu^3``.
    """
    if not mu_g > 0:
        raise ValueError(f"mu_g must be positive, got {mu_g}")
    vals = dict(L_f0=L_f0, L_f1=L_f1, L_g1=L_g1, L_g2=L_g2, sigma_f=sigma_f,
                sigma_g1=sigma_g1, sigma_g2=sigma_g2, delta=delta)
    for name, v in vals.items():
        if not (np.isfinite(v) and v >= 0):
            raise ValueError(f"{name} must be finite and nonnegative, got {v}")
    if mu_g > L_g1:
        raise ValueError(f"mu_g = {mu_g} exceeds L_g1 = {L_g1}")
    mu = float(mu_g)
    L_phi = (L_f1
             + (2 * L_f1 * L_g1 + L_g2 * L_f0 ** 2) / mu
             + (2 * L_g1 * L_f0 * L_g2 + L_g1 ** 2 * L_f1) / mu ** 2
             + L_g2 * L_g1 ** 2 * L_f0 / mu ** 3)
    return ProblemConstants(mu_g=mu, L_Phi=float(L_phi), L_ystar=float(L_g1 / mu), **vals)


def measure_heterogeneity(oracle: BilevelOracle, probes) -> float:
    """Largest deviation of a local lower gradient from the agent average.

    ``probes`` is an iterable of ``(x, y)`` points; every agent is evaluated
    at the same point with the deterministic ``grad_gy``. The result is an
    empirical lower bound on the heterogeneity constant ``delta``.
    """
    delta = 0.0
    with oracle.uncounted():
        for x, y in probes:
            X, Y = oracle.tile(x, y)
            G = oracle.grad_gy(X, Y)
            dev = G - G.mean(axis=1, keepdims=True)
            delta = max(delta, float(np.max(np.linalg.norm(dev, axis=0))))
    return delta


def counters_snapshot(oracle: BilevelOracle) -> OracleCounters:
    return oracle.counters_snapshot()

"""Per-agent hypergradient estimates built on the HIGP solver."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .higp import HigpResult, QuadOracle, higp_run
from .netgraph import CommCounter, MixingMatrix
from .oracle import BilevelOracle, SampleStreams


@dataclass
class HypergradEstimate:
    u: np.ndarray        # p x n, one estimate per agent
    z: np.ndarray        # q x n, HIGP outputs used in the correction term
    higp: HigpResult

    @property
    def ubar(self) -> np.ndarray:
        return self.u.mean(axis=1)


def _at(batch, t):
    return None if batch is None else batch[t]


def estimate_hypergradient(W: MixingMatrix, oracle: BilevelOracle, X, Y, gamma, N,
                           streams: SampleStreams | None = None,
                           comm: CommCounter | None = None) -> HypergradEstimate:
    """Estimate the hypergradient at each agent's point ``(x_i, y_i)``.

    Draws upper samples ``phi_0..phi_N`` and lower samples ``xi_0..xi_N`` per
    agent, solves for ``z`` with :func:`higp_run` using ``H_t v =
    hess_gyy_vec(.; xi_t)`` and ``b_t = grad_fy(.; phi_t)``, then returns
    ``u_i = grad_fx(.; phi_0) - jac_gxy_vec(., z_i; xi_0)``. The index-0
    samples are reused, not redrawn. With ``streams=None`` the expectation
    oracles are used throughout.
    """
    if streams is None:
        phi = xi = None
    else:
        phi = oracle.sample_upper(streams.rngs("higp_upper"), N + 1)
        xi = oracle.sample_lower(streams.rngs("higp_lower"), N + 1)
    quad = QuadOracle(
        hv=lambda t, V: oracle.hess_gyy_vec(X, Y, V, _at(xi, t)),
        rhs=lambda t: oracle.grad_fy(X, Y, _at(phi, t)),
    )
    res = higp_run(W, quad, gamma, N, comm=comm)
    u = oracle.grad_fx(X, Y, _at(phi, 0)) - oracle.jac_gxy_vec(X, Y, res.z, _at(xi, 0))
    return HypergradEstimate(u=u, z=res.z, higp=res)


def local_hypergradients(oracle: BilevelOracle, X) -> np.ndarray:
    """Each agent's hypergradient of its *own* bilevel problem at ``x_i``.

    Uses the per-agent minimizers ``y_i*(x_i)`` and solves the local system
    ``grad^2_yy g_i z_i = grad_y f_i`` by conjugate gradients on the
    deterministic Hessian-vector oracle. Averaging these is not the global
    hypergradient when the agents' data differ.

    Raises
    ------
    BaselineUnavailable
        If the problem has no per-agent closed-form lower solution.
    """
    X = np.asarray(X, dtype=float)
    Yloc = oracle.local_lower_solutions(X)
    B = oracle.grad_fy(X, Yloc)
    Z = np.zeros_like(B)
    q, n = B.shape
    for i in range(n):
        def matvec(v, i=i):
            V = np.zeros((q, n))
            V[:, i] = np.ravel(v)
            return oracle.hess_gyy_vec(X, Yloc, V)[:, i]
        op = LinearOperator((q, q), matvec=matvec, dtype=float)
        zi, info = cg(op, B[:, i], rtol=1e-13, atol=0.0, maxiter=10 * q + 100)
        if info != 0:
            raise RuntimeError(f"local CG solve for agent {i} did not converge")
        Z[:, i] = zi
    return oracle.grad_fx(X, Yloc) - oracle.jac_gxy_vec(X, Yloc, Z)


def naive_local_average(oracle: BilevelOracle, x) -> np.ndarray:
    """Average of the agents' local hypergradients at a common ``x``."""
    X, _ = oracle.tile(x, np.zeros(oracle.q))
    return local_hypergradients(oracle, X).mean(axis=1)

"""Decentralized Hessian-inverse-gradient products by gradient tracking.

The agents jointly solve ``(sum_i H_i) z = sum_i b_i`` while agent ``i`` only
ever sees matrix-vector products ``H_i v`` and its own right-hand side
``b_i``. Each round mixes the iterates ``z`` and the trackers ``d`` with the
neighbors and refreshes the local residual ``s_i = H_i z_i - b_i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DivergedError
from .netgraph import CommCounter, MixingMatrix, mix

BLOWUP = 1e12


@dataclass
class QuadOracle:
    """Round-indexed access to the local quadratics.

    ``hv(t, Z)`` returns the columnwise products ``H_{i,t} z_i`` (``q x n``)
    and ``rhs(t)`` returns ``b_{i,t}`` stacked as ``q x n``.
    """

    hv: Callable[[int, np.ndarray], np.ndarray]
    rhs: Callable[[int], np.ndarray]


@dataclass
class HigpState:
    z: np.ndarray
    d: np.ndarray
    s: np.ndarray
    t: int = 0


@dataclass
class HigpResult:
    z: np.ndarray
    state: HigpState
    tracking_gaps: list = field(default_factory=list)
    z_history: list | None = None


def fixed_quad_oracle(H, B) -> QuadOracle:
    """QuadOracle over fixed local data: ``H`` is ``n x q x q``, ``B`` is ``q x n``."""
    H = np.asarray(H, dtype=float)
    B = np.asarray(B, dtype=float)
    return QuadOracle(hv=lambda t, Z: np.einsum("iab,bi->ai", H, Z), rhs=lambda t: B)


def _check_finite(F, where, t):
    if not np.all(np.isfinite(F)) or np.max(np.abs(F), initial=0.0) > BLOWUP:
        raise DivergedError(where, t)


def higp_run(W: MixingMatrix, quad: QuadOracle, gamma: float, N: int,
             comm: CommCounter | None = None, record: bool = False) -> HigpResult:
    """Run ``N`` gradient-tracking rounds from ``z = 0`` and return ``z_{i,N}``.

    Round ``t`` performs, for every agent at once::

        z <- mix(z) - gamma * d
        s' <- hv(t + 1, z) - rhs(t + 1)
        d <- mix(d) + s' - s

    starting from ``d_0 = s_0 = -rhs(0)``. Each round calls ``hv`` once.
    ``tracking_gaps[t]`` is ``||mean(d_t) - mean(s_t)||``, which should stay
    at rounding level. With ``record=True`` the agent iterates of every
    round are kept in ``z_history``.

    Raises
    ------
    DivergedError
        If an iterate becomes nonfinite or exceeds ``1e12`` in magnitude.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    b0 = np.asarray(quad.rhs(0), dtype=float)
    if b0.ndim != 2 or b0.shape[1] != W.n:
        raise ValueError(f"rhs has shape {b0.shape}, expected q x {W.n}")
    z = np.zeros_like(b0)
    s = -b0
    d = s.copy()
    gaps = [float(np.linalg.norm(d.mean(axis=1) - s.mean(axis=1)))]
    history = [z.copy()] if record else None
    for t in range(int(N)):
        z = mix(W, z, comm) - gamma * d
        _check_finite(z, "higp", t + 1)
        s_new = quad.hv(t + 1, z) - quad.rhs(t + 1)
        if s_new.shape != z.shape:
            raise ValueError(f"hv/rhs returned shape {s_new.shape}, expected {z.shape}")
        d = mix(W, d, comm) + s_new - s
        s = s_new
        _check_finite(d, "higp", t + 1)
        gaps.append(float(np.linalg.norm(d.mean(axis=1) - s.mean(axis=1))))
        if record:
            history.append(z.copy())
    return HigpResult(z=z, state=HigpState(z=z, d=d, s=s, t=int(N)),
                      tracking_gaps=gaps, z_history=history)


def tracking_radius(mu_w: float, h: float, gamma: float) -> float:
    """Spectral radius of one disagreement mode of the noiseless iteration.

    For a mixing eigenvalue ``mu_w`` and a common curvature ``h`` the pair
    (iterate, tracker) evolves by ``[[mu_w, -gamma], [h (mu_w - 1), mu_w - gamma h]]``.
    The consensus mode (``mu_w = 1``) reduces to ``1 - gamma h``.
    """
    if mu_w >= 1.0 - 1e-12:
        return abs(1.0 - gamma * h)
    M = np.array([[mu_w, -gamma], [h * (mu_w - 1.0), mu_w - gamma * h]])
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def default_gamma(W: MixingMatrix, mu_g: float, L_g1: float, grid: int = 200) -> float:
    """Stepsize minimizing the worst mode radius over ``eig(W)`` and ``h in {mu_g, L_g1}``.

    Negative mixing eigenvalues shrink the stable range well below
    ``1 / L_g1``; on ``ring(8, 0.4)`` with ``h = 1`` already ``gamma = 0.5``
    is unstable.
    """
    modes = np.linalg.eigvalsh(W.w)
    curvatures = sorted({float(mu_g), float(L_g1)})
    best, best_r = None, np.inf
    for c in np.linspace(1.0 / grid, 1.0, grid):
        gamma = c / L_g1
        r = max(tracking_radius(m, h, gamma) for m in modes for h in curvatures)
        if r < best_r - 1e-12:
            best, best_r = gamma, r
    return float(best)

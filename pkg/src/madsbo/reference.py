"""Dense ground-truth solvers.

These form full Hessians and Jacobians and exist only to check the
matrix-free algorithms. Nothing under ``madsbo`` that runs an algorithm
imports this module.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

from .oracle import BilevelOracle

MAX_COND = 1e12


def higp_solve_reference(H_bar, b_bar) -> np.ndarray:
    """Solve ``H_bar z = b_bar`` for symmetric positive definite ``H_bar``."""
    H = np.asarray(H_bar, dtype=float)
    b = np.asarray(b_bar, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1] or not np.allclose(H, H.T, atol=1e-12):
        raise ValueError("H_bar must be a symmetric square matrix")
    try:
        factor = scipy.linalg.cho_factor(H)
    except np.linalg.LinAlgError as exc:
        raise ValueError("H_bar is not positive definite") from exc
    return scipy.linalg.cho_solve(factor, b)


def averaged_derivatives(problem: BilevelOracle, x, y):
    """Agent-averaged ``grad_x f, grad_y f, grad^2_yy g (q x q), grad^2_xy g (p x q)``.

    The matrices are assembled column by column from the deterministic
    matrix-vector oracles, with counting suspended.
    """
    X, Y = problem.tile(x, y)
    q, n = problem.q, problem.n
    H = np.empty((q, q))
    J = np.empty((problem.p, q))
    with problem.uncounted():
        gfx = problem.grad_fx(X, Y).mean(axis=1)
        gfy = problem.grad_fy(X, Y).mean(axis=1)
        for j in range(q):
            E = np.zeros((q, n))
            E[j, :] = 1.0
            H[:, j] = problem.hess_gyy_vec(X, Y, E).mean(axis=1)
            J[:, j] = problem.jac_gxy_vec(X, Y, E).mean(axis=1)
    return gfx, gfy, H, J


def ground_truth_hypergradient(problem: BilevelOracle, x) -> np.ndarray:
    """``grad Phi(x) = mean grad_x f - grad^2_xy g (grad^2_yy g)^{-1} mean grad_y f`` at ``(x, y*(x))``."""
    x = np.asarray(x, dtype=float).reshape(problem.p)
    y = problem.lower_solution(x)
    gfx, gfy, H, J = averaged_derivatives(problem, x, y)
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > MAX_COND:
        raise ValueError(f"averaged lower Hessian is singular (cond = {cond:.3g})")
    return gfx - J @ np.linalg.solve(H, gfy)

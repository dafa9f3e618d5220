"""Closed-form quadratic bilevel testbed.

Agent ``i`` holds ``B_i`` (``q x p``) and ``a_i`` (``q``) with

    f_i(x, y) = 1/2 ||y - a_i||^2,    g_i(x, y) = 1/2 ||y - B_i x||^2,

so ``y*(x) = Bbar x`` and ``grad Phi(x) = Bbar^T (Bbar x - abar)``. Noisy
oracles add independent Gaussian perturbations of the declared scale to the
exact outputs.
"""
from __future__ import annotations

import numpy as np

from ..oracle import BilevelOracle


class QuadraticBilevel(BilevelOracle):
    has_ground_truth = True

    def __init__(self, B, a, sigma_f=0.0, sigma_g1=0.0, sigma_g2=0.0, batch=1):
        super().__init__()
        B = np.asarray(B, dtype=float)
        a = np.asarray(a, dtype=float)
        if B.ndim != 3:
            raise ValueError("B must have shape (n, q, p)")
        self.n, self.q, self.p = B.shape
        if a.shape != (self.q, self.n):
            raise ValueError(f"a must have shape ({self.q}, {self.n}), got {a.shape}")
        self.B, self.a = B, a
        self.Bbar = B.mean(axis=0)
        self.abar = a.mean(axis=1)
        self.sigma_f, self.sigma_g1, self.sigma_g2 = float(sigma_f), float(sigma_g1), float(sigma_g2)
        self.batch = int(batch)

    # upper sample: [noise for grad_fx (p) | noise for grad_fy (q)]
    def _draw_upper(self, rng, count):
        return rng.standard_normal((count, self.batch, self.p + self.q)).mean(axis=1)

    # lower sample: [grad_gy (q) | hess-vec (q) | jac-vec (p)]
    def _draw_lower(self, rng, count):
        return rng.standard_normal((count, self.batch, 2 * self.q + self.p)).mean(axis=1)

    def _apply_B(self, X):
        # batched matmul: per agent this is exactly B_i @ x_i
        return np.matmul(self.B, np.asarray(X, dtype=float).T[:, :, None])[:, :, 0].T

    def _apply_Bt(self, V):
        return np.matmul(np.asarray(V, dtype=float).T[:, None, :], self.B)[:, 0, :].T

    @staticmethod
    def _noisy(out, sigma, eps):
        if eps is None or sigma == 0.0:
            return out
        return out + sigma * eps

    def _grad_fx(self, X, Y, sample):
        out = np.zeros((self.p, self.n))
        return self._noisy(out, self.sigma_f, None if sample is None else sample[: self.p])

    def _grad_fy(self, X, Y, sample):
        return self._noisy(Y - self.a, self.sigma_f, None if sample is None else sample[self.p:])

    def _grad_gy(self, X, Y, sample):
        out = Y - self._apply_B(X)
        return self._noisy(out, self.sigma_g1, None if sample is None else sample[: self.q])

    def _hess_gyy_vec(self, X, Y, V, sample):
        out = np.array(V, dtype=float)
        return self._noisy(out, self.sigma_g2, None if sample is None else sample[self.q: 2 * self.q])

    def _jac_gxy_vec(self, X, Y, V, sample):
        out = -self._apply_Bt(V)
        return self._noisy(out, self.sigma_g2, None if sample is None else sample[2 * self.q:])

    def f_values(self, X, Y):
        R = np.asarray(Y) - self.a
        return 0.5 * np.sum(R * R, axis=0)

    def g_values(self, X, Y):
        R = np.asarray(Y) - self._apply_B(X)
        return 0.5 * np.sum(R * R, axis=0)

    def lower_solution(self, x):
        return self.Bbar @ np.asarray(x, dtype=float).reshape(self.p)

    def hypergradient(self, x):
        x = np.asarray(x, dtype=float).reshape(self.p)
        return self.Bbar.T @ (self.Bbar @ x - self.abar)

    def upper_objective(self, x):
        y = self.lower_solution(x)
        R = y[:, None] - self.a
        return float(0.5 * np.mean(np.sum(R * R, axis=0)))

    def local_lower_solutions(self, X):
        return self._apply_B(X)

    def declared_constants(self, radius=10.0):
        # grad_y f grows with y, so L_f0 is taken on the ball ||y|| <= radius
        return dict(mu_g=1.0, L_g1=1.0, L_g2=0.0, L_f1=1.0,
                    L_f0=float(radius + np.max(np.linalg.norm(self.a, axis=0))),
                    sigma_f=self.sigma_f / np.sqrt(self.batch),
                    sigma_g1=self.sigma_g1 / np.sqrt(self.batch),
                    sigma_g2=self.sigma_g2 / np.sqrt(self.batch))


def quad_instance(n=8, p=5, q=5, heterogeneity=1.0, sigma_f=0.0, sigma_g1=0.0,
                  sigma_g2=0.0, seed=0, batch=1) -> QuadraticBilevel:
    """Random testbed with a shared component plus per-agent spread ``heterogeneity``."""
    if min(n, p, q) < 1:
        raise ValueError("dimensions must be at least 1")
    rng = np.random.default_rng(seed)
    B0 = np.eye(q, p) + 0.5 * rng.standard_normal((q, p)) / np.sqrt(max(p, q))
    a0 = rng.standard_normal(q)
    B = B0[None] + heterogeneity * rng.standard_normal((n, q, p)) / np.sqrt(max(p, q))
    a = a0[:, None] + heterogeneity * rng.standard_normal((q, n))
    return QuadraticBilevel(B, a, sigma_f, sigma_g1, sigma_g2, batch=batch)


def scalar_reference(sigma=0.0) -> QuadraticBilevel:
    """Two scalar agents with ``B = (1, 3)`` and ``a = (0, 4)``."""
    B = np.array([1.0, 3.0]).reshape(2, 1, 1)
    a = np.array([[0.0, 4.0]])
    return QuadraticBilevel(B, a, sigma, sigma, sigma)

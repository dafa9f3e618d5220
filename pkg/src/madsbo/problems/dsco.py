"""Compositional problems recast as bilevel problems.

``min_x 1/n sum_i f_i(1/n sum_j g_j(x))`` becomes a bilevel problem with
``f_i(x, y) = f_i(y)`` and ``g_i(x, y) = 1/2 y^T y - g_i(x)^T y``. The lower
Hessian is the identity and the cross derivative acts as ``v -> -J_i(x)^T v``,
so only vector-Jacobian products of the inner maps are needed.
"""
from __future__ import annotations

import numpy as np

from ..oracle import BilevelOracle


class LinearMap:
    """``x -> A x + c``."""

    def __init__(self, A, c=None):
        self.A = np.asarray(A, dtype=float)
        self.c = np.zeros(self.A.shape[0]) if c is None else np.asarray(c, dtype=float)

    def value(self, x):
        return self.A @ x + self.c

    def vjp(self, x, v):
        return self.A.T @ v


class TanhMap:
    """``x -> tanh(A x + c)``, a smooth nonlinear inner map."""

    def __init__(self, A, c=None):
        self.A = np.asarray(A, dtype=float)
        self.c = np.zeros(self.A.shape[0]) if c is None else np.asarray(c, dtype=float)

    def value(self, x):
        return np.tanh(self.A @ x + self.c)

    def vjp(self, x, v):
        t = np.tanh(self.A @ x + self.c)
        return self.A.T @ ((1.0 - t * t) * v)


class ConstantMap:
    def __init__(self, c, p):
        self.c = np.asarray(c, dtype=float)
        self.p = int(p)

    def value(self, x):
        return self.c.copy()

    def vjp(self, x, v):
        return np.zeros(self.p)


class SquaredDistance:
    """Outer function ``y -> 1/2 ||y - center||^2``."""

    def __init__(self, center):
        self.center = np.asarray(center, dtype=float)

    def value(self, y):
        r = y - self.center
        return 0.5 * float(r @ r)

    def grad(self, y):
        return y - self.center


class DscoAdapter(BilevelOracle):
    has_ground_truth = True

    def __init__(self, inner, outer, p, sigma=0.0):
        super().__init__()
        if len(inner) != len(outer):
            raise ValueError("need one inner map and one outer function per agent")
        self.inner, self.outer = list(inner), list(outer)
        self.n = len(self.inner)
        self.p = int(p)
        self.q = int(np.size(self.inner[0].value(np.zeros(self.p))))
        for g in self.inner:
            if np.size(g.value(np.zeros(self.p))) != self.q:
                raise ValueError("inner maps disagree on the output dimension")
        self.sigma = float(sigma)

    def _draw_upper(self, rng, count):
        return rng.standard_normal((count, self.batch, self.q)).mean(axis=1)

    def _draw_lower(self, rng, count):
        return rng.standard_normal((count, self.batch, self.q + self.p)).mean(axis=1)

    def _noisy(self, out, eps):
        if eps is None or self.sigma == 0.0:
            return out
        return out + self.sigma * eps

    def _cols(self, fn, *arrays):
        return np.column_stack([fn(i, *(A[:, i] for A in arrays)) for i in range(self.n)])

    def _grad_fx(self, X, Y, sample):
        return np.zeros((self.p, self.n))

    def _grad_fy(self, X, Y, sample):
        out = self._cols(lambda i, y: self.outer[i].grad(y), Y)
        return self._noisy(out, sample)

    def _grad_gy(self, X, Y, sample):
        out = Y - self._cols(lambda i, x: self.inner[i].value(x), X)
        return self._noisy(out, None if sample is None else sample[: self.q])

    def _hess_gyy_vec(self, X, Y, V, sample):
        return np.array(V, dtype=float)

    def _jac_gxy_vec(self, X, Y, V, sample):
        out = -self._cols(lambda i, x, v: self.inner[i].vjp(x, v), X, V)
        return self._noisy(out, None if sample is None else sample[self.q:])

    def f_values(self, X, Y):
        return np.array([self.outer[i].value(Y[:, i]) for i in range(self.n)])

    def g_values(self, X, Y):
        return np.array([0.5 * Y[:, i] @ Y[:, i] - self.inner[i].value(X[:, i]) @ Y[:, i]
                         for i in range(self.n)])

    def lower_solution(self, x):
        x = np.asarray(x, dtype=float).reshape(self.p)
        return np.mean([g.value(x) for g in self.inner], axis=0)

    def hypergradient(self, x):
        x = np.asarray(x, dtype=float).reshape(self.p)
        y = self.lower_solution(x)
        w = np.mean([f.grad(y) for f in self.outer], axis=0)
        return np.mean([g.vjp(x, w) for g in self.inner], axis=0)

    def upper_objective(self, x):
        y = self.lower_solution(x)
        return float(np.mean([f.value(y) for f in self.outer]))

    def local_lower_solutions(self, X):
        return self._cols(lambda i, x: self.inner[i].value(x), np.asarray(X, dtype=float))

    def declared_constants(self):
        return dict(mu_g=1.0, L_g1=1.0, L_g2=0.0, L_f1=1.0, L_f0=1.0)


def dsco_wrap(inner, outer, p=None, sigma=0.0) -> DscoAdapter:
    """Wrap inner maps ``g_j`` and outer functions ``f_i`` as a bilevel oracle."""
    if p is None:
        p = inner[0].A.shape[1]
    return DscoAdapter(inner, outer, p, sigma=sigma)


def dsco_linear_instance(n=4, p=3, q=4, spread=0.5, sigma=0.0, seed=0, nonlinear=False):
    """Random DSCO instance with linear (or tanh) inner maps and squared-distance outers."""
    rng = np.random.default_rng(seed)
    A0 = rng.standard_normal((q, p)) / np.sqrt(p)
    cls = TanhMap if nonlinear else LinearMap
    inner = [cls(A0 + spread * rng.standard_normal((q, p)) / np.sqrt(p),
                 spread * rng.standard_normal(q)) for _ in range(n)]
    outer = [SquaredDistance(rng.standard_normal(q)) for _ in range(n)]
    return DscoAdapter(inner, outer, p, sigma=sigma)

"""Hyperparameter learning for l2-regularized logistic regression.

The upper variable is the per-coordinate log-regularization ``lam`` and the
lower variable is the model ``omega`` (so ``p == q``). With
``psi(m) = log(1 + exp(-m))``,

    f_i(lam, omega) = mean over D_i' of psi(y_e x_e^T omega)
    g_i(lam, omega) = mean over D_i  of psi(y_e x_e^T omega) + 1/2 sum_j exp(lam_j) omega_j^2

Stochastic oracles evaluate the data terms on ``batch`` points drawn
uniformly with replacement from the agent's own set.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from ..oracle import BilevelOracle


@dataclass(frozen=True)
class LogRegData:
    """Per-agent datasets stacked as ``(m, n, p)`` features and ``(m, n)`` labels."""

    train_X: np.ndarray
    train_y: np.ndarray
    val_X: np.ndarray
    val_y: np.ndarray
    w_star: np.ndarray | None = None

    @property
    def n(self):
        return self.train_X.shape[1]

    @property
    def p(self):
        return self.train_X.shape[2]


def gen_synthetic_logreg(p=20, n=8, samples_per_node=200, noise_eps=0.1, het_rate=1.0,
                         seed=0) -> LogRegData:
    """Heterogeneous Gaussian features with sign labels from a hidden linear model.

    Node ``i`` (counted from 1) draws features i.i.d. ``N(0, (i * het_rate)^2)``
    per coordinate; labels are ``sign(x^T w* + noise_eps * z)`` with ``w*``
    and ``z`` standard normal. The first half of each node's samples is the
    training set, the second half the validation set.
    """
    if p < 1 or n < 1:
        raise ValueError("p and n must be at least 1")
    if not het_rate > 0:
        raise ValueError(f"het_rate must be positive, got {het_rate}")
    if samples_per_node < 2:
        raise ValueError("need at least 2 samples per node for the train/validation split")
    rng = np.random.default_rng(seed)
    w_star = rng.standard_normal(p)
    scale = het_rate * np.arange(1, n + 1)
    feats = rng.standard_normal((samples_per_node, n, p)) * scale[None, :, None]
    z = rng.standard_normal((samples_per_node, n))
    labels = np.where(feats @ w_star + noise_eps * z >= 0, 1.0, -1.0)
    m = samples_per_node // 2
    return LogRegData(train_X=feats[:m], train_y=labels[:m],
                      val_X=feats[m:], val_y=labels[m:], w_star=w_star)


def save_csv(data: LogRegData, directory) -> list:
    """Write ``node_<i>.csv`` per agent: training rows then validation rows.

    Columns are the ``p`` features followed by the label.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(data.n):
        path = directory / f"node_{i}.csv"
        rows = np.concatenate([
            np.column_stack([data.train_X[:, i], data.train_y[:, i]]),
            np.column_stack([data.val_X[:, i], data.val_y[:, i]]),
        ])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in rows:
                writer.writerow([repr(float(v)) for v in row])
        paths.append(path)
    return paths


def load_csv(directory, n: int) -> LogRegData:
    """Inverse of :func:`save_csv`; each file is split in half into train/validation."""
    directory = Path(directory)
    blocks = []
    for i in range(n):
        with open(directory / f"node_{i}.csv", newline="") as fh:
            blocks.append(np.array([[float(v) for v in row] for row in csv.reader(fh) if row]))
    sizes = {b.shape for b in blocks}
    if len(sizes) != 1:
        raise ValueError(f"node files disagree in shape: {sorted(sizes)}")
    arr = np.stack(blocks, axis=1)
    if arr.shape[0] < 2:
        raise ValueError("empty dataset")
    m = arr.shape[0] // 2
    return LogRegData(train_X=arr[:m, :, :-1], train_y=arr[:m, :, -1],
                      val_X=arr[m:, :, :-1], val_y=arr[m:, :, -1])


def _psi(m):
    return np.logaddexp(0.0, -m)


def _dpsi(m):
    return -expit(-m)


def _d2psi(m):
    return expit(m) * expit(-m)


class LogRegHyper(BilevelOracle):
    """Bilevel oracle over a :class:`LogRegData` instance (no closed forms)."""

    def __init__(self, data: LogRegData, batch=1, lam_min=-5.0):
        super().__init__()
        if data.train_X.shape[0] == 0 or data.val_X.shape[0] == 0:
            raise ValueError("empty dataset")
        self.data = data
        self.n, self.p = data.n, data.p
        self.q = self.p
        self.batch = int(batch)
        self.lam_min = float(lam_min)
        self._agents = np.arange(self.n)

    def _draw_upper(self, rng, count):
        return rng.integers(0, self.data.val_X.shape[0], size=(count, self.batch))

    def _draw_lower(self, rng, count):
        return rng.integers(0, self.data.train_X.shape[0], size=(count, self.batch))

    def _points(self, feats, labels, sample):
        if sample is None:
            return feats, labels
        return feats[sample, self._agents], labels[sample, self._agents]

    @staticmethod
    def _margins(F, lab, W):
        return lab * np.einsum("bnp,pn->bn", F, W)

    def _data_grad(self, F, lab, W):
        M = self._margins(F, lab, W)
        return np.einsum("bn,bnp->pn", _dpsi(M) * lab, F) / F.shape[0]

    def _grad_fx(self, X, Y, sample):
        return np.zeros((self.p, self.n))

    def _grad_fy(self, X, Y, sample):
        F, lab = self._points(self.data.val_X, self.data.val_y, sample)
        return self._data_grad(F, lab, Y)

    def _grad_gy(self, X, Y, sample):
        F, lab = self._points(self.data.train_X, self.data.train_y, sample)
        return self._data_grad(F, lab, Y) + np.exp(X) * Y

    def _hess_gyy_vec(self, X, Y, V, sample):
        F, lab = self._points(self.data.train_X, self.data.train_y, sample)
        curv = _d2psi(self._margins(F, lab, Y))
        FV = np.einsum("bnp,pn->bn", F, V)
        return np.einsum("bn,bnp->pn", curv * FV, F) / F.shape[0] + np.exp(X) * V

    def _jac_gxy_vec(self, X, Y, V, sample):
        # lam couples to omega only through the regularizer, which is not sampled
        return np.exp(X) * Y * V

    def f_values(self, X, Y):
        M = self._margins(self.data.val_X, self.data.val_y, Y)
        return _psi(M).mean(axis=0)

    def g_values(self, X, Y):
        M = self._margins(self.data.train_X, self.data.train_y, Y)
        return _psi(M).mean(axis=0) + 0.5 * np.sum(np.exp(X) * Y * Y, axis=0)

    def upper_loss(self, xbar, ybar):
        """Validation loss of the agent-averaged model, averaged over agents."""
        X, Y = self.tile(xbar, ybar)
        return float(self.f_values(X, Y).mean())

    def val_accuracy(self, ybar) -> float:
        scores = np.einsum("mnp,p->mn", self.data.val_X, np.asarray(ybar, dtype=float))
        return float(np.mean(np.where(scores >= 0, 1.0, -1.0) == self.data.val_y))

    def declared_constants(self):
        """Constants on the box ``lam_min <= lam <= 0``.

        ``L_g1`` bounds the averaged training Hessian (``psi'' <= 1/4``); the
        rest use the largest feature norm with ``|psi'| <= 1`` and
        ``|psi'''| <= 1 / (6 sqrt 3)``.
        """
        m = self.data.train_X.shape[0]
        top_sq = max(np.linalg.norm(self.data.train_X[:, i], 2) ** 2 / m for i in range(self.n))
        feats = np.concatenate([self.data.train_X, self.data.val_X]).reshape(-1, self.p)
        rmax = float(np.max(np.linalg.norm(feats, axis=1)))
        return dict(mu_g=float(np.exp(self.lam_min)), L_g1=float(0.25 * top_sq + 1.0),
                    L_g2=float(rmax ** 3 / (6 * np.sqrt(3)) + 1.0),
                    L_f1=float(0.25 * rmax ** 2), L_f0=rmax)

"""Gossip mixing matrices and synchronous mixing rounds.

Agent quantities are stored as ``d x n`` arrays: column ``i`` holds agent
``i``'s vector. The agent average of such a field is ``F.mean(axis=1)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NegativeWeight, NoSpectralGap, NotStochastic, NotSymmetric

SYMMETRY_TOL = 1e-12
ROW_SUM_TOL = 1e-9
GAP_TOL = 1e-12


@dataclass(frozen=True)
class MixingMatrix:
    """A validated symmetric doubly stochastic weight matrix.

    Construct through :func:`validate`, :func:`build_ring` or
    :func:`build_complete`; the constructor itself does not check anything.
    """

    w: np.ndarray
    rho: float
    # nonzero off-diagonal weights; each is one vector send per mixing round
    directed_edges: int

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def mix(self, F: np.ndarray) -> np.ndarray:
        return mix(self, F)


@dataclass
class CommCounter:
    """Tally of communicated scalars.

    Each mix of a ``d``-dimensional field adds ``directed_edges * d``: every
    agent sends its vector once to every neighbor.
    """

    scalars: int = 0
    rounds: int = 0

    def record(self, W: MixingMatrix, d: int) -> None:
        self.scalars += W.directed_edges * d
        self.rounds += 1


def _spectral_rho(w: np.ndarray) -> float:
    if w.shape[0] == 1:
        return 0.0
    eig = np.linalg.eigvalsh(w)
    # eigvalsh is ascending; eig[-1] is the consensus eigenvalue 1
    return float(max(abs(eig[0]), abs(eig[-2])))


def validate(w) -> MixingMatrix:
    """Check the gossip assumptions and return a :class:`MixingMatrix`.

    Raises
    ------
    NotSymmetric, NotStochastic, NegativeWeight, NoSpectralGap
    """
    w = np.array(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"mixing matrix must be square, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("mixing matrix has nonfinite entries")
    if np.max(np.abs(w - w.T)) > SYMMETRY_TOL:
        raise NotSymmetric("w_ij != w_ji")
    if np.any(w < 0):
        raise NegativeWeight(f"min weight {w.min():.3g} < 0")
    row_err = np.max(np.abs(w.sum(axis=1) - 1.0))
    if row_err > ROW_SUM_TOL:
        raise NotStochastic(f"row sums deviate from 1 by {row_err:.3g}")
    rho = _spectral_rho(w)
    if rho >= 1.0 - GAP_TOL:
        raise NoSpectralGap(f"rho = {rho:.15g} is not below 1 (graph disconnected?)")
    w.setflags(write=False)
    edges = int(np.count_nonzero(w)) - int(np.count_nonzero(np.diag(w)))
    return MixingMatrix(w=w, rho=rho, directed_edges=edges)


def build_ring(n: int, w: float) -> MixingMatrix:
    """Ring with self weight ``w`` and ``(1 - w) / 2`` to each of the two neighbors.

    Agents wrap around (agent 0 neighbors agent n-1). For ``n == 2`` both
    neighbor weights land on the same entry, so the off-diagonal is ``1 - w``.
    """
    if int(n) != n or n < 2:
        raise ValueError(f"ring needs n >= 2 agents, got {n}")
    if not 0.0 < w < 1.0:
        raise ValueError(f"ring self weight must lie in (0, 1), got {w}")
    n = int(n)
    mat = np.zeros((n, n))
    side = (1.0 - w) / 2.0
    for i in range(n):
        mat[i, i] += w
        mat[i, (i + 1) % n] += side
        mat[i, (i - 1) % n] += side
    return validate(mat)


def build_complete(n: int) -> MixingMatrix:
    if int(n) != n or n < 1:
        raise ValueError(f"complete graph needs n >= 1, got {n}")
    return validate(np.full((int(n), int(n)), 1.0 / n))


def load_csv(path) -> MixingMatrix:
    """Read an ``n x n`` comma separated weight matrix and validate it."""
    with open(Path(path), newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    return validate(np.array(rows))


def mix(W: MixingMatrix, F: np.ndarray, comm: CommCounter | None = None) -> np.ndarray:
    """One synchronous gossip round: column ``i`` becomes ``sum_j w_ij F[:, j]``."""
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[1] != W.n:
        raise ValueError(f"field of shape {F.shape} does not have {W.n} agent columns")
    if comm is not None:
        comm.record(W, F.shape[0])
    return F @ W.w.T


def agent_mean(F: np.ndarray) -> np.ndarray:
    return np.asarray(F).mean(axis=1)


def consensus_error(F: np.ndarray) -> float:
    """``||F - mean(F) 1^T||_F^2 / n``."""
    F = np.asarray(F)
    dev = F - F.mean(axis=1, keepdims=True)
    return float(np.sum(dev * dev) / F.shape[1])


def make_topology(kind: str, n: int, w: float = 0.4, path=None) -> MixingMatrix:
    """Build a topology from its config name (``ring``, ``complete`` or ``custom``)."""
    if kind == "ring":
        if n == 1:
            return build_complete(1)
        return build_ring(n, w)
    if kind == "complete":
        return build_complete(n)
    if kind == "custom":
        if path is None:
            raise ValueError("custom topology needs a CSV path")
        W = load_csv(path)
        if W.n != n:
            raise ValueError(f"custom matrix has {W.n} agents, expected {n}")
        return W
    raise ValueError(f"unknown topology {kind!r}")

"""Proximal-gradient iterations for the Lasso and its primal/dual objectives.

    P(x) = 1/2 ||A x - y||^2 + lam ||x||_1
    D(theta) = 1/2 ||y||^2 - lam^2/2 ||theta - y/lam||^2,   ||A^T theta||_inf <= 1
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .dictionary import power_iteration_lipschitz

__all__ = [
    "LassoProblem",
    "SolverAux",
    "Step",
    "ActiveOperator",
    "soft_threshold",
    "ista_step",
    "fista_step",
    "primal_value",
    "dual_value",
    "duality_gap",
    "lipschitz_bound",
    "GAP_CLAMP",
]

GAP_CLAMP = -1e-10


class GapWarning(RuntimeWarning):
    pass


def soft_threshold(z, u):
    """``sign(z) * max(|z| - u, 0)``, element-wise."""
    if np.any(np.asarray(u) < 0):
        raise ValueError("threshold must be non-negative")
    return np.sign(z) * np.maximum(np.abs(z) - u, 0.0)


@dataclass
class LassoProblem:
    dictionary: object
    y: np.ndarray
    lam: float

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if not self.lam > 0:
            raise ValueError("lam must be positive")


@dataclass
class SolverAux:
    """Step size and FISTA momentum state (unused by ISTA)."""

    lipschitz: float
    momentum_t: float = 1.0
    x_prev: np.ndarray | None = None

    def restart(self):
        self.momentum_t = 1.0
        self.x_prev = None

    def restrict(self, keep):
        if self.x_prev is not None:
            self.x_prev = self.x_prev[keep]


class Step(NamedTuple):
    x: np.ndarray
    point: np.ndarray  # where the gradient was taken
    residual: np.ndarray  # y - A @ point
    correlations: np.ndarray  # A^T residual


def _prox_grad(point, problem, L):
    op = problem.dictionary
    residual = problem.y - op.matvec(point)
    corr = op.rmatvec(residual)
    x_next = soft_threshold(point + corr / L, problem.lam / L)
    return Step(x_next, point, residual, corr)


def ista_step(x, problem, aux):
    return _prox_grad(x, problem, aux.lipschitz)


def fista_step(x, problem, aux):
    """One FISTA step from iterate ``x``; the momentum state in ``aux`` is updated."""
    t = aux.momentum_t
    t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
    if aux.x_prev is None:
        point = x
    else:
        point = x + ((t - 1.0) / t_next) * (x - aux.x_prev)
    aux.x_prev = x
    aux.momentum_t = t_next
    return _prox_grad(point, problem, aux.lipschitz)


STEPS = {"ista": ista_step, "fista": fista_step}


def primal_value(x, problem, residual=None):
    if residual is None:
        residual = problem.y - problem.dictionary.matvec(x)
    return 0.5 * float(residual @ residual) + problem.lam * float(np.abs(x).sum())


def dual_value(theta, problem):
    d = theta - problem.y / problem.lam
    return 0.5 * float(problem.y @ problem.y) - 0.5 * problem.lam**2 * float(d @ d)


def duality_gap(x, theta, problem, residual=None):
    """``P(x) - D(theta)``; roundoff below zero is clamped to 0.

    Values under -1e-10 indicate an infeasible ``theta`` and raise a warning.
    """
    gap = primal_value(x, problem, residual) - dual_value(theta, problem)
    if gap < 0:
        if gap < GAP_CLAMP:
            warnings.warn(f"negative duality gap {gap:.3e}", GapWarning, stacklevel=2)
        gap = 0.0
    return gap


def lipschitz_bound(dictionary, **kwargs):
    """1.05 x a power-iteration estimate of the squared spectral norm."""
    return power_iteration_lipschitz(dictionary.matvec, dictionary.rmatvec, dictionary.n_atoms, **kwargs)


class ActiveOperator:
    """A dictionary restricted to a set of columns.

    Dense sub-matrices are stored transposed (one contiguous row per atom)
    and re-sliced lazily: until the active set shrinks below ``reslice``
    times the cached width, products go through the cached superset with
    zero padding, which gives identical values.  ``A @ x`` with a sparse
    ``x`` only touches the rows of its nonzeros.
    """

    SPARSE_FRACTION = 0.25

    def __init__(self, dictionary, active, reslice=0.8):
        self.base = getattr(dictionary, "operator", dictionary)
        self.n_rows = self.base.n_rows
        self._dense = hasattr(self.base, "entries")
        self._reslice = reslice
        self._cols = None
        self._subT = None
        self.update(active)

    def update(self, active):
        active = np.asarray(active, dtype=np.intp)
        self.active = active
        if self._dense:
            if self._cols is None or len(active) < self._reslice * len(self._cols):
                self._cols = active
                self._subT = np.ascontiguousarray(self.base.entries.T[active])
            self._pos = np.searchsorted(self._cols, active)
            self._width = len(self._cols)
        else:
            self._pos = active
            self._width = self.base.n_atoms

    @property
    def n_atoms(self):
        return len(self.active)

    def matvec(self, x):
        if self._dense:
            nz = np.flatnonzero(x)
            if len(nz) <= self.SPARSE_FRACTION * len(x):
                return x[nz] @ self._subT[self._pos[nz]]
            full = np.zeros(self._width)
            full[self._pos] = x
            return full @ self._subT
        full = np.zeros(self._width)
        full[self._pos] = x
        return self.base.matvec(full)

    def rmatvec(self, r):
        if self._dense:
            return (self._subT @ r)[self._pos]
        return self.base.rmatvec(r)[self._pos]

"""Dictionary operators: dense matrices, sums of Kronecker products, and
approximation sequences with certified per-atom error bounds.

A sum-of-Kronecker ("SuKro") operator is

    A~ = sum_k B_k kron C_k,   B_k: n1 x k1,  C_k: n2 x k2,

with N = n1 * n2 rows and K = k1 * k2 columns.  It is applied through the
reshape identity (B kron C) vec(X) = vec(C X B^T), which never forms the
N x K matrix.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.sparse.linalg import svds

__all__ = [
    "DenseDictionary",
    "SukroDictionary",
    "ApproxDictionary",
    "ApproxSequence",
    "SCENARIO_DECAY",
    "kronecker_shape",
    "rearrange",
    "exact_approximation",
    "build_sukro_sequence",
    "synthesize_scenario",
    "matvec",
    "adjoint_matvec",
    "power_iteration_lipschitz",
]

# Geometric decay ratio of the rearranged matrix's singular values.
SCENARIO_DECAY = {"easy": 0.3, "moderate": 0.6, "hard": 0.93}

LIPSCHITZ_SAFETY = 1.05


def _as_vector(v, size, name):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != size:
        raise ValueError(f"{name} must be a vector of length {size}, got shape {v.shape}")
    return v


def _isqrt_exact(n, name):
    r = math.isqrt(n)
    if r * r != n:
        raise ValueError(f"{name}={n} is not a perfect square; pass factor_shape explicitly")
    return r


def kronecker_shape(n_rows, n_atoms, factor_shape=None):
    """Return ``(n1, k1, n2, k2)`` so that N = n1*n2 and K = k1*k2.

    Without ``factor_shape`` both dimensions must be perfect squares and the
    factors are square-root sized, as in the classical SuKro setting.
    """
    if factor_shape is None:
        n1 = _isqrt_exact(n_rows, "N")
        k1 = _isqrt_exact(n_atoms, "K")
        return n1, k1, n1, k1
    n1, k1 = (int(v) for v in factor_shape)
    if n1 < 1 or k1 < 1 or n_rows % n1 or n_atoms % k1:
        raise ValueError(f"factor_shape {factor_shape} does not divide ({n_rows}, {n_atoms})")
    return n1, k1, n_rows // n1, n_atoms // k1


def power_iteration_lipschitz(matvec_fn, rmatvec_fn, n_atoms, max_iter=200, rtol=1e-9, seed=0):
    """Upper estimate of ``sigma_max(A)**2`` by power iteration on A^T A.

    The converged Rayleigh quotient is multiplied by a 1.05 safety factor.
    """
    if n_atoms == 0:
        return 1.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n_atoms)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = rmatvec_fn(matvec_fn(v))
        new = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            break
        v = w / nrm
        if abs(new - est) <= rtol * max(new, 1e-300):
            est = new
            break
        est = new
    # ||A^T A v|| >= Rayleigh quotient and is still <= sigma_max^2
    est = max(est, float(nrm)) if nrm > 0 else est
    return LIPSCHITZ_SAFETY * est if est > 0 else 1.0


class DenseDictionary:
    """Explicit N x K dictionary with precomputed atom norms."""

    def __init__(self, entries):
        entries = np.array(entries, dtype=np.float64, order="C")
        if entries.ndim != 2 or entries.shape[0] < 1 or entries.shape[1] < 1:
            raise ValueError(f"dictionary must be a non-empty matrix, got shape {entries.shape}")
        entries.setflags(write=False)
        self.entries = entries
        norms = np.linalg.norm(entries, axis=0)
        norms.setflags(write=False)
        self.atom_norms_2 = norms

    @property
    def shape(self):
        return self.entries.shape

    @property
    def n_rows(self):
        return self.entries.shape[0]

    @property
    def n_atoms(self):
        return self.entries.shape[1]

    @property
    def matvec_cost(self):
        return self.n_rows * self.n_atoms

    @property
    def relative_complexity(self):
        return 1.0

    def matvec(self, x):
        return self.entries @ _as_vector(x, self.n_atoms, "x")

    def rmatvec(self, r):
        return self.entries.T @ _as_vector(r, self.n_rows, "r")

    def to_dense(self):
        return self.entries

    @cached_property
    def lipschitz(self):
        return power_iteration_lipschitz(self.matvec, self.rmatvec, self.n_atoms)

    def __eq__(self, other):
        return isinstance(other, DenseDictionary) and np.array_equal(self.entries, other.entries)

    __hash__ = None

    # -- persistence -------------------------------------------------------

    def to_csv(self, path):
        np.savetxt(path, self.entries, delimiter=",", fmt="%.17g")

    @classmethod
    def from_csv(cls, path):
        return cls(np.loadtxt(path, delimiter=",", ndmin=2))

    def to_blob(self, path):
        """Write an 8-byte little-endian ``(N, K)`` header then column-major float64 data."""
        n, k = self.shape
        with open(path, "wb") as fh:
            fh.write(struct.pack("<II", n, k))
            fh.write(np.asfortranarray(self.entries).astype("<f8").tobytes(order="F"))

    @classmethod
    def from_blob(cls, path):
        raw = Path(path).read_bytes()
        if len(raw) < 8:
            raise ValueError("blob too short for header")
        n, k = struct.unpack("<II", raw[:8])
        if len(raw) != 8 + 8 * n * k:
            raise ValueError(f"blob size {len(raw)} inconsistent with header ({n}, {k})")
        data = np.frombuffer(raw, dtype="<f8", offset=8).reshape((n, k), order="F")
        return cls(data)


class SukroDictionary:
    """Sum of Kronecker products ``sum_k B[k] kron C[k]``.

    Parameters
    ----------
    B : array, shape (n_kron, n1, k1)
    C : array, shape (n_kron, n2, k2)
    """

    def __init__(self, B, C):
        B = np.array(B, dtype=np.float64)
        C = np.array(C, dtype=np.float64)
        if B.ndim == 2:
            B = B[None]
        if C.ndim == 2:
            C = C[None]
        if B.ndim != 3 or C.ndim != 3 or B.shape[0] != C.shape[0] or B.shape[0] < 1:
            raise ValueError("B and C must be stacks with the same number (>= 1) of terms")
        self.B = B
        self.C = C
        n, n1, k1 = B.shape
        _, n2, k2 = C.shape
        self.n_kron = n
        self.factor_dims = (n1, k1, n2, k2)
        self.shape = (n1 * n2, k1 * k2)
        # Two contraction orders; keep the cheaper one.
        cost_bx = n * (n1 * k1 * k2 + n1 * k2 * n2)
        cost_xc = n * (k1 * k2 * n2 + n1 * k1 * n2)
        self._bx_first = cost_bx <= cost_xc
        self.matvec_cost = min(cost_bx, cost_xc)
        # stacked factors for single-GEMM contractions
        self._Ct_stack = C.transpose(0, 2, 1).reshape(n * k2, n2)
        self._B_rows = B.reshape(n * n1, k1)
        self._C_cols = C.transpose(1, 0, 2).reshape(n2, n * k2)
        self._Ct_cols = C.transpose(2, 0, 1).reshape(k2, n * n2)
        self._B_cols = B.transpose(1, 0, 2).reshape(n1, n * k1)
        self._C_rows = C.reshape(n * n2, k2)

    @property
    def n_rows(self):
        return self.shape[0]

    @property
    def n_atoms(self):
        return self.shape[1]

    @property
    def relative_complexity(self):
        return self.matvec_cost / (self.n_rows * self.n_atoms)

    def matvec(self, x):
        n, (n1, k1, n2, k2) = self.n_kron, self.factor_dims
        X = _as_vector(x, self.n_atoms, "x").reshape(k1, k2)
        if self._bx_first:
            T = np.matmul(self.B, X)  # (n, n1, k2)
            Y = T.transpose(1, 0, 2).reshape(n1, n * k2) @ self._Ct_stack
        else:
            U = (X @ self._Ct_cols).reshape(k1, n, n2).transpose(1, 0, 2)  # (n, k1, n2)
            Y = self._B_cols @ U.reshape(n * k1, n2)
        return Y.ravel()

    def rmatvec(self, r):
        n, (n1, k1, n2, k2) = self.n_kron, self.factor_dims
        R = _as_vector(r, self.n_rows, "r").reshape(n1, n2)
        if self._bx_first:
            W = (R @ self._C_cols).reshape(n1, n, k2).transpose(1, 0, 2)  # (n, n1, k2)
            X = self._B_rows.T @ W.reshape(n * n1, k2)
        else:
            V = np.matmul(self.B.transpose(0, 2, 1), R)  # (n, k1, n2)
            X = V.transpose(1, 0, 2).reshape(k1, n * n2) @ self._C_rows
        return X.ravel()

    def to_dense(self):
        return sum(np.kron(b, c) for b, c in zip(self.B, self.C))

    @cached_property
    def lipschitz(self):
        return power_iteration_lipschitz(self.matvec, self.rmatvec, self.n_atoms)


def matvec(dictionary, x):
    """``A @ x`` for any dictionary-like operator."""
    return dictionary.matvec(x)


def adjoint_matvec(dictionary, r):
    """``A.T @ r`` for any dictionary-like operator."""
    return dictionary.rmatvec(r)


@dataclass(frozen=True, eq=False)
class ApproxDictionary:
    """An approximation of the exact dictionary with certified error bounds.

    ``atom_errors[j] >= ||a~_j - a_j||_2`` and ``operator_error`` is the
    largest of them, which bounds ``||A - A~||_{1->2}``.  ``atom_norms`` holds
    the exact ``||a_j||_2`` needed by the norm-restricted zone test.
    """

    operator: object
    atom_errors: np.ndarray
    operator_error: float
    matvec_cost: int
    approx_atom_norms: np.ndarray
    atom_norms: np.ndarray
    n_kron: int | None = None
    exact_cost: int = field(default=0, repr=False)

    def __post_init__(self):
        if np.any(self.atom_errors < 0):
            raise ValueError("atom error bounds must be non-negative")
        if not 0 < self.matvec_cost <= self.exact_cost:
            raise ValueError("relative complexity must lie in (0, 1]")

    @property
    def n_rows(self):
        return self.operator.n_rows

    @property
    def n_atoms(self):
        return self.operator.n_atoms

    @property
    def relative_complexity(self):
        return self.matvec_cost / self.exact_cost

    @property
    def is_exact(self):
        return self.operator_error == 0.0 and self.matvec_cost == self.exact_cost

    def matvec(self, x):
        return self.operator.matvec(x)

    def rmatvec(self, r):
        return self.operator.rmatvec(r)

    @property
    def lipschitz(self):
        return self.operator.lipschitz


def exact_approximation(A):
    """Wrap the exact dictionary as the last element of a sequence."""
    zeros = np.zeros(A.n_atoms)
    zeros.setflags(write=False)
    return ApproxDictionary(
        operator=A,
        atom_errors=zeros,
        operator_error=0.0,
        matvec_cost=A.matvec_cost,
        approx_atom_norms=A.atom_norms_2,
        atom_norms=A.atom_norms_2,
        exact_cost=A.matvec_cost,
    )


class ApproxSequence(Sequence):
    """Ordered approximations ``A~^0, ..., A~^I`` ending with the exact dictionary."""

    def __init__(self, dicts):
        dicts = list(dicts)
        if not dicts:
            raise ValueError("an approximation sequence needs at least the exact dictionary")
        if not dicts[-1].is_exact:
            raise ValueError("the last dictionary of a sequence must be exact")
        shape = (dicts[0].n_rows, dicts[0].n_atoms)
        for prev, nxt in zip(dicts, dicts[1:]):
            if (nxt.n_rows, nxt.n_atoms) != shape:
                raise ValueError("all dictionaries in a sequence must share their shape")
            if not prev.matvec_cost < nxt.matvec_cost:
                raise ValueError("relative complexity must strictly increase along the sequence")
            if np.any(nxt.atom_errors > prev.atom_errors):
                raise ValueError("atom error bounds must be non-increasing along the sequence")
        self._dicts = dicts

    def __getitem__(self, i):
        return self._dicts[i]

    def __len__(self):
        return len(self._dicts)

    @property
    def last_index(self):
        return len(self._dicts) - 1

    @property
    def exact(self):
        return self._dicts[-1]


def rearrange(entries, n1, k1, n2, k2):
    """Van Loan-Pitsianis rearrangement: maps ``B kron C`` to ``vec(B) vec(C)^T``."""
    return entries.reshape(n1, n2, k1, k2).transpose(0, 2, 1, 3).reshape(n1 * k1, n2 * k2)


def _leading_triplets(R, rank):
    m = min(R.shape)
    if rank >= m - 1 or m <= 64:
        U, s, Vt = np.linalg.svd(R, full_matrices=False)
        return U[:, :rank], s[:rank], Vt[:rank]
    U, s, Vt = svds(R, k=rank, tol=1e-12, random_state=0)
    order = np.argsort(s)[::-1]
    return U[:, order], s[order], Vt[order]


def build_sukro_sequence(A, ranks, factor_shape=None):
    """Nearest sum-of-Kronecker approximations of ``A`` for increasing term counts.

    Each approximation is the truncated SVD of the rearranged matrix, which
    is optimal in Frobenius norm for its number of Kronecker terms.  Atom
    errors are measured directly on the residual; they are then made
    component-wise non-increasing along the sequence by a running maximum
    from the finest approximation backwards (a larger value is still a valid
    bound).  The exact dictionary is appended last.
    """
    if not isinstance(A, DenseDictionary):
        A = DenseDictionary(A)
    ranks = [int(r) for r in ranks]
    if any(r < 1 for r in ranks) or any(b <= a for a, b in zip(ranks, ranks[1:])):
        raise ValueError("ranks must be positive and strictly increasing")
    N, K = A.shape
    n1, k1, n2, k2 = kronecker_shape(N, K, factor_shape)
    max_rank = min(n1 * k1, n2 * k2)
    if ranks and ranks[-1] > max_rank:
        raise ValueError(f"rank {ranks[-1]} exceeds the rearranged matrix rank bound {max_rank}")

    R = rearrange(A.entries, n1, k1, n2, k2)
    approx = []
    if ranks:
        U, s, Vt = _leading_triplets(R, ranks[-1])
        for r in ranks:
            root = np.sqrt(s[:r])
            B = (U[:, :r] * root).T.reshape(r, n1, k1)
            C = (Vt[:r].T * root).T.reshape(r, n2, k2)
            op = SukroDictionary(B, C)
            low = (U[:, :r] * s[:r]) @ Vt[:r]
            resid = (R - low).reshape(n1, k1, n2, k2)
            errors = np.sqrt(np.einsum("abcd,abcd->bd", resid, resid)).ravel()
            low = low.reshape(n1, k1, n2, k2)
            approx_norms = np.sqrt(np.einsum("abcd,abcd->bd", low, low)).ravel()
            del low, resid
            # float roundoff margin on the measured residual norms
            errors = errors * (1 + 1e-12) + 1e-15
            approx.append((op, errors, approx_norms, r))

    dicts = []
    running = np.zeros(K)
    for op, errors, approx_norms, r in reversed(approx):
        running = np.maximum(running, errors)
        eps = running.copy()
        eps.setflags(write=False)
        approx_norms.setflags(write=False)
        if op.matvec_cost >= A.matvec_cost:
            raise ValueError(f"{r} Kronecker terms are not cheaper than the dense dictionary")
        dicts.append(
            ApproxDictionary(
                operator=op,
                atom_errors=eps,
                operator_error=float(eps.max()),
                matvec_cost=op.matvec_cost,
                approx_atom_norms=approx_norms,
                atom_norms=A.atom_norms_2,
                n_kron=r,
                exact_cost=A.matvec_cost,
            )
        )
    dicts.reverse()
    dicts.append(exact_approximation(A))
    return ApproxSequence(dicts)


def synthesize_scenario(n_rows, n_atoms, scenario, seed, factor_shape=None, n_terms=None):
    """Dictionary whose Kronecker approximability is set by ``scenario``.

    The dictionary is ``sum_k sigma_k B_k kron C_k`` with ``sigma_k = r**k``
    and ``r`` from :data:`SCENARIO_DECAY`.  For every column index of the B
    factors, the columns ``B_k[:, j]`` are orthonormal across k and the C
    factors have unit columns, so every atom has the same norm and the final
    column renormalization is a global rescaling that keeps the Kronecker
    rank exact.
    """
    if scenario not in SCENARIO_DECAY:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {sorted(SCENARIO_DECAY)}")
    n1, k1, n2, k2 = kronecker_shape(n_rows, n_atoms, factor_shape)
    if n_terms is None:
        n_terms = min(n1, 64)
    if not 1 <= n_terms <= n1:
        raise ValueError(f"n_terms must lie in [1, {n1}]")
    rng = np.random.default_rng(seed)
    ratio = SCENARIO_DECAY[scenario]
    sigma = ratio ** np.arange(n_terms)

    B = np.empty((n_terms, n1, k1))
    for j in range(k1):
        q, _ = np.linalg.qr(rng.standard_normal((n1, n_terms)))
        B[:, :, j] = q.T
    C = rng.standard_normal((n_terms, n2, k2))
    C /= np.linalg.norm(C, axis=1, keepdims=True)

    R = np.einsum("k,ka,kb->ab", sigma, B.reshape(n_terms, -1), C.reshape(n_terms, -1))
    entries = R.reshape(n1, k1, n2, k2).transpose(0, 2, 1, 3).reshape(n_rows, n_atoms)
    entries /= np.linalg.norm(entries, axis=0, keepdims=True)
    return DenseDictionary(entries)

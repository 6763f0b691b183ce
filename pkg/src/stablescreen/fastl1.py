"""Multi-dictionary Lasso solver with stable screening (FastL1), plus the two
baselines it is compared with: the plain proximal solver and the same solver
with conventional dynamic screening.

Iterations start on the cheapest approximation of the dictionary and move to
finer ones when either

* the gap measured with a point feasible for the approximate problem only
  collapses relative to the gap of a point feasible for the exact problem
  (``gamma_t <= Gamma``): go to the next approximation; or
* the look-ahead count of surviving atoms says the exact dictionary,
  restricted to them, is already cheaper than the current approximation:
  jump straight to the exact dictionary.

The stopping gap is only evaluated on the exact dictionary.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dictionary import ApproxSequence, DenseDictionary, exact_approximation
from .screening import (
    DualPoints,
    Rule,
    SafeSphere,
    SphereInputs,
    build_sphere,
    dual_point_dynamic,
    sphere_test_values,
    stable_lambda_max,
    zone_test_values,
)
from .solver import STEPS, ActiveOperator, LassoProblem, SolverAux, dual_value, lipschitz_bound, primal_value

__all__ = [
    "SwitchConfig",
    "TraceRecord",
    "SolveResult",
    "IterationInfo",
    "ConvergenceError",
    "flops_plain",
    "flops_screened",
    "flops_stable",
    "FlopLedger",
    "gap_ratio",
    "lookahead_count",
    "switch_dictionary",
    "solve_plain",
    "solve_screened",
    "fastl1_solve",
    "GAMMA_PRESETS",
]

GAMMA_PRESETS = {"hard": 0.5, "moderate": 0.25, "easy": 0.2}

NO_GAP = -1.0


@dataclass(frozen=True)
class SwitchConfig:
    gamma_threshold: float = 0.5
    screening_interval: int = 1
    tolerance: float = 1e-6
    max_iter: int = 10**6
    precompute_aty: bool = False
    # optional measured relative complexities, one per approximation
    rc_override: tuple | None = None

    def __post_init__(self):
        if not 0 < self.gamma_threshold < 1:
            raise ValueError("gamma_threshold must lie in (0, 1)")
        if self.screening_interval < 1:
            raise ValueError("screening_interval must be a positive integer")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


@dataclass(frozen=True)
class TraceRecord:
    run_id: str
    trial: int
    lambda_ratio: float
    iter: int
    dict_index: int
    active_size: int
    gap: float
    gamma: float
    flops_cum: int
    wall_ms: float
    variant: str = ""
    nnz: int = 0
    matvec_cost: int = 0
    flops: int = 0
    event: str = ""


@dataclass
class SolveResult:
    x: np.ndarray
    trace: list
    gap: float
    converged: bool = True
    flops: int = 0
    wall_ms: float = 0.0

    @property
    def n_iter(self):
        return len(self.trace)

    @property
    def dict_path(self):
        return [r.dict_index for r in self.trace]


class ConvergenceError(RuntimeError):
    """Raised when the iteration cap is hit; carries the last iterate."""

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


@dataclass
class IterationInfo:
    """Snapshot handed to the optional per-iteration callback."""

    t: int
    dict_index: int
    stable: bool
    point: np.ndarray
    active_before: np.ndarray
    active_after: np.ndarray
    dual: DualPoints | None
    sphere: SafeSphere | None
    test_values: np.ndarray | None
    lookahead: int | None
    gamma: float
    lam_max_bound: float | None
    inner: np.ndarray | None = field(default=None, repr=False)


# -- flop model ---------------------------------------------------------------


def flops_plain(n_rows, n_atoms, nnz):
    """Unscreened proximal iteration."""
    return (n_atoms + nnz) * n_rows + 4 * n_atoms + n_rows


def flops_screened(n_rows, active_size, nnz):
    """Iteration restricted to the preserved atoms with conventional screening."""
    return (active_size + nnz) * n_rows + 6 * active_size + 5 * n_rows


def flops_stable(n_rows, matvec_cost, nnz, active_size):
    """Iteration on a structured approximation with stable screening.

    ``matvec_cost`` is RC * N * K, the cost of one structured product, which
    does not shrink with screening.
    """
    return matvec_cost + nnz * n_rows + 8 * active_size + 7 * n_rows


@dataclass
class FlopLedger:
    total: int = 0

    def add(self, flops):
        self.total += int(flops)
        return self.total


def iteration_flops(record, n_rows, n_atoms, exact_index):
    """Recompute one row's flops from the trace columns alone."""
    if record.variant == "plain":
        return flops_plain(n_rows, n_atoms, record.nnz)
    if record.dict_index == exact_index:
        return flops_screened(n_rows, record.active_size, record.nnz)
    return flops_stable(n_rows, record.matvec_cost, record.nnz, record.active_size)


# -- switching ----------------------------------------------------------------


def _ratio(gap_tilde, gap_prime):
    if gap_prime <= 1e-15:
        return 0.0
    return min(max(gap_tilde / gap_prime, 0.0), 1.0)


def gap_ratio(x, theta_prime, theta_tilde, problem):
    """``G(x, theta~ | A~) / G(x, theta' | A~)``, clamped to [0, 1].

    ``problem.dictionary`` is the approximate dictionary.  A vanishing
    denominator returns 0, which forces a switch.
    """
    p = primal_value(x, problem)
    return _ratio(p - dual_value(theta_tilde, problem), p - dual_value(theta_prime, problem))


def lookahead_count(inner, approx_atom_norms, radius):
    """Number of atoms the conventional test on the approximate atoms keeps.

    Estimates how many atoms would survive right after switching to a finer
    dictionary; never used to discard atoms.
    """
    return int(np.count_nonzero(sphere_test_values(inner, approx_atom_norms, radius) >= 1.0))


def switch_dictionary(i, last, gamma, gamma_threshold, lookahead, rc, n_atoms):
    """Index of the dictionary to use next.

    The speed criterion (jump to the exact dictionary) takes precedence over
    the convergence criterion (advance by one).
    """
    if i >= last:
        return last
    if lookahead <= rc * n_atoms:
        return last
    if gamma <= gamma_threshold:
        return i + 1
    return i


# -- baselines ----------------------------------------------------------------


def _as_dense(A):
    return A if isinstance(A, DenseDictionary) else DenseDictionary(A)


def _pad(x, active, n_atoms):
    full = np.zeros(n_atoms)
    full[active] = x
    return full


def solve_plain(A, y, lam, tol=1e-6, solver="ista", max_iter=10**6, run_id="", trial=0, lambda_ratio=0.0):
    """Proximal solver without screening; stops on the duality gap."""
    A = _as_dense(A)
    y = np.asarray(y, dtype=np.float64)
    N, K = A.shape
    problem = LassoProblem(ActiveOperator(A, np.arange(K)), y, lam)
    aux = SolverAux(A.lipschitz)
    step_fn = STEPS[solver]
    x = np.zeros(K)
    aty_full = A.rmatvec(y)
    ledger = FlopLedger()
    trace = []
    start = time.perf_counter()
    for t in range(max_iter):
        step = step_fn(x, problem, aux)
        p, rho = step.point, step.residual
        dp = dual_point_dynamic(rho, step.correlations, y, lam, 0.0, aty=aty_full)
        gap = max(primal_value(p, problem, rho) - dual_value(dp.theta_tilde, problem), 0.0)
        nnz = int(np.count_nonzero(p))
        flops = flops_plain(N, K, nnz)
        done = gap <= tol
        trace.append(
            TraceRecord(run_id, trial, lambda_ratio, t + 1, 0, K, gap, 1.0, ledger.add(flops),
                        (time.perf_counter() - start) * 1e3, "plain", nnz, A.matvec_cost, flops,
                        "converged" if done else "")
        )
        if done:
            return SolveResult(p.copy(), trace, gap, True, ledger.total, trace[-1].wall_ms)
        x = step.x
    result = SolveResult(x, trace, trace[-1].gap, False, ledger.total, trace[-1].wall_ms)
    raise ConvergenceError(f"no convergence within {max_iter} iterations", result)


def solve_screened(
    A,
    y,
    lam,
    rule="gap",
    tol=1e-6,
    solver="ista",
    max_iter=10**6,
    screening_interval=1,
    callback: Callable | None = None,
    run_id="",
    trial=0,
    lambda_ratio=0.0,
):
    """Proximal solver with conventional safe screening on the exact dictionary."""
    A = _as_dense(A)
    rule = Rule(rule).conventional
    y = np.asarray(y, dtype=np.float64)
    N, K = A.shape
    step_fn = STEPS[solver]
    aty_full = A.rmatvec(y)
    lam_max = float(np.max(np.abs(aty_full)))
    norms_full = A.atom_norms_2

    active = np.arange(K)
    op = ActiveOperator(A, active)
    problem = LassoProblem(op, y, lam)
    aux = SolverAux(A.lipschitz)
    l_width = K
    x = np.zeros(K)
    ledger = FlopLedger()
    trace = []
    start = time.perf_counter()
    for t in range(max_iter):
        step = step_fn(x, problem, aux)
        p, rho, corr = step.point, step.residual, step.correlations
        dp = dual_point_dynamic(rho, corr, y, lam, 0.0, aty=aty_full[active])
        theta = dp.theta_tilde
        gap = max(primal_value(p, problem, rho) - dual_value(theta, problem), 0.0)
        nnz = int(np.count_nonzero(p))
        flops = flops_screened(N, len(active), nnz)
        if gap <= tol:
            trace.append(
                TraceRecord(run_id, trial, lambda_ratio, t + 1, 0, len(active), gap, 1.0, ledger.add(flops),
                            (time.perf_counter() - start) * 1e3, "screened", nnz, A.matvec_cost, flops,
                            "converged")
            )
            return SolveResult(_pad(p, active, K), trace, gap, True, ledger.total, trace[-1].wall_ms)

        before = active
        sphere = values = None
        x_next = step.x
        if t % screening_interval == 0:
            inputs = SphereInputs(y, lam, lam_max=lam_max, theta=theta, gap=gap)
            sphere = build_sphere(rule, inputs)
            if rule is Rule.GAP:
                inner = dp.inner_tilde
            else:
                inner = aty_full[active] / lam
            values = sphere_test_values(inner, norms_full[active], sphere.radius)
            keep = values >= 1.0
            if not keep.all():
                active = active[keep]
                x_next = x_next[keep]
                aux.restrict(keep)
                op.update(active)
                if len(active) <= l_width / 2:
                    aux.lipschitz = lipschitz_bound(op) if len(active) else 1.0
                    l_width = len(active)
        trace.append(
            TraceRecord(run_id, trial, lambda_ratio, t + 1, 0, len(before), gap, 1.0, ledger.add(flops),
                        (time.perf_counter() - start) * 1e3, "screened", nnz, A.matvec_cost, flops, "")
        )
        if callback is not None:
            callback(IterationInfo(t, 0, False, p, before, active, dp, sphere, values, None, 1.0, lam_max))
        x = x_next
    result = SolveResult(_pad(x, active, K), trace, trace[-1].gap, False, ledger.total, trace[-1].wall_ms)
    raise ConvergenceError(f"no convergence within {max_iter} iterations", result)


# -- FastL1 ---------------------------------------------------------------------


def fastl1_solve(
    sequence,
    y,
    lam,
    config: SwitchConfig | None = None,
    solver="ista",
    rule="stable-gap",
    callback: Callable | None = None,
    run_id="",
    trial=0,
    lambda_ratio=0.0,
):
    """Solve the Lasso on the last dictionary of ``sequence`` using the
    cheaper approximations first.

    Returns a :class:`SolveResult` whose ``x`` is zero outside the preserved
    atoms and whose duality gap on the exact problem is at most
    ``config.tolerance``.
    """
    config = config or SwitchConfig()
    if isinstance(sequence, DenseDictionary):
        sequence = ApproxSequence([exact_approximation(sequence)])
    elif not isinstance(sequence, ApproxSequence):
        sequence = ApproxSequence(sequence)
    rule = Rule(rule).as_stable
    step_fn = STEPS[solver]
    y = np.asarray(y, dtype=np.float64)
    last = sequence.last_index
    exact = sequence.exact
    N, K = exact.n_rows, exact.n_atoms
    rc = [d.relative_complexity for d in sequence]
    if config.rc_override is not None:
        if len(config.rc_override) != last:
            raise ValueError("rc_override needs one value per approximation")
        rc[:last] = [float(v) for v in config.rc_override]

    aty_cache = {}

    def aty(index):
        # one-off product per dictionary, shared by static/dynamic centers
        if index not in aty_cache:
            aty_cache[index] = sequence[index].rmatvec(y)
        return aty_cache[index]

    aty_exact = aty(last) if config.precompute_aty else None

    i = 0
    active = np.arange(K)
    op = ActiveOperator(sequence[i], active)
    problem = LassoProblem(op, y, lam)
    aux = SolverAux(sequence[i].lipschitz)
    l_width = K
    x = np.zeros(K)
    ledger = FlopLedger()
    trace = []
    zero_eps = np.zeros(K)
    start = time.perf_counter()

    for t in range(config.max_iter):
        d = sequence[i]
        on_exact = i == last
        eps = zero_eps[: len(active)] if on_exact else d.atom_errors[active]
        step = step_fn(x, problem, aux)
        p, rho, corr = step.point, step.residual, step.correlations
        rho_norm = float(np.linalg.norm(rho))
        dp = dual_point_dynamic(rho, corr, y, lam, eps, aty=aty(i)[active] if rho_norm == 0 else None)
        primal = primal_value(p, problem, rho)
        gap_prime = max(primal - dual_value(dp.theta_prime, problem), 0.0)
        gap_tilde = max(primal - dual_value(dp.theta_tilde, problem), 0.0)
        gamma = _ratio(gap_tilde, gap_prime)
        nnz = int(np.count_nonzero(p))
        if on_exact:
            flops = flops_screened(N, len(active), nnz)
        else:
            flops = flops_stable(N, d.matvec_cost, nnz, len(active))
        gap_col = gap_prime if on_exact else NO_GAP

        if on_exact and gap_prime <= config.tolerance:
            trace.append(
                TraceRecord(run_id, trial, lambda_ratio, t + 1, i, len(active), gap_col, gamma, ledger.add(flops),
                            (time.perf_counter() - start) * 1e3, "fastl1", nnz, d.matvec_cost, flops, "converged")
            )
            return SolveResult(_pad(p, active, K), trace, gap_prime, True, ledger.total, trace[-1].wall_ms)

        before = active
        x_next = step.x
        sphere = values = None
        lookahead = None
        lam_bound = None
        new_index = i
        event = ""
        if t % config.screening_interval == 0:
            stable = not on_exact
            use_rule = rule if stable else rule.conventional
            if use_rule.conventional is Rule.STATIC:
                lam_bound = stable_lambda_max(d, y, aty(i)) if stable else float(np.max(np.abs(aty(i))))
            inputs = SphereInputs(
                y, lam, lam_max=lam_bound, theta=dp.theta_prime, gap=gap_prime,
                residual_norm=rho_norm, x_l1=float(np.abs(p).sum()),
                operator_error=0.0 if on_exact else d.operator_error,
            )
            sphere = build_sphere(use_rule, inputs)
            exact_center_test = use_rule is Rule.STABLE_DYNAMIC and aty_exact is not None
            if use_rule.centered_on_signal:
                inner = (aty_exact if exact_center_test else aty(i))[active] / lam
            else:
                # center theta' is proportional to the residual: A~^T theta' reuses A~^T residual
                inner = dp.inner_prime
            if stable and not exact_center_test:
                values = zone_test_values(inner, eps, float(np.linalg.norm(sphere.center)),
                                          d.atom_norms[active], sphere.radius)
            else:
                values = sphere_test_values(inner, d.atom_norms[active], sphere.radius)
            keep = values >= 1.0
            if not on_exact:
                lookahead = lookahead_count(inner[keep], d.approx_atom_norms[active][keep], sphere.radius)
                new_index = switch_dictionary(i, last, gamma, config.gamma_threshold, lookahead, rc[i], K)
                if new_index != i:
                    event = "speed" if new_index == last and lookahead <= rc[i] * K else "convergence"
            if not keep.all():
                active = active[keep]
                x_next = x_next[keep]
                aux.restrict(keep)

        trace.append(
            TraceRecord(run_id, trial, lambda_ratio, t + 1, i, len(before), gap_col, gamma, ledger.add(flops),
                        (time.perf_counter() - start) * 1e3, "fastl1", nnz, d.matvec_cost, flops, event)
        )
        if callback is not None:
            callback(IterationInfo(t, i, not on_exact, p, before, active, dp, sphere, values, lookahead,
                                   gamma, lam_bound, inner if sphere is not None else None))

        if new_index != i:
            i = new_index
            op = ActiveOperator(sequence[i], active)
            problem = LassoProblem(op, y, lam)
            aux.restart()
            if len(active) == K:
                aux.lipschitz = sequence[i].lipschitz
            else:
                aux.lipschitz = lipschitz_bound(op) if len(active) else 1.0
            l_width = len(active)
        elif len(active) != len(before):
            op.update(active)
            if len(active) <= l_width / 2:
                aux.lipschitz = lipschitz_bound(op) if len(active) else 1.0
                l_width = len(active)
        x = x_next

    result = SolveResult(_pad(x, active, K), trace, NO_GAP, False, ledger.total, trace[-1].wall_ms)
    raise ConvergenceError(f"no convergence within {config.max_iter} iterations", result)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from instances import make_instance
from oracles import lasso_oracle
from stablescreen.dictionary import ApproxDictionary, DenseDictionary, exact_approximation
from stablescreen.screening import (
    Rule,
    SafeSphere,
    SphereInputs,
    build_sphere,
    dual_point_dynamic,
    dual_scale,
    gap_sphere,
    lambda_max,
    screen,
    sphere_test,
    stable_ball_test,
    stable_dual_scale,
    stable_gap_sphere,
    stable_lambda_max,
    stable_zone_test,
    static_sphere,
    zone_test_values,
)
from stablescreen.solver import LassoProblem, dual_value, primal_value


def approx_of(M, errors, exact):
    """Hand-built approximation ``M`` of ``exact`` with the given error bounds."""
    op = DenseDictionary(M)
    errors = np.asarray(errors, dtype=float)
    return ApproxDictionary(op, errors, float(errors.max()), op.matvec_cost, op.atom_norms_2,
                            exact.atom_norms_2, exact_cost=op.matvec_cost)


def unit_ball_samples(rng, n, count, surface=True):
    v = rng.standard_normal((count, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    if not surface:
        v *= rng.random((count, 1)) ** (1 / n)
    return v


def test_rule_names():
    assert Rule("stable-gap").conventional is Rule.GAP
    assert Rule.DYNAMIC.as_stable is Rule.STABLE_DYNAMIC
    assert Rule.STABLE_STATIC.stable and not Rule.STATIC.stable
    assert Rule.STABLE_DYNAMIC.centered_on_signal and not Rule.GAP.centered_on_signal


def test_sphere_rejects_negative_radius():
    with pytest.raises(ValueError):
        SafeSphere(np.zeros(2), -1e-3)


# -- lambda_max -----------------------------------------------------------------


def test_lambda_max_examples():
    I = DenseDictionary(np.eye(2))
    assert lambda_max(I, np.array([3.0, -1.0])) == 3.0
    assert lambda_max(I, np.zeros(2)) == 0.0
    rng = np.random.default_rng(0)
    A = DenseDictionary(rng.standard_normal((6, 9)))
    y = rng.standard_normal(6)
    loop = max(abs(sum(A.entries[i, j] * y[i] for i in range(6))) for j in range(9))
    assert lambda_max(A, y) == pytest.approx(loop, rel=1e-13)


def test_stable_lambda_max_examples():
    rng = np.random.default_rng(1)
    A = DenseDictionary(rng.standard_normal((5, 8)))
    y = rng.standard_normal(5)
    assert stable_lambda_max(exact_approximation(A), y) == lambda_max(A, y)
    zero = approx_of(np.zeros((5, 8)), A.atom_norms_2, A)
    assert stable_lambda_max(zero, y) == pytest.approx(np.linalg.norm(y) * A.atom_norms_2.max(), rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), noise=st.floats(0.0, 1.0))
def test_stable_lambda_max_dominates(seed, noise):
    rng = np.random.default_rng(seed)
    A = DenseDictionary(rng.standard_normal((6, 10)))
    M = A.entries + noise * rng.standard_normal((6, 10))
    approx = approx_of(M, np.linalg.norm(M - A.entries, axis=0), A)
    y = rng.standard_normal(6)
    assert stable_lambda_max(approx, y) >= lambda_max(A, y) * (1 - 1e-14)


# -- tests ------------------------------------------------------------------------


def test_sphere_test_examples():
    e1, e2 = np.eye(2)
    assert sphere_test(e2, SafeSphere(e1, 0.0)) == 0.0
    assert sphere_test(e1, SafeSphere(e1, 0.5)) == 1.5


def test_sphere_test_is_the_supremum():
    rng = np.random.default_rng(2)
    a, c = rng.standard_normal(4), rng.standard_normal(4)
    sphere = SafeSphere(c, 0.7)
    theta = c + 0.7 * unit_ball_samples(rng, 4, 100_000)
    sampled = np.max(np.abs(theta @ a))
    value = sphere_test(a, sphere)
    assert sampled <= value + 1e-12
    assert value - sampled <= 1e-2 * value


def test_zone_test_examples():
    rng = np.random.default_rng(3)
    a, c = rng.standard_normal(5), rng.standard_normal(5)
    sphere = SafeSphere(c, 0.3)
    assert stable_zone_test(a, 0.0, np.linalg.norm(a), sphere) == pytest.approx(sphere_test(a, sphere), rel=1e-15)
    assert stable_zone_test(a, 0.4, 2.0, SafeSphere(np.zeros(5), 0.0)) == 0.0


def test_zone_test_dominates_exact_test():
    rng = np.random.default_rng(4)
    for _ in range(10_000):
        n = rng.integers(2, 9)
        a = rng.standard_normal(n)
        eps = rng.random() * 2
        d = rng.standard_normal(n)
        approx = a + d / np.linalg.norm(d) * eps * rng.random()
        sphere = SafeSphere(rng.standard_normal(n), rng.random() * 3)
        assert stable_zone_test(approx, eps, np.linalg.norm(a), sphere) >= sphere_test(a, sphere) - 1e-12


def test_ball_test_examples():
    rng = np.random.default_rng(5)
    a, c = rng.standard_normal(5), rng.standard_normal(5)
    assert stable_ball_test(a, 0.0, SafeSphere(c, 0.4)) == pytest.approx(sphere_test(a, SafeSphere(c, 0.4)), rel=1e-15)
    assert stable_ball_test(a, 0.3, SafeSphere(c, 0.0)) == pytest.approx(abs(a @ c) + 0.3 * np.linalg.norm(c))


def test_ball_test_bounds_double_supremum():
    rng = np.random.default_rng(6)
    for _ in range(20):
        n = 4
        approx, c = rng.standard_normal(n), rng.standard_normal(n)
        eps, R = rng.random(), rng.random()
        value = stable_ball_test(approx, eps, SafeSphere(c, R))
        atoms = approx + eps * unit_ball_samples(rng, n, 2000, surface=False)
        thetas = c + R * unit_ball_samples(rng, n, 2000, surface=False)
        assert np.max(np.abs(atoms @ thetas.T)) <= value + 1e-12


# -- dual scaling -------------------------------------------------------------------


def test_dual_scale_examples():
    I = DenseDictionary(np.eye(2))
    np.testing.assert_array_equal(dual_scale(np.array([0.5, 0.2]), I), [0.5, 0.2])
    np.testing.assert_array_equal(dual_scale(np.array([2.0, 0.0]), I), [1.0, 0.0])
    rng = np.random.default_rng(7)
    A = DenseDictionary(rng.standard_normal((6, 11)))
    for _ in range(50):
        theta = dual_scale(rng.standard_normal(6) * 10, A)
        assert np.max(np.abs(A.entries.T @ theta)) <= 1 + 1e-12


def test_stable_dual_scale_examples():
    I = DenseDictionary(np.eye(2))
    approx = approx_of(np.eye(2), [1.0, 1.0], I)
    np.testing.assert_array_equal(stable_dual_scale(np.array([2.0, 0.0]), approx), [0.5, 0.0])
    rng = np.random.default_rng(8)
    A = DenseDictionary(rng.standard_normal((5, 7)))
    z = rng.standard_normal(5)
    np.testing.assert_array_equal(stable_dual_scale(z, exact_approximation(A)), dual_scale(z, A))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), noise=st.floats(0.0, 0.5))
def test_stable_dual_scale_feasible_for_both(seed, noise):
    rng = np.random.default_rng(seed)
    A = DenseDictionary(rng.standard_normal((6, 10)))
    M = A.entries + noise * rng.standard_normal((6, 10))
    approx = approx_of(M, np.linalg.norm(M - A.entries, axis=0), A)
    theta = stable_dual_scale(rng.standard_normal(6) * 5, approx)
    assert np.max(np.abs(A.entries.T @ theta)) <= 1 + 1e-12
    assert np.max(np.abs(M.T @ theta)) <= 1 + 1e-12


def _residual_points(M, y, lam, x, errors):
    rho = y - M @ x
    return dual_point_dynamic(rho, M.T @ rho, y, lam, errors, aty=M.T @ y)


def test_dual_point_exact_collapse():
    rng = np.random.default_rng(9)
    M = rng.standard_normal((6, 10))
    y = rng.standard_normal(6)
    lam = 0.3 * np.max(np.abs(M.T @ y))
    dp = _residual_points(M, y, lam, rng.standard_normal(10) * 0.1, np.zeros(10))
    np.testing.assert_array_equal(dp.theta_prime, dp.theta_tilde)
    assert dp.alpha_prime == dp.alpha_tilde


def test_dual_point_unclamped_branch():
    # lam close to lambda_max at x = 0: scale = ||y||^2 / (lam ||y||^2) = 1/lam < alpha
    rng = np.random.default_rng(10)
    M = rng.standard_normal((6, 10))
    y = rng.standard_normal(6)
    lam = 1.5 * np.max(np.abs(M.T @ y))
    dp = _residual_points(M, y, lam, np.zeros(10), np.full(10, 0.01))
    np.testing.assert_allclose(dp.theta_prime, (y @ y) / (lam * (y @ y)) * y, rtol=1e-15)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), noise=st.floats(0.0, 0.5), ratio=st.floats(0.05, 1.0))
def test_dual_points_feasible(seed, noise, ratio):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((6, 10))
    M = A + noise * rng.standard_normal((6, 10))
    eps = np.linalg.norm(M - A, axis=0)
    y = rng.standard_normal(6)
    lam = ratio * np.max(np.abs(M.T @ y))
    dp = _residual_points(M, y, lam, rng.standard_normal(10) * 0.1, eps)
    assert np.max(np.abs(A.T @ dp.theta_prime)) <= 1 + 1e-12
    assert np.max(np.abs(M.T @ dp.theta_prime)) <= 1 + 1e-12
    assert np.max(np.abs(M.T @ dp.theta_tilde)) <= 1 + 1e-12
    np.testing.assert_allclose(dp.inner_prime, M.T @ dp.theta_prime, atol=1e-12)
    np.testing.assert_allclose(dp.inner_tilde, M.T @ dp.theta_tilde, atol=1e-12)


def test_dual_point_at_approximate_optimum_closes_gap():
    rng = np.random.default_rng(11)
    M = rng.standard_normal((8, 16))
    y = rng.standard_normal(8)
    lam = 0.3 * np.max(np.abs(M.T @ y))
    x, _, _ = lasso_oracle(M, y, lam)
    dp = _residual_points(M, y, lam, x, np.full(16, 0.1))
    problem = LassoProblem(DenseDictionary(M), y, lam)
    assert primal_value(x, problem) - dual_value(dp.theta_tilde, problem) <= 1e-10


def test_zero_residual_fallback():
    I = DenseDictionary(np.eye(3))
    y = np.array([1.0, 2.0, 0.0])
    eps = np.full(3, 0.2)
    dp = dual_point_dynamic(np.zeros(3), np.zeros(3), y, 0.5, eps, aty=y)
    np.testing.assert_allclose(dp.theta_prime, stable_dual_scale(y / 0.5, approx_of(np.eye(3), eps, I)))
    np.testing.assert_allclose(dp.theta_tilde, dual_scale(y / 0.5, I))
    with pytest.raises(ValueError):
        dual_point_dynamic(np.zeros(3), np.zeros(3), y, 0.5, eps)


# -- spheres ------------------------------------------------------------------------


def test_static_sphere_at_lambda_max():
    rng = np.random.default_rng(12)
    A = DenseDictionary(rng.standard_normal((5, 9)))
    y = rng.standard_normal(5)
    lm = lambda_max(A, y)
    s = static_sphere(y, lm, lm)
    assert s.radius == 0.0
    np.testing.assert_array_equal(s.center, y / lm)


def test_stable_gap_at_zero_iterate():
    rng = np.random.default_rng(13)
    theta, y = rng.standard_normal(4), rng.standard_normal(4)
    s = stable_gap_sphere(theta, 0.5, 0.02, np.linalg.norm(y), 0.0, 0.3)
    assert s.radius == pytest.approx(np.sqrt(2 * 0.02) / 0.5, rel=1e-15)


def test_gap_radius_small_near_optimum():
    inst = make_instance(3, ratio=0.3)
    lam = inst.lam
    gap = lam**2 * 1e-8 / 2
    assert gap_sphere(inst.theta_star, lam, gap).radius <= 1e-4


def test_stable_rules_collapse_to_conventional():
    inst = make_instance(4, ratio=0.4)
    rho = inst.y - inst.A.entries @ (inst.x_star * 0.9)
    common = dict(y=inst.y, lam=inst.lam, lam_max=inst.lam_max, theta=rho / inst.lam * 0.5,
                  gap=0.01, residual_norm=np.linalg.norm(rho), x_l1=1.0, operator_error=0.0)
    for rule in ("static", "dynamic", "gap"):
        a = build_sphere(Rule(rule), SphereInputs(**common))
        b = build_sphere(Rule(rule).as_stable, SphereInputs(**common))
        np.testing.assert_allclose(a.center, b.center, atol=1e-12)
        assert abs(a.radius - b.radius) <= 1e-12


def test_screen_large_radius_keeps_everything():
    inst = make_instance(5)
    approx = inst.sequence[0]
    c = inst.y / inst.lam
    R = 1 / approx.atom_norms.min() + np.linalg.norm(c) * approx.atom_norms.max()
    active = np.arange(inst.A.n_atoms)
    np.testing.assert_array_equal(screen(active, SafeSphere(c, R), approx), active)
    np.testing.assert_array_equal(screen(active, SafeSphere(c, R), approx, use_stable=False), active)


def test_static_at_lambda_max_screens_non_maximal():
    inst = make_instance(6)
    A, y = inst.A, inst.y
    lm = lambda_max(A, y)
    exact = exact_approximation(A)
    kept = screen(np.arange(A.n_atoms), static_sphere(y, lm, lm), exact)
    corr = np.abs(A.entries.T @ y)
    # every non-maximal atom goes; the maximal one sits at 1 up to roundoff
    # (x* = 0 at lambda_max, so dropping it is safe either way)
    assert set(kept) <= set(np.flatnonzero(corr == lm))
    assert abs(corr.max() / lm - 1.0) <= 1e-15


def test_screen_nested_and_vectorized_matches_scalar():
    inst = make_instance(7, ratio=0.5)
    approx = inst.sequence[1]
    sphere = SafeSphere(inst.theta_star * 1.01, 0.05)
    active = np.arange(0, inst.A.n_atoms, 2)
    kept = screen(active, sphere, approx)
    assert set(kept) <= set(active)
    M = approx.operator.to_dense()
    scalar = [j for j in active
              if stable_zone_test(M[:, j], approx.atom_errors[j], approx.atom_norms[j], sphere) >= 1.0]
    np.testing.assert_array_equal(kept, scalar)
    values = zone_test_values(M.T[active] @ sphere.center, approx.atom_errors[active],
                              np.linalg.norm(sphere.center), approx.atom_norms[active], sphere.radius)
    np.testing.assert_array_equal(active[values >= 1], kept)


def test_tie_at_one_is_kept():
    I = DenseDictionary(np.eye(2))
    exact = exact_approximation(I)
    kept = screen(np.arange(2), SafeSphere(np.array([1.0, 0.5]), 0.0), exact)
    np.testing.assert_array_equal(kept, [0])

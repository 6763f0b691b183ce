"""Safe spheres and screening tests, conventional and stable.

All regions are l2 balls and atom error bounds are l2, so every dual norm
in the test expressions is the Euclidean norm and the Holder constant of the
ball-zone test equals one.

An atom is *screened* (its coefficient is provably zero at the optimum) when
its test value is strictly below one; a value of exactly one keeps it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "Rule",
    "SafeSphere",
    "DualPoints",
    "lambda_max",
    "stable_lambda_max",
    "sphere_test",
    "stable_zone_test",
    "stable_ball_test",
    "sphere_test_values",
    "zone_test_values",
    "dual_scale",
    "stable_dual_scale",
    "dual_point_dynamic",
    "static_sphere",
    "dynamic_sphere",
    "gap_sphere",
    "stable_gap_sphere",
    "gap_margin",
    "build_sphere",
    "SphereInputs",
    "screen",
]


class Rule(str, enum.Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"
    GAP = "gap"
    STABLE_STATIC = "stable-static"
    STABLE_DYNAMIC = "stable-dynamic"
    STABLE_GAP = "stable-gap"

    @property
    def stable(self):
        return self.value.startswith("stable-")

    @property
    def conventional(self):
        return Rule(self.value.removeprefix("stable-"))

    @property
    def as_stable(self):
        return self if self.stable else Rule("stable-" + self.value)

    @property
    def centered_on_signal(self):
        """Static and dynamic spheres are centered on ``y / lam``."""
        return self.conventional in (Rule.STATIC, Rule.DYNAMIC)


@dataclass(frozen=True)
class SafeSphere:
    center: np.ndarray
    radius: float
    norm_index: int = 2

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError(f"sphere radius must be non-negative, got {self.radius}")

    def contains(self, theta, slack=0.0):
        return float(np.linalg.norm(theta - self.center)) <= self.radius + slack


class DualPoints(NamedTuple):
    theta_prime: np.ndarray  # feasible for both A and A~
    theta_tilde: np.ndarray  # feasible for A~
    alpha_prime: float
    alpha_tilde: float
    inner_prime: np.ndarray  # A~^T theta_prime
    inner_tilde: np.ndarray  # A~^T theta_tilde


def lambda_max(dictionary, y):
    """``||A^T y||_inf``: the smallest lam for which x = 0 solves the Lasso."""
    return float(np.max(np.abs(dictionary.rmatvec(y))))


def stable_lambda_max(approx, y, aty=None):
    """Upper bound on lambda_max computed from an approximate dictionary only."""
    if aty is None:
        aty = approx.rmatvec(y)
    return float(np.max(np.abs(aty) + approx.atom_errors * np.linalg.norm(y)))


# -- tests -----------------------------------------------------------------


def sphere_test(atom, sphere):
    """``sup_{theta in B(c, R)} |a^T theta| = |a^T c| + R ||a||``."""
    atom = np.asarray(atom, dtype=np.float64)
    return abs(float(atom @ sphere.center)) + sphere.radius * float(np.linalg.norm(atom))


def stable_zone_test(approx_atom, error, atom_norm, sphere):
    """Test for the zone ``{a : ||a - a~|| <= eps, ||a|| = atom_norm}``."""
    return (
        abs(float(np.asarray(approx_atom) @ sphere.center))
        + error * float(np.linalg.norm(sphere.center))
        + sphere.radius * atom_norm
    )


def stable_ball_test(approx_atom, error, sphere):
    """Test for the zone ``{a : ||a - a~|| <= eps}`` when atom norms are unknown."""
    approx_atom = np.asarray(approx_atom, dtype=np.float64)
    R = sphere.radius
    return (
        abs(float(approx_atom @ sphere.center))
        + error * float(np.linalg.norm(sphere.center))
        + R * float(np.linalg.norm(approx_atom))
        + R * error
    )


def sphere_test_values(inner, atom_norms, radius):
    """Vectorized conventional test from precomputed inner products ``A^T c``."""
    return np.abs(inner) + radius * atom_norms


def zone_test_values(inner, errors, center_norm, atom_norms, radius):
    """Vectorized stable test from ``A~^T c``, error bounds and exact atom norms."""
    return np.abs(inner) + errors * center_norm + radius * atom_norms


# -- dual points ------------------------------------------------------------


def dual_scale(z, dictionary, aTz=None):
    """Rescale ``z`` into ``{theta : ||A^T theta||_inf <= 1}``."""
    if aTz is None:
        aTz = dictionary.rmatvec(z)
    return z / max(1.0, float(np.max(np.abs(aTz))))


def stable_dual_scale(z, approx, aTz=None, errors=None):
    """Rescale ``z`` so that it is dual feasible for both ``A`` and ``A~``."""
    if aTz is None:
        aTz = approx.rmatvec(z)
    if errors is None:
        errors = approx.atom_errors
    return z / max(1.0, float(np.max(np.abs(aTz) + errors * np.linalg.norm(z))))


def _clamp_inverse(denominator):
    return np.inf if denominator <= 0 else 1.0 / denominator


def dual_point_dynamic(residual, correlations, y, lam, errors, aty=None):
    """Dual points proportional to the residual ``y - A~ x``.

    ``correlations`` is ``A~^T residual`` restricted to the same atoms as
    ``errors``.  An exactly zero residual falls back to scaling ``y / lam``,
    which needs ``aty = A~^T y`` on those atoms.
    """
    rr = float(residual @ residual)
    abs_corr = np.abs(correlations)
    if rr == 0.0:
        if aty is None:
            raise ValueError("zero residual: A~^T y is required for the fallback dual point")
        z = y / lam
        aTz = aty / lam
        z_norm = float(np.linalg.norm(z))
        d_tilde = max(1.0, float(np.max(np.abs(aTz), initial=0.0)))
        d_prime = max(1.0, float(np.max(np.abs(aTz) + errors * z_norm, initial=0.0)))
        return DualPoints(z / d_prime, z / d_tilde, 1.0 / d_prime, 1.0 / d_tilde, aTz / d_prime, aTz / d_tilde)
    scale = float(y @ residual) / (lam * rr)
    r_norm = np.sqrt(rr)
    alpha_tilde = _clamp_inverse(float(np.max(abs_corr, initial=0.0)))
    alpha_prime = _clamp_inverse(float(np.max(abs_corr + errors * r_norm, initial=0.0)))
    coef_prime = min(max(scale, -alpha_prime), alpha_prime)
    coef_tilde = min(max(scale, -alpha_tilde), alpha_tilde)
    return DualPoints(
        coef_prime * residual,
        coef_tilde * residual,
        alpha_prime,
        alpha_tilde,
        coef_prime * correlations,
        coef_tilde * correlations,
    )


# -- spheres ------------------------------------------------------------------


def static_sphere(y, lam, lam_max):
    """Static sphere; pass the stable lambda_max bound for the stable variant."""
    y_norm = float(np.linalg.norm(y))
    return SafeSphere(y / lam, abs(1.0 / lam_max - 1.0 / lam) * y_norm)


def dynamic_sphere(y, lam, theta):
    """Dynamic sphere around ``y / lam`` through a dual feasible point."""
    c = y / lam
    return SafeSphere(c, float(np.linalg.norm(theta - c)))


def gap_sphere(theta, lam, gap):
    return SafeSphere(theta, np.sqrt(2.0 * max(gap, 0.0)) / lam)


def gap_margin(residual_norm, x_l1, operator_error):
    """Radius margin for a gap computed with ``A~`` instead of ``A`` (r = 1)."""
    e = operator_error * x_l1
    return residual_norm * e + 0.5 * e * e


def stable_gap_sphere(theta, lam, gap_approx, residual_norm, x_l1, operator_error):
    """Safe sphere centered at ``theta`` from the gap measured with ``A~``.

    ``theta`` must be feasible for the exact dictionary; ``gap_approx`` is
    ``P(x | A~) - D(theta)`` and ``residual_norm`` is ``||y - A~ x||``.
    """
    delta = gap_margin(residual_norm, x_l1, operator_error)
    return SafeSphere(theta, np.sqrt(2.0 * max(gap_approx, 0.0) + 2.0 * delta) / lam)


@dataclass
class SphereInputs:
    """Everything a sphere constructor may need at one screening instant.

    ``theta`` is the feasible point of the rule (theta' for the stable rules),
    ``gap`` the gap at ``theta`` measured with the current dictionary and
    ``lam_max`` the exact or stable bound, as appropriate.
    """

    y: np.ndarray
    lam: float
    lam_max: float | None = None
    theta: np.ndarray | None = None
    gap: float | None = None
    residual_norm: float = 0.0
    x_l1: float = 0.0
    operator_error: float = 0.0


def build_sphere(rule, inputs):
    rule = Rule(rule)
    base = rule.conventional
    if base is Rule.STATIC:
        return static_sphere(inputs.y, inputs.lam, inputs.lam_max)
    if base is Rule.DYNAMIC:
        return dynamic_sphere(inputs.y, inputs.lam, inputs.theta)
    if rule is Rule.GAP or inputs.operator_error == 0.0:
        return gap_sphere(inputs.theta, inputs.lam, inputs.gap)
    return stable_gap_sphere(
        inputs.theta, inputs.lam, inputs.gap, inputs.residual_norm, inputs.x_l1, inputs.operator_error
    )


def screen(active, sphere, approx, use_stable=True, inner=None):
    """Return the atoms of ``active`` whose test value is at least one.

    ``inner`` may carry ``A~^T c`` on ``active``; it is computed otherwise.
    """
    active = np.asarray(active, dtype=np.intp)
    if inner is None:
        inner = approx.rmatvec(sphere.center)[active]
    if use_stable:
        values = zone_test_values(
            inner,
            approx.atom_errors[active],
            float(np.linalg.norm(sphere.center)),
            approx.atom_norms[active],
            sphere.radius,
        )
    else:
        values = sphere_test_values(inner, approx.approx_atom_norms[active], sphere.radius)
    return active[values >= 1.0]

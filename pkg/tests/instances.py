"""Small seeded Lasso instances with a high-precision oracle solution."""

from dataclasses import dataclass

import numpy as np

from oracles import lasso_oracle
from stablescreen.dictionary import DenseDictionary, build_sukro_sequence, synthesize_scenario

SCENARIOS = ("easy", "moderate", "hard", "gaussian")


@dataclass
class Instance:
    A: DenseDictionary
    sequence: object
    y: np.ndarray
    lam: float
    lam_max: float
    x_star: np.ndarray
    theta_star: np.ndarray
    oracle_gap: float

    @property
    def support(self):
        return np.flatnonzero(self.x_star)


def make_dictionary(n, k, scenario, seed, factor_shape=None):
    if scenario == "gaussian":
        M = np.random.default_rng(seed).standard_normal((n, k))
        return DenseDictionary(M / np.linalg.norm(M, axis=0))
    return synthesize_scenario(n, k, scenario, seed, factor_shape)


def make_instance(seed, n=50, k=120, ratio=0.3, scenario="moderate", ranks=(1, 2, 3),
                  factor_shape=(5, 10), p=0.05):
    A = make_dictionary(n, k, scenario, seed, factor_shape)
    seq = build_sukro_sequence(A, ranks, factor_shape)
    rng = np.random.default_rng([seed, 1])
    x0 = np.where(rng.random(k) < p, rng.standard_normal(k), 0.0)
    if not x0.any():
        x0[rng.integers(k)] = 1.0
    y = A.entries @ x0
    y /= np.linalg.norm(y)
    lam_max = float(np.max(np.abs(A.entries.T @ y)))
    lam = ratio * lam_max
    x, theta, gap = lasso_oracle(A.entries, y, lam, gap_tol=1e-12)
    return Instance(A, seq, y, lam, lam_max, x, theta, gap)


def suite(count, ratios=(0.1, 0.3, 0.7, 0.95), base_seed=0, **kwargs):
    """``count`` instances cycling through ratios and dictionary families."""
    for i in range(count):
        yield make_instance(base_seed + i, ratio=ratios[i % len(ratios)],
                            scenario=SCENARIOS[(i // len(ratios)) % len(SCENARIOS)], **kwargs)

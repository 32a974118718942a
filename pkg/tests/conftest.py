"""Shared fixtures and random-model generators for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from waningsim.data import pertussis_config
from waningsim.model import ModelConfig, build_general


def random_config(
    rng: np.random.Generator,
    n_range=(1, 12),
    rate_low=1e-3,
    rate_high=50.0,
    p_high=1.0,
    force_beta_strict=False,
) -> ModelConfig:
    """Draw a valid random configuration with log-uniform rates."""

    def rate():
        return float(np.exp(rng.uniform(np.log(rate_low), np.log(rate_high))))

    n = int(rng.integers(n_range[0], n_range[1] + 1))
    beta = np.sort(np.exp(rng.uniform(np.log(rate_low), np.log(rate_high), size=n + 1)))
    if force_beta_strict and beta[0] >= beta[-1]:
        beta[-1] = beta[0] * 2.0 + 1.0
    p = rng.uniform(0.0, p_high, size=n + 1)
    p[0] = 0.0
    return build_general(n=n, beta=beta, delta=rate(), mu=rate(), r=rate(), omega=rate(), p=p)


def random_simplex_state(rng: np.random.Generator, n: int) -> np.ndarray:
    """Random interior point of the simplex, normalized to sum 1."""
    y = rng.uniform(0.05, 1.0, size=n + 2)
    return y / y.sum()


@pytest.fixture(scope="session")
def pertussis():
    return pertussis_config()

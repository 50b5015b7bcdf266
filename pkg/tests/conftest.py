"""Shared fixtures: seeded generators and small synthetic problems."""

import numpy as np
import pytest

from scaledopt.data import SeededRng, generate_synthetic
from scaledopt.objective import LogisticProblem


@pytest.fixture
def np_rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def seeded():
    return SeededRng(20240817)


def make_problem(m, n, seed=13, density=0.1):
    ds, w_true = generate_synthetic(m, n, SeededRng(seed), density=density)
    return LogisticProblem(ds), w_true


@pytest.fixture(scope="session")
def small_problem():
    """m=40, n=8: cheap enough for exhaustive and dense-Hessian checks."""
    ds, _ = generate_synthetic(40, 8, SeededRng(13))
    return LogisticProblem(ds)


@pytest.fixture(scope="session")
def medium_problem():
    """m=400, n=20: used for Monte Carlo and optimizer runs."""
    ds, _ = generate_synthetic(400, 20, SeededRng(13))
    return LogisticProblem(ds)


def random_spd(rng, n, cond=10.0):
    """Random SPD matrix with spectrum in roughly [1/cond, 1]."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.exp(rng.uniform(-np.log(cond), 0.0, size=n))
    return (Q * w) @ Q.T

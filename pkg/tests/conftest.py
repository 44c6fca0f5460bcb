# test fixtures: flat imports from src/ (as main.py uses them) and seeded random instances

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..', 'src'))

import design  # noqa: E402


def random_spd(rng, p, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    values = np.exp(rng.uniform(0, np.log(cond), p))
    return (q * values) @ q.T


def random_instance(rng, n=60, p=3, r=2, signal=1.0):
    """Data from an inverse regression X = F B^T + eps with a random basis F and SPD error covariance."""
    F = rng.standard_normal((n, r))
    B = signal * rng.standard_normal((p, r))
    chol = np.linalg.cholesky(random_spd(rng, p))
    X = F @ B.T + rng.standard_normal((n, p)) @ chol.T
    data = design.Dataset(X=X, y=rng.standard_normal(n))
    return data, design.BasisSpec.custom(F)


def random_design(rng, n=60, p=3, r=2, signal=1.0):
    data, spec = random_instance(rng, n, p, r, signal)
    return design.build_design(data, spec)


@pytest.fixture
def rng():
    return np.random.default_rng(20090101)

"""Random instance generators shared by the property suites."""

import math

import numpy as np
from hypothesis import HealthCheck, settings

from preview_gain.model import ModelProvider, StepData, random_periodic_model

PROPERTY = settings(max_examples=200, deadline=None, derandomize=True,
                    suppress_health_check=[HealthCheck.filter_too_much, HealthCheck.too_slow])


def rng_for(seed):
    return np.random.default_rng(seed)


def random_dims(rng, n_max=4, m_max=2, d_max=4):
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    d = int(rng.integers(1, d_max + 1))
    return n, m, d


def random_model(rng, n, m, period):
    return random_periodic_model(rng, n, m, period)


def random_explicit(rng, n, m, length):
    steps = []
    for _ in range(length):
        A = rng.standard_normal((n, n))
        B = rng.standard_normal((n, m))
        G = rng.standard_normal((n, n))
        H = rng.standard_normal((m, m))
        steps.append(StepData(A, B, G @ G.T + 0.1 * np.eye(n), H @ H.T + 0.1 * np.eye(m)))
    return ModelProvider.explicit(steps)


def random_spd(rng, n, lo=0.1, hi=10.0):
    U, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.exp(rng.uniform(math.log(lo), math.log(hi), n))
    X = (U * w) @ U.T
    return 0.5 * (X + X.T)


def min_rel_eig(X, P):
    """Smallest eigenvalue of the pencil (X, P); ``> 1`` iff ``P < X``."""
    import scipy.linalg as sla

    return float(sla.eigh(X, P, eigvals_only=True)[0])


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mortv.systems import StateSpaceSystem

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


def random_stable(rng, n=60, m=1, q=1):
    """Random dense system with spectrum shifted into the left half-plane."""
    A = rng.standard_normal((n, n)) / np.sqrt(n)
    A -= (np.max(np.linalg.eigvals(A).real) + 0.5) * np.eye(n)
    E = np.eye(n) + 0.1 * np.diag(rng.uniform(0, 1, n))
    return StateSpaceSystem(E, A, rng.standard_normal((n, m)), rng.standard_normal((q, n)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def siso(rng):
    return random_stable(rng)

from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from multipass.multipole import ChargeDistribution

DATA = Path(__file__).parent / "data"

# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}

settings.register_profile("repo", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def random_neutral(rng, n_points=5, radius=1.0):
    """Neutral point-charge cloud with charges summing to zero and |x| <= radius."""
    # dyadic charges sum to exactly zero in floating point
    q = np.round(rng.normal(size=n_points) * 2**20) / 2**20
    q[-1] = -q[:-1].sum()
    x = rng.normal(size=(n_points, 3))
    x *= (radius * rng.uniform(0.2, 1.0, size=(n_points, 1))) / np.linalg.norm(x, axis=1, keepdims=True)
    return ChargeDistribution(q, x)


def random_traceless(rng, scale=1.0):
    A = rng.normal(size=(3, 3))
    A = A + A.T
    A -= np.trace(A) / 3 * np.eye(3)
    return scale * A / np.linalg.norm(A)


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])

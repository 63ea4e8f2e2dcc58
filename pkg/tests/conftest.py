import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from holomera.mera.params import MeraParams

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Critical unit cell found by the scale-invariant optimizer at g = 1.
CRITICAL_CELL = np.array([0.0, 0.0, 0.56376, -0.13791, -0.18070, 0.53454])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def critical_cell():
    return MeraParams(CRITICAL_CELL[None], flavor="scale_invariant")


def random_density(rng, dim, rank=None):
    rank = dim if rank is None else rank
    a = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_cell(rng, scale=np.pi):
    return rng.uniform(-scale, scale, 6)


# Acceptance results, one line per criterion, printed after the test session.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])

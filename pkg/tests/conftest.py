import numpy as np
import pytest
from hypothesis import settings

from bhdimer.fock import FockSpace
from bhdimer.model import ModelParams

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_space():
    return FockSpace(5, 3)


@pytest.fixture
def params():
    return ModelParams()


def random_matrix(rng, n, m=None):
    m = n if m is None else m
    return rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))


def random_density(rng, n, rank=None):
    x = random_matrix(rng, n, rank or n)
    rho = x @ x.conj().T
    return rho / np.trace(rho)


# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

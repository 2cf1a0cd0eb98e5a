import random
from fractions import Fraction

import pytest
from hypothesis import HealthCheck, settings

from rgstep.fieldalg import CouplingConstants, FieldSpace
from rgstep.gaussian import make_toy_decomposition
from rgstep.lattice import Torus

settings.register_profile(
    "rgstep",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("rgstep")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ring9():
    return Torus(1, 3, 2, a=(0,), b=(4,))


@pytest.fixture(scope="session")
def space9(ring9):
    return FieldSpace(9, 4, torus=ring9)


@pytest.fixture(scope="session")
def decomp9(ring9):
    return make_toy_decomposition(ring9)


@pytest.fixture(scope="session")
def ring27():
    return Torus(1, 3, 3, a=(0,), b=(4,))


@pytest.fixture(scope="session")
def space27(ring27):
    return FieldSpace(27, 4, torus=ring27)


@pytest.fixture
def rng():
    return random.Random(20240)


@pytest.fixture
def couplings():
    return CouplingConstants(Fraction(1, 3), Fraction(-1, 5), Fraction(1, 7), Fraction(1, 11),
                             Fraction(2, 3), Fraction(1, 2))

import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

import crharmonic as ch  # noqa: E402
from crharmonic.maps import pluriharmonic_polynomial  # noqa: E402
from crharmonic.phmodel import random_points  # noqa: E402

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


# Models and targets are shared so compiled kernels (cached per object) are reused.


@pytest.fixture(scope="session")
def s3():
    return ch.make_sphere(1)


@pytest.fixture(scope="session")
def s5():
    return ch.make_sphere(2)


@pytest.fixture(scope="session")
def h1():
    return ch.make_heisenberg(1)


@pytest.fixture(scope="session")
def h2():
    return ch.make_heisenberg(2)


@pytest.fixture(scope="session")
def sigma():
    return ch.ConformalFactor(terms=((0.3 + 0.2j, (1, 0, 0), (0, 1, 0), 0),), constant=0.1)


@pytest.fixture(scope="session")
def s5_hat(s5, sigma):
    return ch.conformal_change(s5, sigma)


@pytest.fixture(scope="session")
def flat2():
    return ch.make_flat(2)


@pytest.fixture(scope="session")
def flat3():
    return ch.make_flat(3)


@pytest.fixture(scope="session")
def ball2():
    return ch.make_bergman_ball(2)


@pytest.fixture(scope="session")
def ball3():
    return ch.make_bergman_ball(3)


@pytest.fixture(scope="session")
def s3_points(s3):
    return random_points(s3, 12, seed=11)


@pytest.fixture(scope="session")
def s5_points(s5):
    return random_points(s5, 12, seed=12)


@pytest.fixture(scope="session")
def s3_rule(s3):
    return ch.make_rule(s3, 16)


@pytest.fixture(scope="session")
def cubic_s3():
    """Generic degree-3 polynomial S^3 -> C^2, small enough for the unit ball."""
    return ch.random_polynomial(2, 2, 3, 0.08, seed=1)


@pytest.fixture(scope="session")
def perturbed_s5():
    return ch.perturbed_cr(3, 0.5, 0.1, seed=2)


@pytest.fixture(scope="session")
def pluri_s5():
    return pluriharmonic_polynomial(3, 3, seed=4, scale=0.15)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

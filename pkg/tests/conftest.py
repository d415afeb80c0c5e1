import numpy as np
import pytest

from bayes_surrogate import BasisSpec, InputPosterior, TrainingSet

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def linear_spec():
    return BasisSpec(((0,), (1,)), ((-1.0, 1.0),))


@pytest.fixture
def linear3():
    """z = 1 + a at a = -1, 0, 1."""
    return TrainingSet([[-1.0], [0.0], [1.0]], [[0.0], [1.0], [2.0]])


@pytest.fixture
def quad5():
    """z = a^2 at five equispaced points, fitted by a straight line."""
    a = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    return TrainingSet(a[:, None], (a**2)[:, None])


def uniform_exact(n_nodes=8):
    """Gauss-Legendre sample reproducing the uniform law on [-1, 1] exactly."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    return InputPosterior(x[:, None], w / 2.0)


@pytest.fixture
def uniform_input():
    return uniform_exact()

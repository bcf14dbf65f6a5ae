import numpy as np
import pytest

from obdsub import ModelKind, ModelSpec, information_basis


@pytest.fixture
def four_point():
    """The 1-D instance {-1, 0, 1, 2} under the first-order linear model."""
    X = np.array([[-1.0], [0.0], [1.0], [2.0]])
    spec = ModelSpec(ModelKind.LINEAR_FIRST_ORDER, 1)
    return X, spec, information_basis(X, spec)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from oracles import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

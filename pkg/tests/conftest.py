import numpy as np
import pytest

from sdde_optlab import LinearRegressionProblem, quadratic_example


@pytest.fixture
def quadratic():
    return quadratic_example()


@pytest.fixture
def identity_regression():
    # F(x) = ||x||^2 / 2 in two dimensions: the 1/n averaging in the Gram
    # matrix means unit curvature needs sqrt(n)-scaled inputs
    return LinearRegressionProblem(inputs=np.sqrt(2.0) * np.eye(2), outputs=np.zeros(2))


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)

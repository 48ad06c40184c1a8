import numpy as np
import pytest

from cllb.params import ModelParams, derive


@pytest.fixture(scope="session")
def heat_params():
    """The heat-equation / white-noise reference case."""
    return ModelParams(alpha=2.0, hurst=0.5, beta=1.0)


@pytest.fixture(scope="session")
def heat_consts(heat_params):
    return derive(heat_params)


# admissible pairs spanning the parameter region, reused across suites
ADMISSIBLE_PAIRS = [
    (2.0, 0.5),
    (1.5, 0.75),
    (1.2, 0.9),
    (2.0, 0.8),
    (1.8, 0.3),
]


def sample_cov_stderr(cov_entries: np.ndarray, count: int) -> np.ndarray:
    """Standard error of the empirical covariance of a Gaussian ensemble:
    Var(C_ij_hat) = (C_ii C_jj + C_ij^2) / N."""
    d = np.diag(cov_entries)
    return np.sqrt((np.outer(d, d) + cov_entries ** 2) / count)

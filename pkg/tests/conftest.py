import numpy as np
import pytest

from hetar.estimator import Dataset


def random_dataset(rng, n=30, p=3, q=2, beta_scale=0.3):
    """Small heteroscedastic instance with dense coefficients."""
    X = rng.standard_normal((n, p))
    Z = rng.standard_normal((n, q))
    alpha = rng.uniform(0.5, 2.0, p) * rng.choice([-1, 1], p)
    beta = beta_scale * rng.standard_normal(q)
    y = X @ alpha + np.exp(0.5 * Z @ beta) * rng.standard_normal(n)
    return Dataset(y, X, Z)


def lstsq_minimizer(A, b, weights, penalty):
    """argmin ||diag(w)^(1/2) (b - A t)||^2 + sum_j penalty_j t_j^2.

    Solved as an augmented least-squares problem by SVD, independent of the
    Cholesky path used by the package.
    """
    sw = np.sqrt(weights)
    top = A * sw[:, None]
    bottom = np.diag(np.sqrt(penalty))
    M = np.vstack([top, bottom])
    rhs = np.concatenate([b * sw, np.zeros(len(penalty))])
    return np.linalg.lstsq(M, rhs, rcond=None)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# Shared Monte-Carlo runs of the default sparse scenario (normal noise,
# 200 trials, master seed 0 fixed in advance).  AR iterates 0..5 and 10 come
# from one trajectory per trial; BAR is fitted separately.
RUN_ESTIMATORS = (0, 1, 2, 3, 4, 5, 10, "bar")


def _run(n):
    from hetar.simulation import SimulationSpec, run_trials

    spec = SimulationSpec(n=n, master_seed=0, trials=200, estimators=RUN_ESTIMATORS)
    return spec, run_trials(spec, workers=8)


@pytest.fixture(scope="session")
def run_n1000():
    return _run(1000)


@pytest.fixture(scope="session")
def run_n100():
    return _run(100)

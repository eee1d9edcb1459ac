import numpy as np
import pytest

from heavyflow.data import dataset_from_returns


def correlated_student_t(n, d, nu, seed, rho=0.5):
    """Multivariate t: correlated Gaussian over a shared chi-square scale."""
    rng = np.random.default_rng(seed)
    corr = rho ** np.abs(np.subtract.outer(np.arange(d), np.arange(d)))
    chol = np.linalg.cholesky(corr)
    g = rng.standard_normal((n, d)) @ chol.T
    chi = rng.chisquare(nu, size=n)
    return g / np.sqrt(chi / nu)[:, None]


def central_fd(f, x, h):
    return (f(x + h) - f(x - h)) / (2.0 * h)


def perturb_store(store, scale, seed):
    """Randomize all parameters in place (keeps decoded params valid)."""
    rng = np.random.default_rng(seed)
    for name in store.names():
        arr = store[name]
        arr += rng.normal(0.0, scale, size=arr.shape)


@pytest.fixture
def small_dataset():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((200, 2))
    return dataset_from_returns(x, seed=0)

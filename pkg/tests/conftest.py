import numpy as np
import pytest

from ridgema.model_space import Dataset, ModelSpec


def random_dataset(rng, n, K, intercept=True, noise=1.0):
    X = rng.standard_normal((n, K))
    if intercept:
        X[:, 0] = 1.0
    beta = rng.standard_normal(K) / np.arange(1, K + 1)
    return Dataset(X, X @ beta + noise * rng.standard_normal(n))


def nested(K, start=1):
    return [ModelSpec(tuple(range(m))) for m in range(start, K + 1)]


def ols_predict(X_train, y_train, X_eval):
    """Reference least-squares prediction via lstsq."""
    beta = np.linalg.lstsq(X_train, y_train, rcond=None)[0]
    return X_eval @ beta


@pytest.fixture
def toy():
    """Intercept-only design with y = (1, 2, 3, 4)."""
    return Dataset(np.ones((4, 1)), np.array([1.0, 2.0, 3.0, 4.0]))


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)

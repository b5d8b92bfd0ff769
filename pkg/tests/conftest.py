import pytest
from importlib import resources
import numpy as np

from tjeffreys.gibbs_sampler import ChainConfig
from tjeffreys.regression_core import Dataset


RESOURCE_PATH = resources.files("tjeffreys") / "resources"


@pytest.fixture
def rng():
    """Seeded generator, fresh for every test."""
    return np.random.default_rng(20150601)


def random_dataset(rng: np.random.Generator, n: int, p: int) -> Dataset:
    """Continuous random design with an intercept column and Student-t noise."""
    X = np.ones((n, p))
    if p > 1:
        X[:, 1:] = rng.standard_normal((n, p - 1))
    y = X @ np.ones(p) + rng.standard_t(5.0, size=n)
    return Dataset(y=y, X=X)


@pytest.fixture
def small_dataset(rng):
    """n=12, p=2 random dataset."""
    return random_dataset(rng, 12, 2)


@pytest.fixture
def fixture_csv():
    """Path to the bundled synthetic fixture, n=30, columns y, x."""
    return RESOURCE_PATH / "synthetic_fixture.csv"


@pytest.fixture
def fixture_dataset(fixture_csv):
    """Bundled fixture with an intercept, p=2."""
    return Dataset.from_csv(fixture_csv, intercept=True)


@pytest.fixture
def truncated_prior_yaml():
    """Independence nu factor on (1, inf) with a = 2."""
    return RESOURCE_PATH / "custom_truncated_prior.yaml"


@pytest.fixture
def flat_prior_yaml():
    """Constant (improper) nu density."""
    return RESOURCE_PATH / "custom_flat_prior.yaml"


@pytest.fixture
def short_chain():
    """Chain settings for quick end-to-end runs."""
    return ChainConfig(iterations=600, burn_in=100, thin=5, seed=7)


@pytest.fixture
def tiny_dataset():
    """n=6, p=1 location model used by the grid oracle checks."""
    y = np.array([-0.9, -0.2, 0.1, 0.4, 1.3, 3.2])
    return Dataset(y=y, X=np.ones((6, 1)))


@pytest.fixture
def dataset_factory(rng):
    """Random dataset builder sharing the test's generator."""

    def make(n: int, p: int) -> Dataset:
        return random_dataset(rng, n, p)

    return make

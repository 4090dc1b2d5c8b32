import numpy as np
import pytest

from jetsmc.core import GinkgoParams
from jetsmc.sim import default_root, generate_dataset


def make_params(lambdas=(1.5,), t_cut=16.0):
    return GinkgoParams(lambdas, t_cut, default_root())


@pytest.fixture(scope="session")
def qcd_params():
    return make_params()


@pytest.fixture(scope="session")
def small_jets():
    """Jets with 3 to 6 leaves, small enough for brute force."""
    p = make_params(t_cut=36.0)
    return generate_dataset(p, 8, 101, min_leaves=3, max_leaves=6)


@pytest.fixture(scope="session")
def hr_jets():
    p = make_params((3.0, 1.5), t_cut=36.0)
    return generate_dataset(p, 6, 202, min_leaves=3, max_leaves=6)


def random_lightlike_leaves(rng, n, scale=10.0):
    """Massless leaves with random directions and energies."""
    e = rng.uniform(0.5, 1.0, n) * scale
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.column_stack([e, e[:, None] * d])

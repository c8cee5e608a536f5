import numpy as np
import pytest

from tensorcomp.tensor_core import ObservationSet
from tensorcomp.workbench import SynthSpec, gen_lowrank, sample_observations


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def lowrank_8():
    """8x8x8 tensor of multilinear rank (2,2,2)."""
    return gen_lowrank(SynthSpec((8, 8, 8), (2, 2, 2), seed=3))


@pytest.fixture
def small_problem(lowrank_8):
    """The 8x8x8 rank-(2,2,2) tensor with 60% of its entries observed."""
    return lowrank_8, sample_observations(lowrank_8, 0.6, seed=4)


@pytest.fixture
def noisy_problem(rng):
    """Small full-rank problem for duality checks."""
    X = rng.standard_normal((6, 5, 4))
    obs = sample_observations_array(X, 0.5, rng)
    return X, obs


def sample_observations_array(X, fraction, rng):
    n = X.size
    linear = np.sort(rng.choice(n, size=int(np.ceil(fraction * n)), replace=False))
    return ObservationSet.from_linear(X.shape, linear, X.ravel(order="F")[linear])


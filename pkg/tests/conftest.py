import numpy as np
import pytest
from hypothesis import settings

from pmlab.engine import simulate_kernel_indices
from pmlab.kernels import marginal_kernel_matrix
from pmlab.targets import ModelSpec, ProposalKernel, StateSpace, TargetDistribution

settings.register_profile("suite", max_examples=25, deadline=None)
settings.load_profile("suite")


def finite_model(mass, proposal):
    target = TargetDistribution.from_mass(StateSpace.finite(range(len(mass))), mass)
    return ModelSpec(target=target, proposal=proposal)


@pytest.fixture
def imh3():
    """Three states, uniform independent proposal: every ratio is a pi ratio."""
    return finite_model([0.5, 0.3, 0.2],
                        ProposalKernel.independent([1 / 3, 1 / 3, 1 / 3]))


@pytest.fixture
def swap2():
    """Two states, proposal always swaps; the chain is exactly periodic."""
    return finite_model([0.5, 0.5], ProposalKernel.explicit([[0, 1], [1, 0]]))


@pytest.fixture
def chain5():
    return finite_model(0.55 ** np.arange(5),
                        ProposalKernel.random_walk(5, {-1: 0.5, 1: 0.5}))


@pytest.fixture
def halving_chain31():
    """pi(x) = 2^-(x+1) on 0..30 with the +-1 walk (drift ratio 23/24)."""
    return finite_model(0.5 ** (np.arange(31) + 1.0),
                        ProposalKernel.random_walk(31, {-1: 0.5, 1: 0.5}))


def reversible_4state(seed=11):
    rng = np.random.default_rng(seed)
    mass = rng.uniform(0.3, 1.0, 4)
    a = rng.uniform(0.2, 1.0, (4, 4))
    a = 0.5 * (a + a.T)
    q = a / (a.sum(axis=1).max() * 1.1)
    q[np.arange(4), np.arange(4)] += 1.0 - q.sum(axis=1)
    return finite_model(mass, ProposalKernel.explicit(q))


@pytest.fixture(scope="session")
def four_state_long_run():
    """One 1e7-step exact-matrix simulation shared by the estimator tests."""
    model = reversible_4state()
    kernel = marginal_kernel_matrix(model)
    indices = simulate_kernel_indices(kernel, 10_000_000, seed=2024)
    return model, kernel, indices

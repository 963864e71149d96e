import numpy as np
import pytest
from hypothesis import given, strategies as st

from pmlab.errors import NonFiniteSpace, UndefinedRatio
from pmlab.kernels import marginal_kernel_matrix
from pmlab.targets import (DensityTarget, ModelSpec, ProposalKernel, StateSpace,
                           TargetDistribution, acceptance_ratio,
                           build_marginal_matrix, convolved_increment,
                           rejection_probability, rejection_vector)

from conftest import finite_model


class TestStateSpace:
    def test_finite_needs_two_unique_states(self):
        with pytest.raises(ValueError):
            StateSpace.finite([0])
        with pytest.raises(ValueError):
            StateSpace.finite([0, 0])

    def test_grid_midpoints_1d(self):
        space = StateSpace.grid(0.0, 1.0, 4)
        np.testing.assert_allclose(space.midpoints().ravel(),
                                   [0.125, 0.375, 0.625, 0.875])

    def test_grid_midpoints_2d(self):
        space = StateSpace.grid(-1.0, 1.0, 3, dimension=2)
        assert space.n_states == 9
        assert space.midpoints().shape == (9, 2)

    def test_density_discretization_matches_midpoint_masses(self):
        space = StateSpace.grid(-2.0, 2.0, 8)
        target = TargetDistribution.from_density(space, lambda x: np.exp(-x * x))
        mids = space.midpoints().ravel()
        expected = np.exp(-mids ** 2)
        np.testing.assert_allclose(target.probs, expected / expected.sum(),
                                   atol=1e-15)


class TestProposalValidation:
    def test_asymmetric_increment_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            ProposalKernel.random_walk(5, {-1: 0.4, 1: 0.6})

    def test_rows_must_be_stochastic(self):
        with pytest.raises(ValueError):
            ProposalKernel.explicit([[0.5, 0.4], [0.5, 0.5]])

    def test_boundary_mass_folds_into_self_loop(self):
        q = ProposalKernel.random_walk(3, {-1: 0.5, 1: 0.5}).matrix
        np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-15)
        assert q[0, 0] == 0.5 and q[2, 2] == 0.5

    def test_convolved_increment_is_a_true_two_fold_convolution(self):
        half = {-1: 0.25, 0: 0.5, 1: 0.25}
        conv = convolved_increment(half)
        expected = {-2: 1 / 16, -1: 1 / 4, 0: 3 / 8, 1: 1 / 4, 2: 1 / 16}
        for z, p in expected.items():
            assert conv[z] == pytest.approx(p, abs=1e-15)


class TestAcceptanceRatio:
    def test_identity_move_is_one(self, imh3):
        assert acceptance_ratio(imh3, 1, 1) == pytest.approx(1.0)

    def test_halving_target_forces_half_and_two(self, halving_chain31):
        # pi(x+1)/pi(x) = 1/2 under the symmetric +-1 walk.
        assert acceptance_ratio(halving_chain31, 5, 6) == pytest.approx(0.5)
        assert acceptance_ratio(halving_chain31, 5, 4) == pytest.approx(2.0)

    def test_independent_proposal_oracle(self, imh3):
        # r(0,1) = (0.3/(1/3)) / (0.5/(1/3)) = 0.6, by direct arithmetic.
        assert acceptance_ratio(imh3, 0, 1) == pytest.approx(0.6, abs=1e-15)

    def test_undefined_when_target_or_proposal_vanishes(self):
        model = finite_model([0.0, 1.0, 1.0],
                             ProposalKernel.explicit([[0, 0.5, 0.5],
                                                      [0.5, 0, 0.5],
                                                      [0.5, 0.5, 0]]))
        with pytest.raises(UndefinedRatio):
            acceptance_ratio(model, 0, 1)
        with pytest.raises(UndefinedRatio):
            acceptance_ratio(model, 1, 1)  # q(1,1) = 0

    @given(st.integers(0, 10_000))
    def test_reciprocity(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 6))
        model = finite_model(rng.uniform(0.1, 1.0, n),
                             ProposalKernel.independent(
                                 np.full(n, 1.0 / n)))
        x, y = rng.integers(0, n, 2)
        r_xy = acceptance_ratio(model, int(x), int(y))
        r_yx = acceptance_ratio(model, int(y), int(x))
        assert r_xy * r_yx == pytest.approx(1.0, abs=1e-12)


class TestRejectionProbability:
    def test_uniform_target_never_rejects(self):
        model = finite_model(np.ones(6),
                             ProposalKernel.random_walk(6, {-1: 0.5, 1: 0.5}))
        for x in range(6):
            assert rejection_probability(model, x) == pytest.approx(0.0, abs=1e-15)

    def test_halving_chain_interior_quarter(self, halving_chain31):
        # Down-move accepted surely (prob 1/2); up-move accepted w.p. 1/2 of 1/2.
        for x in [1, 7, 15, 29]:
            assert rejection_probability(halving_chain31, x) == pytest.approx(0.25)

    def test_independent_proposal_oracle(self, imh3):
        # 1 - (1/3)(1 + 0.6 + 0.4), summing min{1, r} over the three proposals.
        assert rejection_probability(imh3, 0) == pytest.approx(1.0 / 3.0, abs=1e-14)


class TestMarginalMatrix:
    def test_two_state_swap_alternates(self, swap2):
        kernel = marginal_kernel_matrix(swap2)
        np.testing.assert_allclose(kernel.rows, [[0, 1], [1, 0]], atol=1e-15)

    def test_halving_chain_interior_rows(self, halving_chain31):
        kernel = build_marginal_matrix(halving_chain31)
        for x in range(1, 30):
            np.testing.assert_allclose(
                kernel.rows[x, [x - 1, x, x + 1]], [0.5, 0.25, 0.25], atol=1e-15)

    def test_independent_proposal_row(self, imh3):
        kernel = build_marginal_matrix(imh3)
        np.testing.assert_allclose(kernel.rows[0],
                                   [1.0 - 0.2 - 0.4 / 3, 0.2, 0.4 / 3], atol=1e-14)

    def test_detailed_balance_and_stationarity(self, chain5, imh3):
        for model in (chain5, imh3):
            kernel = build_marginal_matrix(model)
            assert kernel.detailed_balance_residual() <= 1e-10
            assert kernel.stationarity_residual() <= 1e-10

    def test_rejection_consistency_identity(self, imh3, chain5):
        # rho(x) = 1 - sum_{y != x} P(x, y) - q(x, x) min{1, r(x, x)}.
        for model in (imh3, chain5):
            kernel = build_marginal_matrix(model)
            rho = rejection_vector(model)
            for x in range(model.n_states):
                off = kernel.rows[x].sum() - kernel.rows[x, x]
                reconstructed = 1.0 - off - model.q[x, x]
                assert rho[x] == pytest.approx(reconstructed, abs=1e-12)

    def test_density_target_must_be_discretized_first(self):
        space = StateSpace.grid(-3.0, 3.0, 16)
        model = ModelSpec(
            target=DensityTarget(space, lambda x: np.exp(-0.5 * x * x)),
            proposal=ProposalKernel.random_walk(16, {-1: 0.5, 1: 0.5}))
        with pytest.raises(NonFiniteSpace):
            build_marginal_matrix(model)
        kernel = build_marginal_matrix(model.discretized())
        assert kernel.detailed_balance_residual() <= 1e-10

    @given(st.integers(0, 10_000))
    def test_random_instances_reversible(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 7))
        a = rng.uniform(0.05, 1.0, (n, n))
        a = 0.5 * (a + a.T)
        q = a / (a.sum(axis=1).max() * 1.05)
        q[np.arange(n), np.arange(n)] += 1.0 - q.sum(axis=1)
        model = finite_model(rng.uniform(0.05, 1.0, n), ProposalKernel.explicit(q))
        kernel = build_marginal_matrix(model)
        assert kernel.detailed_balance_residual() <= 1e-10
        assert abs(kernel.rows.sum(axis=1) - 1.0).max() <= 1e-12

import itertools
import math

import numpy as np
import pytest
from scipy import stats

from pmlab.errors import AsymmetricG, GridTooLarge
from pmlab.kernels import (JointState, auxiliary_step, auxiliary_stepper,
                           build_joint_grid, build_joint_matrix,
                           delta_functionals, lazy_kernel,
                           marginal_kernel_matrix, marginal_mean_acceptance,
                           marginal_step, marginal_stepper,
                           mean_abs_weight_deviation, mean_acceptance,
                           pseudo_step, pseudo_stepper)
from pmlab.targets import ProposalKernel, ratio_matrix, rejection_vector
from pmlab.weights import ConstantOne, DiscreteAtoms, TwoPoint

from conftest import finite_model


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def walk(stepper, start, n, seed):
    r = rng(seed)
    state, path = start, [start]
    for _ in range(n):
        state, _ = stepper(state, r)
        path.append(state)
    return path


class TestSteppers:
    def test_unit_weights_follow_the_marginal_path_exactly(self, chain5):
        fam = ConstantOne()
        start = JointState(2, 1.0)
        pseudo_path = walk(pseudo_stepper(chain5, fam), start, 400, seed=9)
        aux_path = walk(auxiliary_stepper(chain5, fam), start, 400, seed=9)
        marg_path = walk(marginal_stepper(chain5), start, 400, seed=9)
        assert [s.x for s in pseudo_path] == [s.x for s in marg_path]
        assert [s.x for s in aux_path] == [s.x for s in marg_path]
        assert all(s.w == 1.0 for s in pseudo_path)

    def test_huge_current_weight_freezes_the_noisy_chain(self, imh3):
        # Acceptance needs u/w to rescue the ratio; exact rejection
        # probabilities increase to one along any diverging weight ladder.
        fam = TwoPoint(0.5, 0.8)
        values, probs = fam.atoms(0)
        r = ratio_matrix(imh3)
        prev = 0.0
        for w in (1e2, 1e4, 1e6):
            acc = sum(imh3.q[0, y] * p * min(1.0, r[0, y] * u / w)
                      for y in range(3) for u, p in zip(values, probs))
            rej = 1.0 - acc
            assert rej > prev
            prev = rej
        assert prev > 1.0 - 1e-4

        state = JointState(0, 1e9)
        accepted = 0
        gen = rng(4)
        step = pseudo_stepper(imh3, fam)
        for _ in range(10_000):
            _, ok = step(state, gen)
            accepted += ok
        assert accepted <= 1

    def test_pseudo_occupancy_matches_exact_stationary(self, imh3):
        fam = TwoPoint(0.5, 0.8)
        grid = build_joint_grid(fam, 3)
        kernel = build_joint_matrix(imh3, grid, "pseudo")
        high = float(fam.atoms(0)[0][1])
        state = JointState(0, high)
        gen = rng(123)
        counts = np.zeros(kernel.size)
        n = 1_000_000
        step = pseudo_stepper(imh3, fam)
        index_of = {}
        for i in range(kernel.size):
            index_of[(int(kernel.grid.x_of[i]), float(kernel.grid.w_of[i]))] = i
        for _ in range(n):
            state, _ = step(state, gen)
            counts[index_of[(state.x, state.w)]] += 1
        # Pearson test against pi(x) pi_x(w) on the 3 x 2 grid at level 0.001.
        result = stats.chisquare(counts, n * kernel.stationary)
        assert result.pvalue > 0.001

    def test_auxiliary_matches_marginal_occupancy(self, chain5):
        fam = TwoPoint(0.5, 0.8)
        gen = rng(77)
        n = 100_000
        aux_counts = np.zeros(5)
        state = JointState(0, 1.0)
        step = auxiliary_stepper(chain5, fam)
        for _ in range(n):
            state, _ = step(state, gen)
            aux_counts[state.x] += 1
        marg_counts = np.zeros(5)
        state = JointState(0, 1.0)
        mstep = marginal_stepper(chain5)
        for _ in range(n):
            state, _ = mstep(state, gen)
            marg_counts[state.x] += 1
        table = np.vstack([aux_counts, marg_counts])
        assert stats.chi2_contingency(table).pvalue > 0.001

    def test_auxiliary_acceptance_rate_matches_exact_rejection(self, imh3):
        fam = TwoPoint(0.5, 0.8)
        rho = rejection_vector(imh3)
        x = 0
        gen = rng(15)
        n = 1_000_000
        hits = 0
        state = JointState(x, 2.0)
        step = auxiliary_stepper(imh3, fam)
        for _ in range(n):
            _, ok = step(state, gen)
            hits += ok
        p = 1.0 - rho[x]
        se = math.sqrt(p * (1.0 - p) / n)
        assert abs(hits / n - p) <= 4.0 * se


class TestJointMatrix:
    def test_unit_weights_reduce_to_the_marginal_matrix(self, chain5):
        grid = build_joint_grid(ConstantOne(), 5)
        pseudo = build_joint_matrix(chain5, grid, "pseudo")
        marginal = marginal_kernel_matrix(chain5)
        np.testing.assert_allclose(pseudo.rows, marginal.rows, atol=1e-15)
        np.testing.assert_allclose(pseudo.stationary, marginal.stationary,
                                   atol=1e-15)

    def test_two_state_brute_force_enumeration(self, swap2):
        fam = TwoPoint(0.5, 0.8)
        grid = build_joint_grid(fam, 2)
        kernel = build_joint_matrix(swap2, grid, "pseudo")
        values, probs = fam.atoms(0)
        # Oracle: enumerate (y, u) outcomes by hand for each joint row.
        states = [(x, w) for x in (0, 1) for w in values]
        expected = np.zeros((4, 4))
        for i, (x, w) in enumerate(states):
            y = 1 - x      # proposal always swaps
            stay = 0.0
            for u, pu in zip(values, probs):
                acc = min(1.0, u / w)          # pi uniform, q symmetric
                j = states.index((y, u))
                expected[i, j] += pu * acc
                stay += pu * (1.0 - acc)
            expected[i, i] += stay
        np.testing.assert_allclose(kernel.rows, expected, atol=1e-15)

    @pytest.mark.parametrize("kind", ["pseudo", "auxiliary", "check"])
    def test_reversibility_and_stationarity(self, chain5, kind):
        grid = build_joint_grid(TwoPoint(0.4, 0.7), 5)
        kernel = build_joint_matrix(chain5, grid, kind)
        assert kernel.detailed_balance_residual() <= 1e-9
        assert kernel.stationarity_residual() <= 1e-10
        np.testing.assert_allclose(kernel.rows.sum(axis=1), 1.0, atol=1e-10)

    def test_marginal_coincidence_of_the_weight_refresh_kernel(self, chain5):
        # Collapsing the auxiliary kernel's weight blocks must reproduce the
        # marginal matrix entrywise.
        grid = build_joint_grid(TwoPoint(0.4, 0.7), 5)
        aux = build_joint_matrix(chain5, grid, "auxiliary")
        marginal = marginal_kernel_matrix(chain5)
        tilted = grid.tilted
        collapsed = np.zeros((5, 5))
        for i in range(grid.size):
            x = grid.x_of[i]
            for j in range(grid.size):
                collapsed[x, grid.x_of[j]] += tilted[i] * aux.rows[i, j]
        np.testing.assert_allclose(collapsed, marginal.rows, atol=1e-10)

    def test_rowwise_tilted_acceptance_never_beats_marginal(self, chain5):
        grid = build_joint_grid(TwoPoint(0.5, 0.8), 5)
        pseudo = build_joint_matrix(chain5, grid, "pseudo")
        r = ratio_matrix(chain5)
        acc_marg = np.minimum(1.0, r)
        moves = pseudo.move_matrix()
        tilted = grid.tilted
        for x in range(5):
            for y in range(5):
                if chain5.q[x, y] <= 0:
                    continue
                block_x = slice(grid.offsets[x], grid.offsets[x + 1])
                block_y = slice(grid.offsets[y], grid.offsets[y + 1])
                avg = float(tilted[block_x]
                            @ moves[block_x, block_y].sum(axis=1))
                assert avg <= chain5.q[x, y] * acc_marg[x, y] + 1e-12

    def test_lazy_kernel_shifts_diagonal_and_spectrum(self, imh3):
        grid = build_joint_grid(TwoPoint(0.5, 0.8), 3)
        base = build_joint_matrix(imh3, grid, "pseudo")
        lazy = lazy_kernel(base, 0.5)
        np.testing.assert_allclose(lazy.rows.diagonal(),
                                   0.5 + 0.5 * base.rows.diagonal(), atol=1e-15)
        from pmlab.spectral import symmetrize_and_decompose

        base_vals = symmetrize_and_decompose(base).values
        lazy_vals = symmetrize_and_decompose(lazy).values
        np.testing.assert_allclose(lazy_vals, 0.5 + 0.5 * base_vals, atol=1e-12)
        assert lazy_vals[0] >= 2 * 0.5 - 1.0 - 1e-12

    def test_entry_budget_guard(self, chain5):
        grid = build_joint_grid(TwoPoint(0.5, 0.8), 5)
        with pytest.raises(GridTooLarge):
            build_joint_matrix(chain5, grid, "pseudo", entry_budget=10)


class TestMeanAcceptance:
    def test_uniform_flat_chain_always_accepts(self):
        model = finite_model(np.ones(4),
                             ProposalKernel.random_walk(4, {-1: 0.5, 1: 0.5}))
        grid = build_joint_grid(ConstantOne(), 4)
        kernel = build_joint_matrix(model, grid, "pseudo")
        assert mean_acceptance(kernel) == pytest.approx(1.0, abs=1e-12)
        assert marginal_mean_acceptance(model) == pytest.approx(1.0, abs=1e-12)

    def test_order_and_deviation_bound_on_random_instances(self):
        gen = rng(31)
        for _ in range(100):
            n = int(gen.integers(2, 7))
            model = finite_model(gen.uniform(0.1, 1.0, n),
                                 ProposalKernel.independent(
                                     gen.dirichlet(np.ones(n)) * 0.9
                                     + 0.1 / n))
            fam = TwoPoint(low=float(gen.uniform(0.0, 0.9)),
                           p_low=float(gen.uniform(0.1, 0.9)))
            grid = build_joint_grid(fam, n)
            pseudo = build_joint_matrix(model, grid, "pseudo")
            alpha_p = marginal_mean_acceptance(model)
            alpha_tilde = mean_acceptance(pseudo)
            assert alpha_p - alpha_tilde >= -1e-12
            assert alpha_p - alpha_tilde <= \
                mean_abs_weight_deviation(model, fam) + 1e-12


class TestDeltaFunctionals:
    def test_zero_function_gives_zero(self, imh3):
        grid = build_joint_grid(TwoPoint(0.5, 0.8), 3)
        report = delta_functionals(imh3, grid, np.zeros((3, 3)))
        assert report.delta_auxiliary == 0.0 and report.delta_pseudo == 0.0

    def test_unit_function_recovers_the_acceptance_rates(self, imh3):
        grid = build_joint_grid(TwoPoint(0.5, 0.8), 3)
        pseudo = build_joint_matrix(imh3, grid, "pseudo")
        report = delta_functionals(imh3, grid, np.ones((3, 3)))
        assert report.delta_auxiliary == pytest.approx(
            marginal_mean_acceptance(imh3), abs=1e-12)
        assert report.delta_pseudo == pytest.approx(mean_acceptance(pseudo),
                                                    abs=1e-12)

    def test_random_symmetric_functions_obey_order_and_bound(self, imh3):
        gen = rng(8)
        grid = build_joint_grid(
            DiscreteAtoms.from_atoms([0.2, 1.1, 2.2], [0.5, 0.3, 0.2],
                                     rescale=True), 3)
        for _ in range(25):
            g = np.abs(gen.standard_normal((3, 3)))
            g = 0.5 * (g + g.T)
            report = delta_functionals(imh3, grid, g)
            assert report.gap >= -1e-12
            assert report.gap <= report.upper_bound + 1e-12

    def test_asymmetric_or_negative_rejected(self, imh3):
        grid = build_joint_grid(TwoPoint(0.5, 0.8), 3)
        bad = np.array([[0.0, 1.0, 0.0], [0.5, 0.0, 0.0], [0.0, 0.0, 0.0]])
        with pytest.raises(AsymmetricG):
            delta_functionals(imh3, grid, bad)
        with pytest.raises(AsymmetricG):
            delta_functionals(imh3, grid, -np.ones((3, 3)))

import math

import numpy as np
import pytest

from pmlab.drift import counterexample_family, counterexample_model
from pmlab.engine import estimate_asymptotic_variance
from pmlab.errors import InequalityViolated, NotReversible
from pmlab.kernels import (JointKernelMatrix, build_joint_grid,
                           build_joint_matrix, degenerate_grid, lazy_kernel,
                           marginal_kernel_matrix)
from pmlab.spectral import (asymptotic_variance_exact, dirichlet_form,
                            ess_sup_rejection, gap_collapse_scan,
                            gap_upper_bound_from_set, spectral_gap, var_lambda,
                            verify_gap_sandwich, verify_variance_order)
from pmlab.targets import ProposalKernel, rejection_vector
from pmlab.weights import ConstantOne, LogNormal, TwoPoint

from conftest import finite_model, reversible_4state


def explicit_kernel(rows, stationary):
    rows = np.asarray(rows, dtype=float)
    n = rows.shape[0]
    return JointKernelMatrix(kind="explicit", rows=rows,
                             stationary=np.asarray(stationary, dtype=float),
                             grid=degenerate_grid(n),
                             self_move=np.zeros(n))


def iid_kernel(mu):
    mu = np.asarray(mu, dtype=float)
    return explicit_kernel(np.tile(mu, (mu.size, 1)), mu)


class TestSpectralGap:
    def test_two_state_swap_chain(self, swap2):
        report = spectral_gap(marginal_kernel_matrix(swap2))
        assert report.gap == pytest.approx(2.0, abs=1e-12)
        assert report.left_gap == pytest.approx(0.0, abs=1e-12)
        assert not report.is_positive_operator

    def test_identity_kernel_has_no_gap(self):
        report = spectral_gap(explicit_kernel(np.eye(3), np.full(3, 1 / 3)))
        assert report.gap == pytest.approx(0.0, abs=1e-12)
        assert report.left_gap == pytest.approx(2.0, abs=1e-12)
        assert report.is_positive_operator

    def test_lost_left_gap_block_one(self):
        # The k = 1 ridge function pushes an eigenvalue below -0.72.
        model = counterexample_model(40)
        grid = build_joint_grid(counterexample_family(), model.n_states)
        report = spectral_gap(build_joint_matrix(model, grid, "pseudo"))
        assert report.left_gap < 0.28

    def test_non_reversible_kernel_rejected(self):
        rows = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
        with pytest.raises(NotReversible):
            spectral_gap(explicit_kernel(rows, np.full(3, 1 / 3)))


class TestDirichletForm:
    def test_constant_functions_have_zero_energy(self, chain5):
        kernel = marginal_kernel_matrix(chain5)
        assert dirichlet_form(kernel, np.full(5, 3.7)) == pytest.approx(0.0,
                                                                        abs=1e-12)

    def test_weight_refresh_energy_decomposition(self, chain5):
        # E_aux(f) = E_marginal(f0) + sum pi(x) pi_x(w) (1 - rho(x)) fbar^2.
        grid = build_joint_grid(TwoPoint(0.5, 0.8), 5)
        aux = build_joint_matrix(chain5, grid, "auxiliary")
        marginal = marginal_kernel_matrix(chain5)
        rho = rejection_vector(chain5)
        gen = np.random.default_rng(3)
        for _ in range(20):
            f = gen.standard_normal(aux.size)
            f0 = np.zeros(5)
            tilted = grid.tilted
            for i in range(aux.size):
                f0[grid.x_of[i]] += tilted[i] * f[i]
            fbar = f - f0[grid.x_of]
            correction = float(np.dot(aux.stationary * (1 - rho[grid.x_of]),
                                      fbar * fbar))
            lhs = dirichlet_form(aux, f)
            rhs = dirichlet_form(marginal, f0) + correction
            assert lhs == pytest.approx(rhs, abs=1e-12, rel=1e-10)

    def test_noisy_energy_dominates_scaled_refresh_energy(self, chain5):
        grid = build_joint_grid(TwoPoint(0.5, 0.8), 5)
        pseudo = build_joint_matrix(chain5, grid, "pseudo")
        aux = build_joint_matrix(chain5, grid, "auxiliary")
        w_bar = grid.max_weight
        gen = np.random.default_rng(4)
        for _ in range(20):
            f = gen.standard_normal(pseudo.size)
            assert dirichlet_form(pseudo, f) >= \
                dirichlet_form(aux, f) / w_bar - 1e-12


class TestAsymptoticVariance:
    def test_iid_kernel_returns_the_stationary_variance(self):
        mu = np.array([0.2, 0.3, 0.5])
        kernel = iid_kernel(mu)
        f = np.array([1.0, -2.0, 0.7])
        fbar = f - np.dot(mu, f)
        report = asymptotic_variance_exact(kernel, f)
        assert report.var_exact == pytest.approx(float(np.dot(mu, fbar ** 2)),
                                                 abs=1e-12)
        assert report.iact == pytest.approx(1.0, abs=1e-10)

    def test_swap_chain_antithetic_variance_vanishes(self, swap2):
        kernel = marginal_kernel_matrix(swap2)
        report = asymptotic_variance_exact(kernel, np.array([1.0, -1.0]))
        assert report.var_exact == pytest.approx(0.0, abs=1e-12)

    def test_matches_batch_means_on_a_long_run(self, four_state_long_run):
        model, kernel, indices = four_state_long_run
        g = np.array([0.0, 1.0, 2.0, 3.0])
        exact = asymptotic_variance_exact(kernel, g).var_exact
        # 2048 batches put the statistical error well inside 5 percent; the
        # default 64-batch split only resolves its own 3-sigma interval.
        fine = estimate_asymptotic_variance(g[indices], method="batch_means",
                                            n_batches=2048)
        assert abs(fine.point - exact) / exact < 0.05
        coarse = estimate_asymptotic_variance(g[indices], method="batch_means")
        assert abs(coarse.point - exact) <= 3.0 * coarse.std_error

    def test_reducible_kernel_flags_infinite_variance(self):
        kernel = explicit_kernel(np.eye(2), np.array([0.5, 0.5]))
        report = asymptotic_variance_exact(kernel, np.array([1.0, -1.0]))
        assert not report.is_finite
        assert math.isinf(report.var_exact)
        assert report.cesaro_trend[0] < report.cesaro_trend[-1]

    def test_truncated_autocovariance_cross_check(self):
        model = reversible_4state(3)
        kernel = marginal_kernel_matrix(model)
        g = np.array([0.4, -1.0, 2.0, 0.1])
        gbar = g - np.dot(kernel.stationary, g)
        gap = spectral_gap(kernel).gap
        var = asymptotic_variance_exact(kernel, g).var_exact
        # Direct series sum_{|k|<=T} with the geometric tail bound from the gap.
        t_cut = 200
        acc = float(np.dot(kernel.stationary, gbar * gbar))
        vec = gbar.copy()
        for _ in range(t_cut):
            vec = kernel.rows @ vec
            acc += 2.0 * float(np.dot(kernel.stationary * gbar, vec))
        tail = 2.0 * (1 - gap) ** (t_cut + 1) / gap * \
            float(np.dot(kernel.stationary, gbar * gbar))
        assert abs(var - acc) <= tail + 1e-9


class TestResolventVariance:
    def test_lambda_zero_is_the_stationary_variance(self, imh3):
        kernel = marginal_kernel_matrix(imh3)
        g = np.array([1.0, 0.0, -2.0])
        gbar = g - np.dot(kernel.stationary, g)
        assert var_lambda(kernel, g, 0.0) == pytest.approx(
            float(np.dot(kernel.stationary, gbar ** 2)), abs=1e-12)

    def test_near_one_lambda_approximates_the_exact_variance(self):
        model = reversible_4state()
        kernel = marginal_kernel_matrix(model)
        gap = spectral_gap(kernel).gap
        assert gap >= 0.3
        g = np.array([1.0, -0.3, 0.8, 2.0])
        exact = asymptotic_variance_exact(kernel, g).var_exact
        assert abs(var_lambda(kernel, g, 0.99) - exact) / exact < 0.02

    def test_monotone_limit_along_lambda(self, imh3):
        grid = build_joint_grid(TwoPoint(0.5, 0.8), 3)
        pseudo = build_joint_matrix(imh3, grid, "pseudo")   # positive operator
        g = np.array([0.3, -1.0, 1.4])
        exact = asymptotic_variance_exact(pseudo, g).var_exact
        values = [var_lambda(pseudo, g, lam) for lam in (0.9, 0.99, 0.999)]
        assert values[0] <= values[1] <= values[2] <= exact + 1e-10
        gaps = [exact - v for v in values]
        assert gaps[0] > gaps[1] > gaps[2]


class TestGapSandwich:
    def test_unit_weights_make_the_sandwich_tight(self, chain5):
        report = verify_gap_sandwich(chain5, ConstantOne(), w_bar=1.0)
        assert report.gap_pseudo == pytest.approx(report.gap_auxiliary, abs=1e-10)
        assert report.gap_pseudo == pytest.approx(report.gap_marginal, abs=1e-10)

    def test_two_point_weights_on_the_five_state_chain(self, chain5):
        report = verify_gap_sandwich(chain5, TwoPoint(0.5, 0.8))
        assert report.min_slack >= -1e-8
        assert report.gap_auxiliary <= report.gap_marginal + 1e-12

    def test_rejection_upper_bound_on_random_sets(self, chain5):
        kernel = marginal_kernel_matrix(chain5)
        gap = spectral_gap(kernel).gap
        gen = np.random.default_rng(5)
        for _ in range(30):
            mask = gen.random(5) < 0.5
            if not 0 < kernel.stationary[mask].sum() < 1:
                continue
            assert gap <= gap_upper_bound_from_set(kernel, mask) + 1e-10

    def test_violation_raises_with_instance(self, chain5):
        # An artificially huge w_bar cannot break lower bounds; shrink it
        # below one instead so the scaled-auxiliary floor must fail.
        with pytest.raises(InequalityViolated):
            verify_gap_sandwich(chain5, TwoPoint(0.5, 0.8), w_bar=0.1)


class TestVarianceOrder:
    def test_unit_weights_equalize_variances(self, chain5):
        g = np.arange(5.0)
        report = verify_variance_order(chain5, ConstantOne(), g, w_bar=1.0)
        assert report.var_pseudo == pytest.approx(report.var_marginal, abs=1e-10)
        assert report.slacks["upper_bound"] >= -1e-10

    def test_mild_noise_obeys_the_small_excess_bound(self, chain5):
        # With w_bar = 1 + delta the excess variance is at most
        # delta (var_marginal + var_pi).
        fam = TwoPoint(low=0.96, p_low=0.5)
        w_bar = fam.max_weight
        delta = w_bar - 1.0
        assert delta < 0.05
        g = np.array([0.0, 1.0, -1.0, 2.0, 0.5])
        report = verify_variance_order(chain5, fam, g, w_bar=w_bar)
        excess = report.var_pseudo - report.var_marginal
        assert excess <= delta * (report.var_marginal + report.var_pi) + 1e-10

    def test_slacks_all_nonnegative(self, imh3):
        report = verify_variance_order(imh3, TwoPoint(0.5, 0.8), np.arange(3.0))
        assert report.min_slack >= -1e-10


class TestGapCollapse:
    def test_bounded_weights_keep_the_gap_stable(self, chain5):
        points = gap_collapse_scan(chain5, TwoPoint(0.5, 0.8),
                                   cutoffs=[0.99, 0.999999])
        assert points[0].gap == pytest.approx(points[1].gap, abs=1e-12)
        assert points[0].gap > 0.05

    def test_unbounded_weights_collapse_the_gap(self, chain5):
        points = gap_collapse_scan(chain5, LogNormal(1.0),
                                   cutoffs=[1 - 1e-2, 1 - 1e-6], n_nodes=96)
        assert points[1].gap < points[0].gap
        for p in points:
            assert p.gap <= p.tail_bound + 1e-10

    def test_ess_sup_ignores_null_mass_states(self):
        model = finite_model([1.0, 1.0, 1e-16],
                             ProposalKernel.independent([0.4, 0.4, 0.2]))
        assert ess_sup_rejection(model) == pytest.approx(
            max(rejection_vector(model)[:2]), abs=1e-12)


class TestPositivity:
    def test_noisy_independent_sampler_is_positive(self):
        gen = np.random.default_rng(21)
        for _ in range(30):
            n = int(gen.integers(2, 7))
            model = finite_model(gen.uniform(0.1, 1.0, n),
                                 ProposalKernel.independent(
                                     gen.dirichlet(np.ones(n)) * 0.8 + 0.2 / n))
            fam = TwoPoint(low=float(gen.uniform(0.0, 0.9)),
                           p_low=float(gen.uniform(0.1, 0.9)))
            grid = build_joint_grid(fam, n)
            report = spectral_gap(build_joint_matrix(model, grid, "pseudo"))
            assert report.min_eigenvalue >= -1e-9

    def test_convolved_walk_on_a_gaussian_grid_is_positive(self):
        from pmlab.targets import (StateSpace, TargetDistribution, ModelSpec,
                                   convolved_increment,
                                   discrete_gaussian_increment)

        points = 48
        space = StateSpace.grid(-10.0, 10.0, points)
        target = TargetDistribution.from_density(
            space, lambda x: math.exp(-0.5 * x * x))
        half = discrete_gaussian_increment(2.0 / math.sqrt(2.0), 8)
        proposal = ProposalKernel.random_walk(points, convolved_increment(half))
        model = ModelSpec(target=target, proposal=proposal)
        grid = build_joint_grid(TwoPoint(0.5, 0.8), points)
        report = spectral_gap(build_joint_matrix(model, grid, "pseudo"))
        assert report.min_eigenvalue >= -1e-6

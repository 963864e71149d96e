import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from pmlab.errors import SupportExplosion
from pmlab.weights import (Averaged, ConstantOne, DiscreteAtoms, GammaShape,
                           LogNormal, StateAtoms, TwoPoint, WeightGrid,
                           averaged_family, project_family, sample_weight,
                           tilted_measure, uniform_integrability_bound,
                           weight_moment)


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


class TestSampling:
    def test_constant_one_is_always_one(self):
        fam = ConstantOne()
        assert sample_weight(fam, 0, rng()) == 1.0
        assert np.all(sample_weight(fam, 3, rng(), size=100) == 1.0)

    def test_two_point_support_forced_by_mean_one(self):
        fam = TwoPoint(low=0.5, p_low=0.8)
        draws = np.unique(sample_weight(fam, 0, rng(1), size=2000))
        np.testing.assert_allclose(draws, [0.5, 3.0], atol=1e-12)

    @pytest.mark.parametrize("family,se", [
        (TwoPoint(0.5, 0.8), 1.0),
        (LogNormal(1.0), math.sqrt(math.e - 1.0)),
        (GammaShape(2.0), math.sqrt(0.5)),
        (averaged_family(TwoPoint(0.5, 0.8), 4), 0.5),
    ])
    def test_empirical_mean_one_within_five_standard_errors(self, family, se):
        n = 1_000_000
        draws = sample_weight(family, 0, rng(7), size=n)
        assert abs(draws.mean() - 1.0) <= 5.0 * se / math.sqrt(n)

    def test_averaged_sampling_is_a_running_mean(self):
        fam = averaged_family(TwoPoint(0.5, 0.8), 2)
        draws = sample_weight(fam, 0, rng(3), size=5000)
        assert set(np.round(np.unique(draws), 12)) <= {0.5, 1.75, 3.0}


class TestMoments:
    @pytest.mark.parametrize("family", [
        ConstantOne(), TwoPoint(0.5, 0.8), LogNormal(0.7), GammaShape(3.0),
        averaged_family(TwoPoint(0.5, 0.8), 3),
    ])
    def test_normalization_and_mean_one(self, family):
        assert weight_moment(family, 0, 0.0) == pytest.approx(1.0, abs=1e-12)
        assert weight_moment(family, 0, 1.0) == pytest.approx(1.0, abs=1e-10)

    def test_two_point_second_moment(self):
        # 0.8 * 0.25 + 0.2 * 9 by direct summation.
        assert weight_moment(TwoPoint(0.5, 0.8), 0, 2.0) == pytest.approx(2.0)

    def test_gamma_inverse_moment_closed_form_vs_monte_carlo(self):
        fam = GammaShape(2.0)
        exact = weight_moment(fam, 0, -1.0)
        assert exact == pytest.approx(2.0, abs=1e-12)
        draws = sample_weight(fam, 0, rng(42), size=10_000_000)
        inv = 1.0 / draws
        se = inv.std(ddof=1) / math.sqrt(inv.size)
        assert abs(inv.mean() - exact) <= 3.0 * se

    def test_lognormal_moment_closed_form_vs_monte_carlo(self):
        fam = LogNormal(0.5)
        exact = weight_moment(fam, 0, 2.0)
        assert exact == pytest.approx(math.exp(0.25), abs=1e-12)
        draws = sample_weight(fam, 0, rng(9), size=2_000_000)
        sq = draws ** 2
        se = sq.std(ddof=1) / math.sqrt(sq.size)
        assert abs(sq.mean() - exact) <= 3.0 * se

    def test_divergent_moments_reported_as_infinity(self):
        assert weight_moment(GammaShape(2.0), 0, -2.0) == math.inf
        zero_atom = DiscreteAtoms.from_atoms([0.0, 2.0], [0.5, 0.5])
        assert weight_moment(zero_atom, 0, -1.0) == math.inf

    def test_mean_abs_dev_closed_forms_vs_atoms(self):
        assert TwoPoint(0.5, 0.8).mean_abs_dev_one(0) == pytest.approx(0.8)
        sigma = 0.6
        exact = LogNormal(sigma).mean_abs_dev_one(0)
        assert exact == pytest.approx(4 * stats.norm.cdf(sigma / 2) - 2, abs=1e-12)
        draws = sample_weight(LogNormal(sigma), 0, rng(5), size=2_000_000)
        dev = np.abs(draws - 1.0)
        assert abs(dev.mean() - exact) <= 3.0 * dev.std() / math.sqrt(dev.size)
        k = 3.0
        draws = sample_weight(GammaShape(k), 0, rng(6), size=2_000_000)
        dev = np.abs(draws - 1.0)
        exact = GammaShape(k).mean_abs_dev_one(0)
        assert abs(dev.mean() - exact) <= 3.0 * dev.std() / math.sqrt(dev.size)


class TestAveraged:
    def test_order_one_is_the_base_family(self):
        base = TwoPoint(0.5, 0.8)
        assert averaged_family(base, 1) is base

    def test_two_point_pair_convolution_oracle(self):
        # Brute-force enumeration over both draws.
        base = TwoPoint(0.5, 0.8)
        values, probs = base.atoms(0)
        table = {}
        for (v1, p1), (v2, p2) in itertools.product(zip(values, probs), repeat=2):
            key = round((v1 + v2) / 2.0, 12)
            table[key] = table.get(key, 0.0) + p1 * p2
        fam = averaged_family(base, 2)
        got_v, got_p = fam.atoms(0)
        assert {round(v, 12) for v in got_v} == set(table)
        for v, p in zip(got_v, got_p):
            assert p == pytest.approx(table[round(v, 12)], abs=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 4, 8])
    def test_variance_scales_inversely_in_the_order(self, n):
        base = TwoPoint(0.5, 0.8)
        fam = averaged_family(base, n)
        assert fam.variance(0) == pytest.approx(base.variance(0) / n, abs=1e-12)

    def test_mean_one_preserved_exactly(self):
        fam = averaged_family(TwoPoint(0.3, 0.6), 16)
        values, probs = fam.atoms(0)
        assert float(np.dot(values, probs)) == pytest.approx(1.0, abs=1e-12)

    def test_strict_mode_raises_on_support_explosion(self):
        base = DiscreteAtoms.from_atoms([0.31, 0.87, 1.53, 2.11],
                                        [0.4, 0.3, 0.2, 0.1], rescale=True)
        with pytest.raises(SupportExplosion):
            Averaged(base=base, n=10, atom_budget=64, strict=True).atoms(0)

    def test_overflow_fallback_projects_but_keeps_mean_one(self):
        base = DiscreteAtoms.from_atoms([0.31, 0.87, 1.53, 2.11],
                                        [0.4, 0.3, 0.2, 0.1], rescale=True)
        fam = Averaged(base=base, n=10, atom_budget=64)
        values, probs = fam.atoms(0)
        assert values.size <= 64
        assert float(np.dot(values, probs)) == pytest.approx(1.0, abs=1e-9)


class TestTiltedMeasure:
    def test_constant_one_tilts_to_a_point_mass(self):
        nodes, masses = tilted_measure(ConstantOne(), 0)
        np.testing.assert_allclose(nodes, [1.0])
        np.testing.assert_allclose(masses, [1.0])

    def test_two_point_tilt_oracle(self):
        nodes, masses = tilted_measure(TwoPoint(0.5, 0.8), 0)
        np.testing.assert_allclose(nodes, [0.5, 3.0])
        np.testing.assert_allclose(masses, [0.4, 0.6], atol=1e-15)
        assert masses.sum() == pytest.approx(1.0, abs=1e-10)

    def test_lognormal_grid_mass_with_and_without_tilt(self):
        from pmlab.weights import _project_continuous

        fam = LogNormal(0.5)
        # Raw quadrature masses (before the mean-fixing tilt) already capture
        # the tilted law to the grid truncation error.
        nodes, masses = _project_continuous(fam, 0, 200, 1e-8, 1 - 1e-8,
                                            tilt=False)
        assert abs(float(np.dot(nodes, masses)) - 1.0) <= 1e-6
        nodes2, tilted = tilted_measure(fam, 0, n_nodes=200)
        assert tilted.sum() == pytest.approx(1.0, abs=1e-10)

    def test_tilted_sampling_matches_tilted_mean(self):
        # Under the tilted law the mean is E[W^2].
        fam = LogNormal(0.4)
        draws = fam.sample_tilted(0, rng(11), size=1_000_000)
        expected = weight_moment(fam, 0, 2.0)
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(draws.mean() - expected) <= 5.0 * se
        fam = GammaShape(2.5)
        draws = fam.sample_tilted(0, rng(12), size=1_000_000)
        expected = weight_moment(fam, 0, 2.0)
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(draws.mean() - expected) <= 5.0 * se


class TestUniformIntegrability:
    def test_constant_one_bound(self):
        m_w, a = uniform_integrability_bound(ConstantOne(), lambda w: w * w + 1.0,
                                             states=[0, 1])
        assert m_w == pytest.approx(2.0)

    def test_two_point_bound(self):
        m_w, _ = uniform_integrability_bound(TwoPoint(0.5, 0.8),
                                             lambda w: w * w + 1.0, states=[0])
        assert m_w == pytest.approx(3.0)

    def test_tail_envelope_decays(self):
        _, a = uniform_integrability_bound(TwoPoint(0.5, 0.8),
                                           lambda w: w * w + 1.0, states=[0])
        values = [a(w) for w in (10.0, 100.0, 1000.0)]
        assert values[0] > values[1] > values[2]
        assert values[2] < 0.01


class TestConcavityBound:
    @pytest.mark.parametrize("family", [
        TwoPoint(0.5, 0.8),
        DiscreteAtoms.from_atoms([0.2, 0.9, 1.7, 2.6], [0.3, 0.3, 0.2, 0.2],
                                 rescale=True),
        averaged_family(TwoPoint(0.4, 0.6), 3),
    ])
    @pytest.mark.parametrize("r", [0.0, 0.17, 0.5, 1.0, 2.3, 10.0])
    def test_tilted_average_acceptance_never_exceeds_marginal(self, family, r):
        # sum_w sum_u Q(w) w Q(u) min{1, r u / w} <= min{1, r}, exhaustively.
        values, probs = family.atoms(0)
        total = 0.0
        for w, pw in zip(values, probs):
            if w == 0:
                continue
            for u, pu in zip(values, probs):
                total += pw * w * pu * min(1.0, r * u / w)
        assert total <= min(1.0, r) + 1e-12


class TestGrids:
    def test_weight_grid_invariants_enforced(self):
        with pytest.raises(ValueError):
            WeightGrid(nodes=np.array([1.0, 0.5]), masses_of_x=np.array([[0.5, 0.5]]))
        with pytest.raises(ValueError):
            WeightGrid(nodes=np.array([0.5, 1.0]), masses_of_x=np.array([[0.7, 0.7]]))
        with pytest.raises(ValueError):
            # Distribution fine but mean far from one.
            WeightGrid(nodes=np.array([2.0, 3.0]), masses_of_x=np.array([[0.5, 0.5]]))

    def test_projection_preserves_mean_one_per_state(self):
        grid = project_family(LogNormal(sigma={0: 0.3, 1: 0.9}), 2, n_nodes=96)
        means = grid.masses_of_x @ grid.nodes
        np.testing.assert_allclose(means, 1.0, atol=1e-12)

    def test_state_atoms_fall_back_to_unit_mass(self):
        fam = StateAtoms(atom_map={2: ([0.5, 1.5], [0.5, 0.5])})
        v, p = fam.atoms(0)
        np.testing.assert_allclose(v, [1.0])
        v2, _ = fam.atoms(2)
        np.testing.assert_allclose(v2, [0.5, 1.5])


@given(low=st.floats(0.0, 0.9), p_low=st.floats(0.05, 0.9),
       n=st.sampled_from([1, 2, 4, 8]))
def test_two_point_average_keeps_mean_one_and_scales_variance(low, p_low, n):
    base = TwoPoint(low=low, p_low=p_low)
    fam = averaged_family(base, n)
    values, probs = fam.atoms(0)
    assert float(np.dot(values, probs)) == pytest.approx(1.0, abs=1e-10)
    assert fam.variance(0) == pytest.approx(base.variance(0) / n, rel=1e-9,
                                            abs=1e-12)

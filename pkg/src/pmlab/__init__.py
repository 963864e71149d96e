"""Exact verification laboratory for noisy (pseudo-marginal) Metropolis-Hastings.

The package builds the marginal, pseudo-marginal, weight-refresh (auxiliary)
and product-acceptance (check) kernels both as seeded samplers and as exact
finite transition matrices, and turns their ordering, spectral-gap, drift
and variance-convergence properties into machine-checkable assertions.
"""

__version__ = "0.1.0"

from .errors import (AsymmetricG, ConfigError, DivergentIntegral, DriftFail,
                     GridTooLarge, HypothesisFail, InequalityViolated,
                     MinorizationFail, NonFiniteSpace, NotReversible,
                     PmlabError, SupportExplosion, TraceTooShort,
                     TruncationTooSmall, UndefinedRatio, ZeroGap)
from .targets import (DensityTarget, ModelSpec, ProposalKernel, StateSpace,
                      TargetDistribution, acceptance_ratio,
                      build_marginal_matrix, convolved_increment,
                      discrete_gaussian_increment, rejection_probability)
from .weights import (Averaged, ConstantOne, DiscreteAtoms, GammaShape,
                      LogNormal, StateAtoms, TwoPoint, WeightFamily,
                      WeightGrid, averaged_family, project_family,
                      sample_weight, tilted_measure,
                      uniform_integrability_bound, weight_moment)
from .kernels import (JointGrid, JointKernelMatrix, JointState,
                      auxiliary_step, auxiliary_stepper, build_joint_grid,
                      build_joint_matrix, delta_functionals, lazy_kernel,
                      marginal_kernel_matrix, marginal_step, marginal_stepper,
                      mean_acceptance, pseudo_step, pseudo_stepper)
from .spectral import (SpectralReport, VarianceReport, asymptotic_variance_exact,
                       dirichlet_form, gap_collapse_scan, spectral_gap,
                       var_lambda, verify_gap_sandwich, verify_variance_order)
from .engine import (ChainTrace, EstimatorOutput, draw_stationary,
                     estimate_asymptotic_variance, estimate_iact, run_chain,
                     simulate_kernel_indices, tail_autocorr_exact,
                     tail_autocorr_sup, tv_distance_scan,
                     variance_convergence_experiment)
from .drift import (ContinuousTarget1D, DriftReport, DriftSpec,
                    NonuniformMomentConfig, check_imh_drift, check_rwm_drift,
                    check_uniform_marginal_drift, counterexample_family,
                    counterexample_ledger, counterexample_model,
                    quartic_target, standard_normal_target,
                    verify_unifdrift_condition)
from .config import ScenarioConfig, build_family, build_model, load_scenario
from .scenarios import randomized_suite, run_scenario

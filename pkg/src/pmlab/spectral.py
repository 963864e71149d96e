"""Spectral gaps, Dirichlet forms and exact asymptotic variances.

All computations symmetrize a reversible kernel K via S = D^{1/2} K D^{-1/2}
with D = diag(stationary) and eigendecompose S; eigenvalues are clamped to
[-1, 1] when floating error pushes them within 1e-12 outside.  The right
spectral gap is 1 minus the largest eigenvalue on the mean-zero subspace,
the left gap is 1 plus the smallest eigenvalue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import InequalityViolated, NotReversible, ZeroGap
from .kernels import (JointKernelMatrix, build_joint_grid, build_joint_matrix,
                      marginal_kernel_matrix)
from .targets import ModelSpec, rejection_vector
from .weights import WeightFamily

EIG_CLAMP = 1e-12
POSITIVITY_TOL = 1e-9
REVERSIBILITY_TOL = 1e-9
SANDWICH_TOL = 1e-8
ESS_SUP_MASS = 1e-14


@dataclass(frozen=True)
class EigenSystem:
    """Eigendecomposition of the symmetrized kernel, eigenvalues ascending."""

    values: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)      # columns, orthonormal
    sqrt_pi: np.ndarray = field(repr=False)

    def function_coefficients(self, f: np.ndarray) -> np.ndarray:
        """Coefficients of f in the eigenbasis under the stationary inner product."""
        return self.vectors.T @ (self.sqrt_pi * f)


def symmetrize_and_decompose(kernel: JointKernelMatrix,
                             tol: float = REVERSIBILITY_TOL) -> EigenSystem:
    residual = kernel.detailed_balance_residual()
    if residual > tol:
        raise NotReversible(f"detailed-balance residual {residual:.3e} > {tol:.0e}")
    pi = kernel.stationary
    if np.any(pi < 0):
        raise ValueError("stationary vector has negative entries")
    sqrt_pi = np.sqrt(pi)
    inv = np.zeros_like(sqrt_pi)
    np.divide(1.0, sqrt_pi, out=inv, where=sqrt_pi > 0)
    sym = (sqrt_pi[:, None] * kernel.rows) * inv[None, :]
    sym = 0.5 * (sym + sym.T)
    values, vectors = linalg.eigh(sym)
    if values[0] < -1.0 - EIG_CLAMP or values[-1] > 1.0 + EIG_CLAMP:
        raise NotReversible(f"eigenvalues escape [-1, 1]: [{values[0]}, {values[-1]}]")
    values = np.clip(values, -1.0, 1.0)
    return EigenSystem(values=values, vectors=vectors, sqrt_pi=sqrt_pi)


@dataclass(frozen=True)
class SpectralReport:
    gap: float
    left_gap: float
    min_eigenvalue: float
    is_positive_operator: bool
    eigen_summary: np.ndarray = field(repr=False)

    def as_dict(self) -> dict:
        return {"gap": self.gap, "left_gap": self.left_gap,
                "min_eigenvalue": self.min_eigenvalue,
                "is_positive_operator": bool(self.is_positive_operator)}


def spectral_gap(kernel: JointKernelMatrix, cross_check: bool = True) -> SpectralReport:
    """Right/left spectral gaps of a reversible kernel, with a Rayleigh check."""
    eig = symmetrize_and_decompose(kernel)
    values = eig.values
    gap = float(1.0 - values[-2]) if values.size >= 2 else 0.0
    left_gap = float(1.0 + values[0])
    report = SpectralReport(gap=gap, left_gap=left_gap,
                            min_eigenvalue=float(values[0]),
                            is_positive_operator=bool(values[0] >= -POSITIVITY_TOL),
                            eigen_summary=values.copy())
    if cross_check and values.size >= 2:
        # The eigenvector attaining the gap must reproduce it as a Dirichlet
        # quotient E(f) / var(f); guards the similarity transform.
        f = eig.vectors[:, -2] / np.where(eig.sqrt_pi > 0, eig.sqrt_pi, 1.0)
        quotient = _dirichlet_quotient(kernel, f)
        if quotient is not None and abs(quotient - gap) > 1e-8:
            raise NotReversible(
                f"Rayleigh cross-check failed: quotient {quotient} vs gap {gap}")
    return report


def _dirichlet_quotient(kernel: JointKernelMatrix, f: np.ndarray):
    mu = kernel.stationary
    fbar = f - np.dot(mu, f)
    var = float(np.dot(mu, fbar * fbar))
    if var <= 1e-300:
        return None
    return dirichlet_form(kernel, f) / var


def dirichlet_form(kernel: JointKernelMatrix, f) -> float:
    """E(f) = (1/2) sum mu(x) K(x, y) (f(x) - f(y))^2 = <f, (I - K) f>_mu."""
    f = np.asarray(f, dtype=float)
    mu = kernel.stationary
    diff = f[:, None] - f[None, :]
    value = 0.5 * float(np.einsum("i,ij,ij->", mu, kernel.rows, diff * diff))
    inner = float(np.dot(mu * f, f - kernel.rows @ f))
    if abs(value - inner) > 1e-10 * max(1.0, abs(value)):
        raise NotReversible(f"Dirichlet identities disagree: {value} vs {inner}")
    return value


@dataclass(frozen=True)
class VarianceReport:
    var_exact: float
    iact: float
    var_lambda_curve: dict
    is_finite: bool = True
    cesaro_trend: tuple = ()

    def as_dict(self) -> dict:
        return {"var_exact": self.var_exact, "iact": self.iact,
                "is_finite": self.is_finite,
                "var_lambda_curve": dict(self.var_lambda_curve),
                "cesaro_trend": list(self.cesaro_trend)}


def _centered(kernel: JointKernelMatrix, f) -> np.ndarray:
    f = kernel.lift(f) if (callable(f) or np.asarray(f).size == kernel.grid.n_x) \
        else np.asarray(f, dtype=float)
    return f - float(np.dot(kernel.stationary, f))


def asymptotic_variance_exact(kernel: JointKernelMatrix, f,
                              lambda_grid=(0.5, 0.9, 0.99),
                              eig: EigenSystem | None = None) -> VarianceReport:
    """Limiting variance of sqrt(n)-scaled ergodic averages of f under the kernel.

    Solves (I - K) h = fbar on the mean-zero subspace through the spectral
    decomposition and returns 2 <fbar, h> - <fbar, fbar>.  A kernel without a
    right gap gets an infinite-variance flag plus the divergent Cesaro trend.
    """
    fbar = _centered(kernel, f)
    mu = kernel.stationary
    var_pi = float(np.dot(mu, fbar * fbar))
    if eig is None:
        eig = symmetrize_and_decompose(kernel)
    coeff = eig.function_coefficients(fbar)
    weights = coeff * coeff
    values = eig.values
    curve = {lam: var_lambda(kernel, f, lam, eig=eig) for lam in lambda_grid}

    divergent = values >= 1.0 - 1e-12
    relevant = weights > 1e-18 * max(var_pi, 1.0)
    if np.any(relevant & divergent):
        trend = tuple(_cesaro_partial(values, weights, n) for n in (10, 100, 1000))
        return VarianceReport(var_exact=math.inf, iact=math.inf,
                              var_lambda_curve=curve, is_finite=False,
                              cesaro_trend=trend)
    keep = ~divergent
    var = float(np.sum(weights[keep] * (1.0 + values[keep]) / (1.0 - values[keep])))
    iact = var / var_pi if var_pi > 0 else 1.0
    return VarianceReport(var_exact=var, iact=iact, var_lambda_curve=curve)


def _cesaro_partial(values, weights, n):
    """(1/n) E (sum_{k<=n} fbar(X_k))^2 via the spectral representation."""
    ks = np.arange(1, n + 1)
    powers = values[None, :] ** ks[:, None]
    inner = 1.0 + 2.0 * ((n - ks)[:, None] / n * powers).sum(axis=0)
    return float(np.dot(weights, inner))


def var_lambda(kernel: JointKernelMatrix, f, lam: float,
               eig: EigenSystem | None = None) -> float:
    """Resolvent variance <fbar, (I - lam K)^{-1} (I + lam K) fbar>_mu.

    Nondecreasing to the exact asymptotic variance as lam -> 1-.
    """
    if not 0.0 <= lam < 1.0:
        raise ValueError("lambda must lie in [0, 1)")
    fbar = _centered(kernel, f)
    if eig is not None:
        coeff = eig.function_coefficients(fbar)
        vals = eig.values
        return float(np.sum(coeff * coeff * (1.0 + lam * vals) / (1.0 - lam * vals)))
    rhs = fbar + lam * (kernel.rows @ fbar)
    g = np.linalg.solve(np.eye(kernel.size) - lam * kernel.rows, rhs)
    return float(np.dot(kernel.stationary * fbar, g))


def ess_sup_rejection(model: ModelSpec) -> float:
    """max rho(x) over states carrying stationary mass."""
    rho = rejection_vector(model)
    keep = model.pi > ESS_SUP_MASS
    return float(rho[keep].max())


@dataclass(frozen=True)
class SandwichReport:
    gap_marginal: float
    gap_auxiliary: float
    gap_pseudo: float
    gap_check: float
    w_bar: float
    max_rejection: float
    slacks: dict

    @property
    def min_slack(self) -> float:
        return min(self.slacks.values())

    def as_dict(self) -> dict:
        return {"gap_marginal": self.gap_marginal, "gap_auxiliary": self.gap_auxiliary,
                "gap_pseudo": self.gap_pseudo, "gap_check": self.gap_check,
                "w_bar": self.w_bar, "max_rejection": self.max_rejection,
                "slacks": dict(self.slacks)}


def verify_gap_sandwich(model: ModelSpec, family_or_grid, w_bar=None,
                        tol: float = SANDWICH_TOL, raise_on_fail=True,
                        **grid_kw) -> SandwichReport:
    """Ordering of the four kernels' right gaps under bounded weights:

        Gap(aux)    <= Gap(marginal)
        Gap(aux)    >= min(Gap(marginal), 1 - max rho)
        Gap(pseudo) >= Gap(check) >= Gap(aux) / w_bar
    """
    grid = family_or_grid if hasattr(family_or_grid, "x_of") else \
        build_joint_grid(family_or_grid, model.n_states, **grid_kw)
    if w_bar is None:
        w_bar = grid.max_weight
    gap_p = spectral_gap(marginal_kernel_matrix(model)).gap
    gap_aux = spectral_gap(build_joint_matrix(model, grid, "auxiliary")).gap
    gap_pseudo = spectral_gap(build_joint_matrix(model, grid, "pseudo")).gap
    gap_check = spectral_gap(build_joint_matrix(model, grid, "check")).gap
    max_rho = ess_sup_rejection(model)

    slacks = {
        "aux_below_marginal": gap_p - gap_aux,
        "aux_above_floor": gap_aux - min(gap_p, 1.0 - max_rho),
        "pseudo_above_check": gap_pseudo - gap_check,
        "check_above_scaled_aux": gap_check - gap_aux / w_bar,
        "pseudo_above_scaled_aux": gap_pseudo - gap_aux / w_bar,
    }
    report = SandwichReport(gap_marginal=gap_p, gap_auxiliary=gap_aux,
                            gap_pseudo=gap_pseudo, gap_check=gap_check,
                            w_bar=float(w_bar), max_rejection=max_rho, slacks=slacks)
    if raise_on_fail and report.min_slack < -tol:
        raise InequalityViolated(f"gap sandwich violated: {slacks}",
                                 instance=report.as_dict())
    return report


@dataclass(frozen=True)
class VarianceOrderReport:
    var_marginal: float
    var_pseudo: float
    var_check: float
    var_pi: float
    w_bar: float
    slacks: dict

    @property
    def min_slack(self) -> float:
        return min(self.slacks.values())

    def as_dict(self) -> dict:
        return {"var_marginal": self.var_marginal, "var_pseudo": self.var_pseudo,
                "var_check": self.var_check, "var_pi": self.var_pi,
                "w_bar": self.w_bar, "slacks": dict(self.slacks)}


def verify_variance_order(model: ModelSpec, family_or_grid, g, w_bar=None,
                          tol: float = SANDWICH_TOL, refined_lambda=0.999,
                          raise_on_fail=True, **grid_kw) -> VarianceOrderReport:
    """Asymptotic-variance ordering of pseudo vs marginal for g on X:

        var(g, pseudo) >= var(g, marginal)
        var(g, check)  >= var(g, pseudo)
        var(g, pseudo) <= w_bar var(g, marginal) + (w_bar - 1) var_pi(g)

    plus the resolvent-level refinement at lambda = refined_lambda:
        var_lam(g, pseudo) - var_lam(g, marginal) >= lam * [Delta_aux - Delta_pseudo](g_lam)
    with g_lam(x, y) = (phi_lam(x) - phi_lam(y))^2, phi_lam = (I - lam P)^{-1} gbar.
    """
    from .kernels import delta_functionals

    grid = family_or_grid if hasattr(family_or_grid, "x_of") else \
        build_joint_grid(family_or_grid, model.n_states, **grid_kw)
    if w_bar is None:
        w_bar = grid.max_weight
    marg = marginal_kernel_matrix(model)
    pseudo = build_joint_matrix(model, grid, "pseudo")
    check = build_joint_matrix(model, grid, "check")

    gx = np.array([g(x) for x in range(model.n_states)], dtype=float) if callable(g) \
        else np.asarray(g, dtype=float)
    var_m = asymptotic_variance_exact(marg, gx)
    var_p = asymptotic_variance_exact(pseudo, gx)
    var_c = asymptotic_variance_exact(check, gx)
    gbar = gx - float(np.dot(model.pi, gx))
    var_pi = float(np.dot(model.pi, gbar * gbar))

    lam = refined_lambda
    phi = np.linalg.solve(np.eye(model.n_states) - lam * marg.rows, gbar)
    g_lam = (phi[:, None] - phi[None, :]) ** 2
    deltas = delta_functionals(model, grid, g_lam)
    refined_lhs = var_lambda(pseudo, gx, lam) - var_lambda(marg, gx, lam)

    slacks = {
        "pseudo_above_marginal": var_p.var_exact - var_m.var_exact,
        "check_above_pseudo": var_c.var_exact - var_p.var_exact,
        "upper_bound": (w_bar * var_m.var_exact + (w_bar - 1.0) * var_pi
                        - var_p.var_exact),
        "delta_order": deltas.gap,
        "delta_upper_bound": deltas.upper_bound - deltas.gap,
        "refined_lower_bound": refined_lhs - lam * deltas.gap,
    }
    report = VarianceOrderReport(var_marginal=var_m.var_exact,
                                 var_pseudo=var_p.var_exact,
                                 var_check=var_c.var_exact,
                                 var_pi=var_pi, w_bar=float(w_bar), slacks=slacks)
    if raise_on_fail and report.min_slack < -tol:
        raise InequalityViolated(f"variance order violated: {slacks}",
                                 instance=report.as_dict())
    return report


def gap_upper_bound_from_set(kernel: JointKernelMatrix, member_mask) -> float:
    """Gap(K) <= (1 - pi(A))^{-1} (1 - inf_A rho) for any A with pi(A) in (0,1)."""
    mask = np.asarray(member_mask, dtype=bool)
    pa = float(kernel.stationary[mask].sum())
    if not 0.0 < pa < 1.0:
        raise ValueError("set must have stationary mass strictly inside (0, 1)")
    inf_rho = float(kernel.rejection()[mask].min())
    return (1.0 - inf_rho) / (1.0 - pa)


@dataclass(frozen=True)
class GapCollapsePoint:
    cutoff_quantile: float
    max_weight: float
    gap: float
    left_gap: float
    tail_bound: float


def gap_collapse_scan(model: ModelSpec, family: WeightFamily, cutoffs,
                      n_nodes=128, q_lo=1e-6, tail_mass=0.2) -> list:
    """Pseudo-marginal gaps as the weight-grid upper cutoff quantile grows.

    For an unbounded family the gap must trend to zero; each level also
    records the rejection-based upper bound computed on the top tail_mass
    stationary-weight tail set.
    """
    points = []
    for q_hi in cutoffs:
        grid = build_joint_grid(family, model.n_states, n_nodes=n_nodes,
                                q_lo=q_lo, q_hi=q_hi)
        kernel = build_joint_matrix(model, grid, "pseudo")
        report = spectral_gap(kernel)
        order = np.argsort(kernel.grid.w_of)
        cum = np.cumsum(kernel.stationary[order][::-1])
        k = int(np.searchsorted(cum, tail_mass)) + 1
        tail_states = order[::-1][:k]
        mask = np.zeros(kernel.size, dtype=bool)
        mask[tail_states] = True
        points.append(GapCollapsePoint(
            cutoff_quantile=float(q_hi),
            max_weight=float(kernel.grid.max_weight),
            gap=report.gap, left_gap=report.left_gap,
            tail_bound=gap_upper_bound_from_set(kernel, mask)))
    return points

"""Target distributions, proposal kernels and the marginal Metropolis-Hastings chain.

States are integer indices everywhere.  A model is a target pmf ``pi`` on a
finite set together with a row-stochastic proposal matrix ``q``; the marginal
chain accepts a proposed move x -> y with probability min{1, r(x, y)} where

    r(x, y) = pi(y) q(y, x) / (pi(x) q(x, y)).

Grid spaces are discretized up front (midpoint evaluation of a density, rows
renormalized); the matrix builders only accept finite, materialized models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import NonFiniteSpace, UndefinedRatio

DETAILED_BALANCE_TOL = 1e-10
ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class StateSpace:
    """Finite label set or a regular grid (1-D or 2-D) of cell midpoints."""

    kind: str                       # "finite" or "grid"
    labels: tuple = ()
    lower: float = 0.0
    upper: float = 1.0
    points: int = 0
    dimension: int = 1

    @staticmethod
    def finite(labels) -> "StateSpace":
        labels = tuple(labels)
        if len(labels) < 2:
            raise ValueError("finite space needs at least 2 states")
        if len(set(labels)) != len(labels):
            raise ValueError("state ids must be unique")
        return StateSpace(kind="finite", labels=labels)

    @staticmethod
    def grid(lower: float, upper: float, points: int, dimension: int = 1) -> "StateSpace":
        if points < 2:
            raise ValueError("grid needs points >= 2")
        if not upper > lower:
            raise ValueError("grid needs upper > lower")
        if dimension not in (1, 2):
            raise ValueError("grid dimension must be 1 or 2")
        return StateSpace(kind="grid", lower=float(lower), upper=float(upper),
                          points=int(points), dimension=dimension)

    @property
    def n_states(self) -> int:
        if self.kind == "finite":
            return len(self.labels)
        return self.points ** self.dimension

    def midpoints(self) -> np.ndarray:
        """Cell midpoints of a grid space, shape (n_states, dimension)."""
        if self.kind != "grid":
            raise ValueError("midpoints are defined for grid spaces only")
        h = (self.upper - self.lower) / self.points
        axis = self.lower + h * (np.arange(self.points) + 0.5)
        if self.dimension == 1:
            return axis.reshape(-1, 1)
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])


@dataclass(frozen=True)
class TargetDistribution:
    """Normalized pmf over a state space; accepts unnormalized mass."""

    space: StateSpace
    probs: np.ndarray = field(repr=False)
    normalizer: float = 1.0

    @staticmethod
    def from_mass(space: StateSpace, mass) -> "TargetDistribution":
        mass = np.asarray(mass, dtype=float)
        if mass.shape != (space.n_states,):
            raise ValueError(f"mass must have shape ({space.n_states},)")
        if np.any(mass < 0):
            raise ValueError("masses must be nonnegative")
        total = float(mass.sum())
        if total <= 0:
            raise ValueError("at least one mass must be strictly positive")
        probs = mass / total
        probs.setflags(write=False)
        return TargetDistribution(space=space, probs=probs, normalizer=total)

    @staticmethod
    def from_density(space: StateSpace, density: Callable[..., float]) -> "TargetDistribution":
        """Midpoint discretization of an unnormalized density on a grid space."""
        pts = space.midpoints()
        mass = np.array([density(*p) for p in pts], dtype=float)
        return TargetDistribution.from_mass(space, mass)

    def __post_init__(self):
        assert abs(self.probs.sum() - 1.0) <= 1e-12


@dataclass(frozen=True)
class DensityTarget:
    """Unmaterialized density on a grid space; must be discretized for matrix work."""

    space: StateSpace
    density: Callable[..., float]

    def discretized(self) -> TargetDistribution:
        return TargetDistribution.from_density(self.space, self.density)


@dataclass(frozen=True)
class ProposalKernel:
    """Row-stochastic proposal matrix with its construction kind retained."""

    kind: str                       # "independent", "random_walk", "explicit"
    matrix: np.ndarray = field(repr=False)

    @staticmethod
    def independent(dist) -> "ProposalKernel":
        dist = np.asarray(dist, dtype=float)
        if np.any(dist < 0) or abs(dist.sum() - 1.0) > ROW_SUM_TOL:
            raise ValueError("independent proposal must be a probability vector")
        n = dist.size
        matrix = np.tile(dist, (n, 1))
        matrix.setflags(write=False)
        return ProposalKernel(kind="independent", matrix=matrix)

    @staticmethod
    def random_walk(n_states: int, increment: Mapping[int, float]) -> "ProposalKernel":
        """Symmetric increment distribution on integer offsets.

        Proposals that step off the index range are folded into the self-loop,
        which keeps rows stochastic without touching interior dynamics.
        """
        for z, p in increment.items():
            if p < 0:
                raise ValueError("increment probabilities must be nonnegative")
            if abs(increment.get(-z, 0.0) - p) > ROW_SUM_TOL:
                raise ValueError(f"increment must be symmetric: prob({z}) != prob({-z})")
        total = sum(increment.values())
        if abs(total - 1.0) > ROW_SUM_TOL:
            raise ValueError("increment probabilities must sum to 1")
        matrix = np.zeros((n_states, n_states))
        for x in range(n_states):
            for z, p in increment.items():
                y = x + z
                if 0 <= y < n_states:
                    matrix[x, y] += p
                else:
                    matrix[x, x] += p
        matrix.setflags(write=False)
        return ProposalKernel(kind="random_walk", matrix=matrix)

    @staticmethod
    def explicit(matrix) -> "ProposalKernel":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("explicit proposal must be a square matrix")
        if np.any(matrix < 0):
            raise ValueError("proposal entries must be nonnegative")
        if np.max(np.abs(matrix.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
            raise ValueError("every proposal row must sum to 1")
        matrix = matrix.copy()
        matrix.setflags(write=False)
        return ProposalKernel(kind="explicit", matrix=matrix)

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]


def convolved_increment(half: Mapping[int, float]) -> dict:
    """Two-fold convolution of a symmetric half-width increment.

    The resulting step law is the sum of two independent draws from ``half``,
    which makes the discretized random-walk pseudo-marginal operator positive.
    """
    out: dict = {}
    for z1, p1 in half.items():
        for z2, p2 in half.items():
            out[z1 + z2] = out.get(z1 + z2, 0.0) + p1 * p2
    total = sum(out.values())
    return {z: p / total for z, p in out.items()}


def discrete_gaussian_increment(sigma: float, width: int) -> dict:
    """Symmetric discretized centered Gaussian on offsets -width..width."""
    zs = np.arange(-width, width + 1)
    w = np.exp(-0.5 * (zs / sigma) ** 2)
    w = w / w.sum()
    return {int(z): float(p) for z, p in zip(zs, w)}


@dataclass(frozen=True)
class ModelSpec:
    """Target plus proposal on the same finite space."""

    target: TargetDistribution | DensityTarget
    proposal: ProposalKernel

    def __post_init__(self):
        if isinstance(self.target, TargetDistribution):
            if self.proposal.n_states != self.target.space.n_states:
                raise ValueError("target and proposal spaces disagree")

    @property
    def is_finite(self) -> bool:
        return isinstance(self.target, TargetDistribution)

    @property
    def n_states(self) -> int:
        return self.proposal.n_states

    @property
    def pi(self) -> np.ndarray:
        if not self.is_finite:
            raise NonFiniteSpace("target has not been discretized")
        return self.target.probs

    @property
    def q(self) -> np.ndarray:
        return self.proposal.matrix

    def discretized(self) -> "ModelSpec":
        if self.is_finite:
            return self
        return ModelSpec(target=self.target.discretized(), proposal=self.proposal)


def acceptance_ratio(model: ModelSpec, x: int, y: int) -> float:
    """Metropolis ratio r(x, y) = pi(y) q(y, x) / (pi(x) q(x, y))."""
    pi, q = model.pi, model.q
    if pi[x] <= 0.0 or q[x, y] <= 0.0:
        raise UndefinedRatio(f"r({x},{y}) undefined: pi(x)={pi[x]}, q(x,y)={q[x, y]}")
    return float(pi[y] * q[y, x] / (pi[x] * q[x, y]))


def ratio_matrix(model: ModelSpec) -> np.ndarray:
    """r(x, y) for all pairs with q(x, y) > 0; zero-filled where undefined.

    Requires pi > 0 everywhere (states carrying no mass cannot host the chain).
    """
    pi, q = model.pi, model.q
    if np.any(pi <= 0.0):
        raise UndefinedRatio("ratio matrix needs strictly positive target mass")
    num = pi[None, :] * q.T
    den = pi[:, None] * q
    out = np.zeros_like(q)
    np.divide(num, den, out=out, where=den > 0)
    return out


def rejection_probability(model: ModelSpec, x: int) -> float:
    """rho(x) = 1 - sum_y min{1, r(x, y)} q(x, y)."""
    pi, q = model.pi, model.q
    if pi[x] <= 0.0:
        raise UndefinedRatio(f"rho({x}) undefined: pi(x)=0")
    acc = 0.0
    for y in range(model.n_states):
        if q[x, y] <= 0.0:
            continue
        if pi[y] <= 0.0:
            continue                      # proposed mass-0 state: r = 0, never accepted
        r = pi[y] * q[y, x] / (pi[x] * q[x, y])
        acc += min(1.0, r) * q[x, y]
    return min(max(1.0 - acc, 0.0), 1.0)


def rejection_vector(model: ModelSpec) -> np.ndarray:
    r = ratio_matrix(model)
    acc = (np.minimum(1.0, r) * model.q).sum(axis=1)
    return np.clip(1.0 - acc, 0.0, 1.0)


def marginal_move_matrix(model: ModelSpec) -> np.ndarray:
    """Accepted-move part min{1, r(x, y)} q(x, y), self-proposals included."""
    r = ratio_matrix(model)
    return np.minimum(1.0, r) * model.q


def build_marginal_matrix(model: ModelSpec):
    """Exact Metropolis-Hastings transition matrix of the marginal chain.

    Returned as a joint-kernel object with a degenerate single-node weight
    axis so spectral and drift tooling can treat every kernel uniformly.
    """
    if not model.is_finite:
        raise NonFiniteSpace("discretize the model before building matrices")
    from .kernels import marginal_kernel_matrix

    return marginal_kernel_matrix(model)

"""Per-state weight distributions Q_x: nonnegative, mean-one noise models.

Every family exposes moment oracles, exact sampling, sampling from the tilted
law pi_x(dw) = w Q_x(dw), and a projection onto finite weight grids used by
the exact matrix builders.  Discrete kinds are exact end to end; lognormal
and gamma use closed-form moments and are projected onto geometric grids
whose masses are exponentially tilted so the grid keeps mean one exactly.

Parameters may vary with the state: anywhere a parameter is accepted it may
be a scalar, a mapping ``state -> value`` or a callable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special, stats

from .errors import SupportExplosion

MEAN_ONE_TOL = 1e-10
ATOM_BUDGET = 4096
ATOM_MERGE_REL = 1e-12


def _resolve(param, x):
    if callable(param):
        return param(x)
    if isinstance(param, dict):
        return param[x]
    return param


def _merge_atoms(values: np.ndarray, probs: np.ndarray):
    """Sort atoms and merge values that coincide up to relative rounding."""
    order = np.argsort(values)
    values, probs = values[order], probs[order]
    scale = max(abs(values[0]), abs(values[-1]), 1.0)
    out_v, out_p = [values[0]], [probs[0]]
    for v, p in zip(values[1:], probs[1:]):
        if v - out_v[-1] <= ATOM_MERGE_REL * scale:
            out_p[-1] += p
        else:
            out_v.append(v)
            out_p.append(p)
    return np.array(out_v), np.array(out_p)


class WeightFamily:
    """Interface shared by all weight-distribution kinds."""

    kind: str = "abstract"
    is_discrete = False

    # -- discrete support ---------------------------------------------------
    def atoms(self, x):
        """(values, probs) when the law at state x is discrete, else None."""
        return None

    # -- sampling -----------------------------------------------------------
    def sample(self, x, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def sample_tilted(self, x, rng: np.random.Generator, size=None):
        """Draw from pi_x(dw) = w Q_x(dw)."""
        raise NotImplementedError

    # -- moments ------------------------------------------------------------
    def moment(self, x, exponent: float) -> float:
        """E[W_x^exponent]; returns math.inf when the moment diverges."""
        raise NotImplementedError

    def mean_abs_dev_one(self, x) -> float:
        """E|W_x - 1| including any mass at zero."""
        raise NotImplementedError

    def variance(self, x) -> float:
        m2 = self.moment(x, 2.0)
        return m2 - 1.0 if math.isfinite(m2) else math.inf

    def phi_moment(self, x, phi: Callable[[float], float]) -> float:
        """E[phi(W_x)] for a scalar test function (exact on discrete kinds)."""
        at = self.atoms(x)
        if at is not None:
            v, p = at
            return float(sum(pi * phi(vi) for vi, pi in zip(v, p)))
        nodes, masses = self.project(x, n_nodes=4096, q_lo=1e-10, q_hi=1 - 1e-10)
        return float(sum(m * phi(v) for v, m in zip(nodes, masses)))

    # -- grid projection ----------------------------------------------------
    def project(self, x, n_nodes=128, q_lo=1e-6, q_hi=1 - 1e-6):
        """Positive-support (nodes, masses) representation at state x.

        Discrete kinds return their positive atoms exactly (the zero atom is
        dropped; it can never be accepted and carries no tilted mass, so the
        probabilities may sum to less than one).  Continuous kinds project
        onto a log-uniform grid between the given quantiles and renormalize
        via a one-parameter exponential tilt so the grid mean is exactly one.
        """
        at = self.atoms(x)
        if at is None:
            raise NotImplementedError
        v, p = at
        keep = v > 0
        return v[keep], p[keep]

    @property
    def max_weight(self):
        """Essential sup of the weights over all states, inf when unbounded."""
        return math.inf

    def valid_at(self, x) -> None:
        """Raise if the family parameters are invalid at state x."""
        self.moment(x, 1.0)


def _check_mean_one(values, probs, where):
    mean = float(np.dot(values, probs))
    if abs(mean - 1.0) > MEAN_ONE_TOL:
        raise ValueError(f"{where}: weights must have mean one, got {mean}")
    if np.any(values < 0):
        raise ValueError(f"{where}: weight values must be nonnegative")
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
        raise ValueError(f"{where}: probabilities must be a distribution")


class _DiscreteBase(WeightFamily):
    is_discrete = True

    def sample(self, x, rng, size=None):
        v, p = self.atoms(x)
        if len(v) == 1:
            return v[0] if size is None else np.full(size, v[0])
        idx = rng.choice(len(v), size=size, p=p)
        return v[idx]

    def sample_tilted(self, x, rng, size=None):
        v, p = self.atoms(x)
        tilt = v * p
        if len(v) == 1:
            return v[0] if size is None else np.full(size, v[0])
        idx = rng.choice(len(v), size=size, p=tilt / tilt.sum())
        return v[idx]

    def moment(self, x, exponent):
        v, p = self.atoms(x)
        if exponent == 0.0:
            return 1.0
        if exponent < 0 and np.any((v == 0) & (p > 0)):
            return math.inf
        keep = p > 0
        return float(np.dot(np.power(v[keep], exponent), p[keep]))

    def mean_abs_dev_one(self, x):
        v, p = self.atoms(x)
        return float(np.dot(np.abs(v - 1.0), p))


@dataclass(frozen=True)
class ConstantOne(_DiscreteBase):
    """Degenerate noiseless family: W_x = 1 almost surely."""

    kind = "constant_one"

    def atoms(self, x):
        return np.array([1.0]), np.array([1.0])

    def sample(self, x, rng, size=None):
        # Consumes no randomness so constant-weight samplers trace the
        # marginal chain path for path identical seeds.
        return 1.0 if size is None else np.ones(size)

    def sample_tilted(self, x, rng, size=None):
        return self.sample(x, rng, size)

    @property
    def max_weight(self):
        return 1.0


@dataclass(frozen=True)
class TwoPoint(_DiscreteBase):
    """Two atoms {low, high} with high forced by the mean-one constraint."""

    kind = "two_point"
    low: object = 0.5
    p_low: object = 0.8

    def params(self, x):
        low = float(_resolve(self.low, x))
        p_low = float(_resolve(self.p_low, x))
        if not (0.0 <= low < 1.0):
            raise ValueError("two_point low must lie in [0, 1)")
        if not (0.0 < p_low < 1.0):
            raise ValueError("two_point p_low must lie in (0, 1)")
        high = (1.0 - p_low * low) / (1.0 - p_low)
        return low, high, p_low

    def atoms(self, x):
        low, high, p_low = self.params(x)
        return np.array([low, high]), np.array([p_low, 1.0 - p_low])

    @property
    def max_weight(self):
        if callable(self.low) or callable(self.p_low):
            return math.inf
        low, high, _ = self.params(0)
        return high


@dataclass(frozen=True)
class DiscreteAtoms(_DiscreteBase):
    """Explicit finite support; must already satisfy mean one."""

    kind = "discrete"
    values: tuple = ()
    probs: tuple = ()

    @staticmethod
    def from_atoms(values, probs, rescale=False) -> "DiscreteAtoms":
        v = np.asarray(values, dtype=float)
        p = np.asarray(probs, dtype=float)
        if rescale:
            v = v / np.dot(v, p)
        _check_mean_one(v, p, "discrete family")
        return DiscreteAtoms(values=tuple(v), probs=tuple(p))

    def atoms(self, x):
        return np.asarray(self.values), np.asarray(self.probs)

    @property
    def max_weight(self):
        return max(self.values)


@dataclass(frozen=True)
class StateAtoms(_DiscreteBase):
    """State-indexed finite supports: ``atom_map[x] = (values, probs)``.

    States missing from the map fall back to the unit point mass.
    """

    kind = "discrete"
    atom_map: object = None          # mapping or callable x -> (values, probs)

    def atoms(self, x):
        if callable(self.atom_map):
            pair = self.atom_map(x)
        else:
            pair = self.atom_map.get(x)
        if pair is None:
            return np.array([1.0]), np.array([1.0])
        v, p = np.asarray(pair[0], dtype=float), np.asarray(pair[1], dtype=float)
        _check_mean_one(v, p, f"state {x} atoms")
        return v, p

    @property
    def max_weight(self):
        if callable(self.atom_map):
            return math.inf
        top = 1.0
        for v, _ in self.atom_map.values():
            top = max(top, max(v))
        return top


@dataclass(frozen=True)
class LogNormal(WeightFamily):
    """W = exp(sigma Z - sigma^2 / 2), mean one for every sigma > 0."""

    kind = "lognormal"
    sigma: object = 1.0

    def _sigma(self, x):
        s = float(_resolve(self.sigma, x))
        if s <= 0:
            raise ValueError("lognormal sigma must be positive")
        return s

    def sample(self, x, rng, size=None):
        s = self._sigma(x)
        return np.exp(s * rng.standard_normal(size) - 0.5 * s * s)

    def sample_tilted(self, x, rng, size=None):
        # Tilting by w shifts the log-mean up by sigma^2.
        s = self._sigma(x)
        return np.exp(s * rng.standard_normal(size) + 0.5 * s * s)

    def moment(self, x, exponent):
        s = self._sigma(x)
        return float(np.exp(0.5 * exponent * (exponent - 1.0) * s * s))

    def mean_abs_dev_one(self, x):
        s = self._sigma(x)
        return float(4.0 * stats.norm.cdf(0.5 * s) - 2.0)

    def _quantile(self, x, q):
        s = self._sigma(x)
        return float(np.exp(s * stats.norm.ppf(q) - 0.5 * s * s))

    def _cdf(self, x, w):
        s = self._sigma(x)
        return stats.norm.cdf((np.log(w) + 0.5 * s * s) / s)

    def _partial_mean_below(self, x, w):
        # E[W 1{W <= w}] in closed form (mean-one parameterization).
        s = self._sigma(x)
        return stats.norm.cdf((np.log(w) + 0.5 * s * s) / s - s)

    def project(self, x, n_nodes=128, q_lo=1e-6, q_hi=1 - 1e-6):
        return _project_continuous(self, x, n_nodes, q_lo, q_hi)


@dataclass(frozen=True)
class GammaShape(WeightFamily):
    """Gamma(shape, scale = 1/shape): mean one, variance 1/shape."""

    kind = "gamma"
    shape: object = 2.0

    def _shape(self, x):
        k = float(_resolve(self.shape, x))
        if k <= 0:
            raise ValueError("gamma shape must be positive")
        return k

    def sample(self, x, rng, size=None):
        k = self._shape(x)
        return rng.gamma(k, 1.0 / k, size)

    def sample_tilted(self, x, rng, size=None):
        # w * Gamma(k, 1/k) density is Gamma(k + 1, 1/k).
        k = self._shape(x)
        return rng.gamma(k + 1.0, 1.0 / k, size)

    def moment(self, x, exponent):
        k = self._shape(x)
        if exponent <= -k:
            return math.inf
        return float(np.exp(special.gammaln(k + exponent) - special.gammaln(k)
                            - exponent * np.log(k)))

    def mean_abs_dev_one(self, x):
        k = self._shape(x)
        return float(2.0 * (stats.gamma.cdf(1.0, k, scale=1.0 / k)
                            - stats.gamma.cdf(1.0, k + 1.0, scale=1.0 / k)))

    def _quantile(self, x, q):
        k = self._shape(x)
        return float(stats.gamma.ppf(q, k, scale=1.0 / k))

    def _cdf(self, x, w):
        k = self._shape(x)
        return stats.gamma.cdf(w, k, scale=1.0 / k)

    def _partial_mean_below(self, x, w):
        # E[W 1{W <= w}] = F_{shape+1}(w) for the unit-mean parameterization.
        k = self._shape(x)
        return stats.gamma.cdf(w, k + 1.0, scale=1.0 / k)

    def project(self, x, n_nodes=128, q_lo=1e-6, q_hi=1 - 1e-6):
        return _project_continuous(self, x, n_nodes, q_lo, q_hi)


@dataclass(frozen=True)
class Averaged(WeightFamily):
    """Mean of N iid draws from a base family.

    Discrete bases convolve exactly (subject to the atom budget); continuous
    bases are first projected onto a fine grid and then convolved, which
    keeps mean one exactly but is a controlled approximation of the law.
    """

    kind = "averaged"
    base: WeightFamily = None
    n: int = 1
    atom_budget: int = ATOM_BUDGET
    strict: bool = False
    is_discrete = True

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("averaging order N must be >= 1")

    def atoms(self, x):
        base_atoms = self.base.atoms(x)
        if base_atoms is None:
            base_atoms = self.base.project(x, n_nodes=256, q_lo=1e-8, q_hi=1 - 1e-8)
        v, p = base_atoms
        sv, sp = np.asarray(v, dtype=float), np.asarray(p, dtype=float)
        for _ in range(self.n - 1):
            sv = (sv[:, None] + v[None, :]).ravel()
            sp = (sp[:, None] * p[None, :]).ravel()
            sv, sp = _merge_atoms(sv, sp)
            if sv.size > self.atom_budget:
                if self.strict:
                    raise SupportExplosion(
                        f"averaging produced {sv.size} atoms (budget {self.atom_budget})")
                sv, sp = _thin_atoms(sv, sp, self.atom_budget)
        return sv / self.n, sp

    def sample(self, x, rng, size=None):
        if size is None:
            return float(np.mean(self.base.sample(x, rng, size=self.n)))
        draws = self.base.sample(x, rng, size=(int(size), self.n))
        return draws.mean(axis=1)

    def sample_tilted(self, x, rng, size=None):
        v, p = self.atoms(x)
        tilt = v * p
        idx = rng.choice(len(v), size=size, p=tilt / tilt.sum())
        return v[idx]

    def moment(self, x, exponent):
        v, p = self.atoms(x)
        if exponent < 0 and np.any((v == 0) & (p > 0)):
            return math.inf
        keep = p > 0
        return float(np.dot(np.power(v[keep], exponent), p[keep]))

    def mean_abs_dev_one(self, x):
        v, p = self.atoms(x)
        return float(np.dot(np.abs(v - 1.0), p))

    @property
    def max_weight(self):
        return self.base.max_weight


def _thin_atoms(values, probs, budget):
    """Project an oversized atom set onto a geometric grid of `budget` nodes."""
    pos = values > 0
    zero_mass = probs[~pos].sum()
    v, p = values[pos], probs[pos]
    nodes = np.geomspace(v.min(), v.max(), budget - (1 if zero_mass > 0 else 0))
    masses = _bin_masses(v, p, nodes)
    masses = _tilt_to_mean(nodes, masses, target_mean=float(np.dot(v, p)))
    if zero_mass > 0:
        nodes = np.concatenate([[0.0], nodes])
        masses = np.concatenate([[zero_mass], masses * (1.0 - zero_mass)])
    return nodes, masses


def _bin_masses(values, probs, nodes):
    """Assign each atom's mass to the nearest grid node (log distance)."""
    idx = np.searchsorted(nodes, values)
    idx = np.clip(idx, 1, len(nodes) - 1)
    left, right = nodes[idx - 1], nodes[idx]
    take_left = (values - left) <= (right - values)
    idx = np.where(take_left, idx - 1, idx)
    masses = np.zeros(len(nodes))
    np.add.at(masses, idx, probs)
    return masses


def _tilt_to_mean(nodes, masses, target_mean=1.0):
    """Exponentially tilt grid masses so the grid mean matches target_mean.

    Solves for theta in m_j ~ m_j * exp(theta * w_j); the tilted mean is
    strictly increasing in theta so a bracketed root always exists for
    targets inside the support range.
    """
    masses = masses / masses.sum()
    scale = max(abs(nodes).max(), 1.0)

    def mean_at(theta):
        logw = np.log(np.maximum(masses, 1e-300)) + theta * nodes / scale
        logw -= logw.max()
        w = np.exp(logw)
        w /= w.sum()
        return float(np.dot(nodes, w)) - target_mean

    if abs(mean_at(0.0)) < 1e-14:
        return masses
    lo, hi = -1.0, 1.0
    while mean_at(lo) > 0:
        lo *= 2.0
        if lo < -1e8:
            raise ValueError("cannot tilt grid to the requested mean")
    while mean_at(hi) < 0:
        hi *= 2.0
        if hi > 1e8:
            raise ValueError("cannot tilt grid to the requested mean")
    theta = optimize.brentq(mean_at, lo, hi, xtol=1e-15, rtol=8.9e-16, maxiter=200)
    logw = np.log(np.maximum(masses, 1e-300)) + theta * nodes / scale
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


def _project_continuous(family, x, n_nodes, q_lo, q_hi, tilt=True):
    """Geometric-cell projection with per-cell conditional means as nodes.

    Placing the node at E[W | cell] makes the raw grid mean equal the exact
    partial expectation E[W; (lo, hi)], so only the truncated tails perturb
    mean one before the final exponential tilt removes even those.
    """
    lo = family._quantile(x, q_lo)
    hi = family._quantile(x, q_hi)
    geom = np.geomspace(lo, hi, n_nodes)
    edges = np.sqrt(geom[:-1] * geom[1:])
    cdf_vals = np.concatenate([[0.0], family._cdf(x, edges), [1.0]])
    masses = np.diff(cdf_vals)
    partial = np.concatenate([[0.0], family._partial_mean_below(x, edges), [1.0]])
    cell_mean = np.diff(partial)
    nodes = np.where(masses > 1e-300, cell_mean / np.maximum(masses, 1e-300), geom)
    nodes = np.maximum.accumulate(np.maximum(nodes, 1e-300))
    keep = masses > 0
    nodes, masses = nodes[keep], masses[keep]
    if np.any(np.diff(nodes) <= 0):
        nodes, masses = _merge_atoms(nodes, masses)
    if tilt:
        masses = _tilt_to_mean(nodes, masses, target_mean=1.0)
    return nodes, masses


@dataclass(frozen=True)
class WeightGrid:
    """Shared positive nodes with one mass vector per state (mean one each)."""

    nodes: np.ndarray
    masses_of_x: np.ndarray       # shape (n_states, n_nodes)

    def __post_init__(self):
        if np.any(self.nodes <= 0) or np.any(np.diff(self.nodes) <= 0):
            raise ValueError("grid nodes must be positive and increasing")
        sums = self.masses_of_x.sum(axis=1)
        if np.any(self.masses_of_x < 0) or np.max(np.abs(sums - 1.0)) > 1e-10:
            raise ValueError("grid masses must be distributions per state")
        means = self.masses_of_x @ self.nodes
        if np.max(np.abs(means - 1.0)) > 1e-8:
            raise ValueError("grid projection must preserve mean one")

    @property
    def n_states(self):
        return self.masses_of_x.shape[0]


def project_family(family: WeightFamily, n_states: int, n_nodes=128,
                   q_lo=1e-6, q_hi=1 - 1e-6) -> WeightGrid:
    """Project a continuous family onto one shared log-uniform node set."""
    los = [family._quantile(x, q_lo) for x in range(n_states)]
    his = [family._quantile(x, q_hi) for x in range(n_states)]
    nodes = np.geomspace(min(los), max(his), n_nodes)
    edges = np.sqrt(nodes[:-1] * nodes[1:])
    rows = []
    for x in range(n_states):
        cdf_vals = np.concatenate([[0.0], family._cdf(x, edges), [1.0]])
        rows.append(_tilt_to_mean(nodes, np.diff(cdf_vals), 1.0))
    return WeightGrid(nodes=nodes, masses_of_x=np.array(rows))


# -- module-level operations ----------------------------------------------

def sample_weight(family: WeightFamily, x, rng: np.random.Generator, size=None):
    """Draw from Q_x using the supplied generator."""
    return family.sample(x, rng, size=size)


def weight_moment(family: WeightFamily, x, exponent: float) -> float:
    """E[W_x^exponent]; divergence is reported as math.inf, not an error."""
    return family.moment(x, exponent)


def averaged_family(base: WeightFamily, n: int, atom_budget=ATOM_BUDGET,
                    strict=False) -> WeightFamily:
    """Family of the running mean of n iid base draws (mean one preserved)."""
    if n == 1:
        return base
    return Averaged(base=base, n=n, atom_budget=atom_budget, strict=strict)


def tilted_measure(family: WeightFamily, x, n_nodes=128, q_lo=1e-6,
                   q_hi=1 - 1e-6):
    """pi_x over the family's positive nodes: (nodes, tilted masses)."""
    nodes, masses = family.project(x, n_nodes=n_nodes, q_lo=q_lo, q_hi=q_hi)
    return nodes, nodes * masses


def uniform_integrability_bound(family: WeightFamily, phi: Callable[[float], float],
                                states: Sequence):
    """sup_x E[phi(W_x)] over the supplied states, with the tail envelope.

    Returns (M_W, a) where a(w) = M_W * w / phi(w) dominates the tail mass
    sup_x E[W 1{W >= w}] and decays to zero for superlinear convex phi.
    """
    m_w = max(family.phi_moment(x, phi) for x in states)

    def a(w):
        return m_w * w / phi(w)

    return m_w, a

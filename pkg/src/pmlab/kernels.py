"""Exact joint kernels on the product of states and weight nodes.

Four reversible kernels share the grid:

    marginal   exact-density Metropolis-Hastings lifted to a one-node weight axis
    pseudo     accepts with min{1, r(x, y) u / w}, weight refreshed from Q_y
    auxiliary  accepts with the marginal min{1, r(x, y)}, weight refreshed
               from the tilted law pi_y; coincides with the marginal chain in x
    check      accepts with the product min{1, r(x, y)} min{1, u / w}

plus the lazy mixture eps * I + (1 - eps) * base.  Stationary vectors come
from the closed form pi(x) pi_x(w) and are verified as left fixed points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import AsymmetricG, GridTooLarge
from .targets import ModelSpec, marginal_move_matrix, ratio_matrix
from .weights import WeightFamily, WeightGrid

ENTRY_BUDGET = 40_000_000
STATIONARY_TOL = 1e-10
DETAILED_BALANCE_TOL = 1e-9

KERNEL_KINDS = ("marginal", "pseudo", "auxiliary", "check", "lazy")


@dataclass(frozen=True)
class JointState:
    """A point (x, w) of the product space; w strictly positive."""

    x: int
    w: float

    def __post_init__(self):
        if self.w <= 0:
            raise ValueError("weight coordinate must be positive")


@dataclass(frozen=True)
class JointGrid:
    """Per-state positive weight nodes, ordered x-major then w-minor.

    ``q_mass`` holds Q_x at each node; per state these may sum to less than
    one when Q_x carries an atom at zero (which can never be accepted and
    has no tilted mass).  ``tilted`` = w * Q_x(w) sums to one per state.
    """

    n_x: int
    x_of: np.ndarray = field(repr=False)
    w_of: np.ndarray = field(repr=False)
    q_mass: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.x_of.size

    def nodes_at(self, x: int):
        a, b = self.offsets[x], self.offsets[x + 1]
        return self.w_of[a:b], self.q_mass[a:b]

    @property
    def tilted(self) -> np.ndarray:
        return self.w_of * self.q_mass

    def index_of(self, x: int, w: float) -> int:
        a, b = self.offsets[x], self.offsets[x + 1]
        block = self.w_of[a:b]
        j = int(np.argmin(np.abs(block - w)))
        if not math.isclose(block[j], w, rel_tol=1e-9, abs_tol=0.0):
            raise KeyError(f"weight {w} is not a node of state {x}")
        return int(a + j)

    @property
    def max_weight(self) -> float:
        return float(self.w_of.max())


def build_joint_grid(family_or_grid, n_states: int, n_nodes=128,
                     q_lo=1e-6, q_hi=1 - 1e-6) -> JointGrid:
    """Materialize the weight axis of a family (or reuse a WeightGrid)."""
    xs, ws, qs, offsets = [], [], [], [0]
    if isinstance(family_or_grid, WeightGrid):
        grid = family_or_grid
        for x in range(n_states):
            xs.extend([x] * grid.nodes.size)
            ws.extend(grid.nodes)
            qs.extend(grid.masses_of_x[x])
            offsets.append(offsets[-1] + grid.nodes.size)
    else:
        family: WeightFamily = family_or_grid
        for x in range(n_states):
            nodes, masses = family.project(x, n_nodes=n_nodes, q_lo=q_lo, q_hi=q_hi)
            xs.extend([x] * nodes.size)
            ws.extend(nodes)
            qs.extend(masses)
            offsets.append(offsets[-1] + nodes.size)
    return JointGrid(n_x=n_states,
                     x_of=np.asarray(xs, dtype=np.int64),
                     w_of=np.asarray(ws, dtype=float),
                     q_mass=np.asarray(qs, dtype=float),
                     offsets=np.asarray(offsets, dtype=np.int64))


def degenerate_grid(n_states: int) -> JointGrid:
    """Single node w = 1 per state: the weight axis of the marginal chain."""
    from .weights import ConstantOne

    return build_joint_grid(ConstantOne(), n_states)


@dataclass(frozen=True)
class JointKernelMatrix:
    """Row-stochastic kernel over a joint grid with its stationary vector.

    ``self_move`` is the accepted-move mass that lands back on the same grid
    point, so the rejection probability is the diagonal surplus
    ``rows.diagonal() - self_move``.
    """

    kind: str
    rows: np.ndarray = field(repr=False)
    stationary: np.ndarray = field(repr=False)
    grid: JointGrid
    self_move: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.rows.shape[0]

    def rejection(self) -> np.ndarray:
        return np.clip(self.rows.diagonal() - self.self_move, 0.0, 1.0)

    def move_matrix(self) -> np.ndarray:
        moves = self.rows.copy()
        np.fill_diagonal(moves, self.self_move)
        return moves

    def detailed_balance_residual(self) -> float:
        flux = self.stationary[:, None] * self.rows
        return float(np.max(np.abs(flux - flux.T)))

    def stationarity_residual(self) -> float:
        return float(np.abs(self.stationary @ self.rows - self.stationary).sum())

    def lift(self, g: Callable[[int], float] | np.ndarray) -> np.ndarray:
        """Evaluate a function of x alone on every joint grid point."""
        if callable(g):
            gx = np.array([g(x) for x in range(self.grid.n_x)], dtype=float)
        else:
            gx = np.asarray(g, dtype=float)
        return gx[self.grid.x_of]

    def x_marginal(self, vec: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.n_x)
        np.add.at(out, self.grid.x_of, vec)
        return out


def _stationary_vector(model: ModelSpec, grid: JointGrid) -> np.ndarray:
    return model.pi[grid.x_of] * grid.tilted


def _acceptance_matrix(model: ModelSpec, grid: JointGrid, kind: str) -> np.ndarray:
    """Acceptance probability for a move (x, w) -> (y, u), all joint pairs."""
    r = ratio_matrix(model)
    r_pair = r[grid.x_of[:, None], grid.x_of[None, :]]
    if kind == "pseudo":
        return np.minimum(1.0, r_pair * (grid.w_of[None, :] / grid.w_of[:, None]))
    if kind == "check":
        return (np.minimum(1.0, r_pair)
                * np.minimum(1.0, grid.w_of[None, :] / grid.w_of[:, None]))
    if kind == "auxiliary":
        return np.minimum(1.0, r_pair)
    raise ValueError(f"unknown kernel kind {kind!r}")


def build_joint_matrix(model: ModelSpec, family_or_grid, kind: str,
                       lazy_eps: float | None = None, n_nodes=128,
                       q_lo=1e-6, q_hi=1 - 1e-6,
                       entry_budget=ENTRY_BUDGET) -> JointKernelMatrix:
    """Exact transition matrix of the requested kernel on the product grid."""
    if kind == "lazy":
        base = build_joint_matrix(model, family_or_grid, "pseudo",
                                  n_nodes=n_nodes, q_lo=q_lo, q_hi=q_hi,
                                  entry_budget=entry_budget)
        return lazy_kernel(base, lazy_eps if lazy_eps is not None else 0.5)
    if kind == "marginal":
        return marginal_kernel_matrix(model)
    if kind not in ("pseudo", "auxiliary", "check"):
        raise ValueError(f"unknown kernel kind {kind!r}")

    if isinstance(family_or_grid, JointGrid):
        grid = family_or_grid
    else:
        grid = build_joint_grid(family_or_grid, model.n_states,
                                n_nodes=n_nodes, q_lo=q_lo, q_hi=q_hi)
    m = grid.size
    if m * m > entry_budget:
        raise GridTooLarge(f"{m}x{m} joint matrix exceeds {entry_budget} entries")

    q_pair = model.q[grid.x_of[:, None], grid.x_of[None, :]]
    if kind == "auxiliary":
        proposal_mass = grid.tilted[None, :]
    else:
        proposal_mass = grid.q_mass[None, :]
    moves = q_pair * proposal_mass * _acceptance_matrix(model, grid, kind)

    rows = moves.copy()
    diag = np.arange(m)
    rejection = np.clip(1.0 - moves.sum(axis=1), 0.0, 1.0)
    rows[diag, diag] += rejection
    return JointKernelMatrix(kind=kind, rows=rows,
                             stationary=_stationary_vector(model, grid),
                             grid=grid, self_move=moves[diag, diag])


def marginal_kernel_matrix(model: ModelSpec) -> JointKernelMatrix:
    """Marginal Metropolis-Hastings matrix on the degenerate joint grid."""
    moves = marginal_move_matrix(model)
    rows = moves.copy()
    n = model.n_states
    diag = np.arange(n)
    rows[diag, diag] += np.clip(1.0 - moves.sum(axis=1), 0.0, 1.0)
    grid = degenerate_grid(n)
    return JointKernelMatrix(kind="marginal", rows=rows, stationary=model.pi.copy(),
                             grid=grid, self_move=moves[diag, diag])


def lazy_kernel(base: JointKernelMatrix, eps: float) -> JointKernelMatrix:
    """eps * I + (1 - eps) * base; restores a left gap at the cost of movement."""
    if not 0.0 < eps < 1.0:
        raise ValueError("laziness eps must lie in (0, 1)")
    rows = (1.0 - eps) * base.rows
    rows[np.arange(base.size), np.arange(base.size)] += eps
    return JointKernelMatrix(kind="lazy", rows=rows, stationary=base.stationary,
                             grid=base.grid, self_move=(1.0 - eps) * base.self_move)


# -- single-step samplers ---------------------------------------------------

def _proposal_cumsums(model: ModelSpec):
    return [np.cumsum(row) for row in model.q]


def _weight_sampler(family: WeightFamily, n_states: int, tilted: bool):
    """Per-state scalar sampler from Q_x (or the tilted law) with atom tables
    precomputed so chains can take millions of steps."""
    from .weights import ConstantOne

    if isinstance(family, ConstantOne):
        return lambda x, rng: 1.0
    if family.is_discrete:
        tables = []
        for x in range(n_states):
            values, probs = family.atoms(x)
            weights = values * probs if tilted else probs
            cum = np.cumsum(weights)
            tables.append((values, cum / cum[-1]))
        def draw(x, rng):
            values, cum = tables[x]
            return float(values[np.searchsorted(cum, rng.random(), side="right")])
        return draw
    if tilted:
        return lambda x, rng: float(family.sample_tilted(x, rng))
    return lambda x, rng: float(family.sample(x, rng))


def pseudo_stepper(model: ModelSpec, family: WeightFamily):
    """Closure computing one noisy transition: propose y ~ q(x, .), u ~ Q_y,
    accept with min{1, r(x, y) u / w}."""
    q_cum = _proposal_cumsums(model)
    r = ratio_matrix(model)
    draw = _weight_sampler(family, model.n_states, tilted=False)

    def step(current: JointState, rng: np.random.Generator):
        x, w = current.x, current.w
        y = int(np.searchsorted(q_cum[x], rng.random(), side="right"))
        u = draw(y, rng)
        accept_prob = min(1.0, r[x, y] * u / w) if u > 0 else 0.0
        if rng.random() < accept_prob:
            return JointState(y, u), True
        return current, False

    return step


def auxiliary_stepper(model: ModelSpec, family: WeightFamily):
    """Closure computing one weight-refresh transition: accept y with the
    marginal probability, then draw the new weight from the tilted law."""
    q_cum = _proposal_cumsums(model)
    r = ratio_matrix(model)
    draw = _weight_sampler(family, model.n_states, tilted=True)

    def step(current: JointState, rng: np.random.Generator):
        x = current.x
        y = int(np.searchsorted(q_cum[x], rng.random(), side="right"))
        if rng.random() < min(1.0, r[x, y]):
            return JointState(y, draw(y, rng)), True
        return current, False

    return step


def marginal_stepper(model: ModelSpec):
    """Closure for the exact-density chain (weight axis pinned at 1)."""
    q_cum = _proposal_cumsums(model)
    r = ratio_matrix(model)

    def step(current: JointState, rng: np.random.Generator):
        x = current.x
        y = int(np.searchsorted(q_cum[x], rng.random(), side="right"))
        if rng.random() < min(1.0, r[x, y]):
            return JointState(y, 1.0), True
        return current, False

    return step


def pseudo_step(model: ModelSpec, family: WeightFamily, current: JointState,
                rng: np.random.Generator):
    return pseudo_stepper(model, family)(current, rng)


def auxiliary_step(model: ModelSpec, family: WeightFamily, current: JointState,
                   rng: np.random.Generator):
    return auxiliary_stepper(model, family)(current, rng)


def marginal_step(model: ModelSpec, current: JointState, rng: np.random.Generator):
    return marginal_stepper(model)(current, rng)


# -- exact functionals -------------------------------------------------------

def mean_acceptance(kernel: JointKernelMatrix) -> float:
    """Stationary expected acceptance probability of the kernel."""
    return float(np.dot(kernel.stationary, 1.0 - kernel.rejection()))


def marginal_mean_acceptance(model: ModelSpec) -> float:
    moves = marginal_move_matrix(model)
    return float(np.dot(model.pi, moves.sum(axis=1)))


def _pair_function(g, n_x: int) -> np.ndarray:
    if callable(g):
        gm = np.array([[g(x, y) for y in range(n_x)] for x in range(n_x)], dtype=float)
    else:
        gm = np.asarray(g, dtype=float)
    if gm.shape != (n_x, n_x):
        raise AsymmetricG(f"g must be {n_x}x{n_x}")
    if np.max(np.abs(gm - gm.T)) > 1e-12:
        raise AsymmetricG("g must be symmetric in (x, y)")
    if np.any(gm < 0):
        raise AsymmetricG("g must be nonnegative")
    return gm


@dataclass(frozen=True)
class DeltaReport:
    delta_auxiliary: float
    delta_pseudo: float
    upper_bound: float

    @property
    def gap(self) -> float:
        return self.delta_auxiliary - self.delta_pseudo


def delta_functionals(model: ModelSpec, grid: JointGrid, g) -> DeltaReport:
    """Stationary-weighted acceptance functionals of a symmetric pair function.

        Delta_aux(g)    = E[min{1, r(X, Y)} g(X, Y)]
        Delta_pseudo(g) = E[min{1, r(X, Y) U / W} g(X, Y)]

    together with the exact difference bound
        Delta_aux - Delta_pseudo <= E_pi[ |W - 1| * sum_y q(x, y) min{1, r} g ].
    """
    gm = _pair_function(g, model.n_states)
    r = ratio_matrix(model)
    acc_marg = np.minimum(1.0, r)
    pi, q = model.pi, model.q

    delta_aux = float(np.einsum("x,xy,xy,xy->", pi, q, acc_marg, gm))

    tilted = grid.tilted
    delta_pseudo = 0.0
    for i in range(grid.size):
        x = int(grid.x_of[i])
        w = grid.w_of[i]
        acc = np.minimum(1.0, r[x][grid.x_of] * grid.w_of / w)
        inner = q[x][grid.x_of] * grid.q_mass * acc * gm[x][grid.x_of]
        delta_pseudo += pi[x] * tilted[i] * inner.sum()

    inner_marg = (q * acc_marg * gm).sum(axis=1)
    dev = np.zeros(model.n_states)
    for x in range(model.n_states):
        a, b = grid.offsets[x], grid.offsets[x + 1]
        dev[x] = np.dot(np.abs(grid.w_of[a:b] - 1.0), grid.q_mass[a:b])
        dev[x] += max(0.0, 1.0 - grid.q_mass[a:b].sum())  # atom at zero: |0 - 1|
    bound = float(np.dot(pi, dev * inner_marg))
    return DeltaReport(delta_auxiliary=delta_aux, delta_pseudo=float(delta_pseudo),
                       upper_bound=bound)


def mean_abs_weight_deviation(model: ModelSpec, family: WeightFamily) -> float:
    """E_pi[ |W_x - 1| ] computed from the family's exact moment oracles."""
    devs = np.array([family.mean_abs_dev_one(x) for x in range(model.n_states)])
    return float(np.dot(model.pi, devs))

"""Chain simulation and Monte Carlo estimation.

Every run is a pure function of (inputs, seed): generators are built from
``np.random.PCG64(seed)`` and never shared.  Autocovariances are estimated by
direct lag sums (no transforms) capped at min(n/50, 1e4), truncated by the
initial-monotone-sequence rule that is valid for reversible chains.
"""

from __future__ import annotations

import bisect
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import TraceTooShort, ZeroGap
from .kernels import JointKernelMatrix, JointState
from .spectral import EigenSystem, symmetrize_and_decompose
from .targets import ModelSpec
from .weights import WeightFamily

LAG_CAP = 10_000
TRACE_RECORD = struct.Struct("<QIdB")     # step, x index, weight, accepted


@dataclass(frozen=True)
class ChainTrace:
    seed: int
    x: np.ndarray = field(repr=False)          # int indices
    w: np.ndarray = field(repr=False)          # float weights
    accepted: np.ndarray = field(repr=False)   # bools; accepted[0] is False
    model_id: str = ""
    family_id: str = ""

    def __post_init__(self):
        if not (len(self.x) == len(self.w) == len(self.accepted)):
            raise ValueError("trace component lengths disagree")

    def __len__(self):
        return len(self.x)


@dataclass(frozen=True)
class EstimatorOutput:
    point: float
    std_error: float
    method: str
    n_effective: float


def draw_stationary(model: ModelSpec, family: WeightFamily,
                    rng: np.random.Generator) -> JointState:
    """Exact draw from pi(x) pi_x(w)."""
    x = int(rng.choice(model.n_states, p=model.pi))
    w = float(family.sample_tilted(x, rng))
    return JointState(x, w)


def run_chain(stepper, init, n: int, seed: int, model_id="", family_id="") -> ChainTrace:
    """Drive any single-step sampler for n steps; deterministic given seed.

    ``stepper(state, rng) -> (state, accepted)``; ``init`` is a JointState or
    a callable ``rng -> JointState`` (e.g. a stationary draw).
    """
    if n < 1:
        raise ValueError("chain length must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    state = init(rng) if callable(init) else init
    xs = np.empty(n, dtype=np.int64)
    ws = np.empty(n, dtype=float)
    acc = np.zeros(n, dtype=bool)
    xs[0], ws[0] = state.x, state.w
    for k in range(1, n):
        state, accepted = stepper(state, rng)
        xs[k], ws[k], acc[k] = state.x, state.w, accepted
    return ChainTrace(seed=seed, x=xs, w=ws, accepted=acc,
                      model_id=model_id, family_id=family_id)


def simulate_kernel_indices(kernel: JointKernelMatrix, n: int, seed: int,
                            init: int | None = None) -> np.ndarray:
    """Fast finite-chain path from an exact transition matrix.

    Start state defaults to a stationary draw.  Returns joint grid indices;
    acceptance flags are not meaningful at matrix level.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    if init is None:
        init = int(rng.choice(kernel.size, p=kernel.stationary / kernel.stationary.sum()))
    cum = np.cumsum(kernel.rows, axis=1)
    cum[:, -1] = 1.0 + 1e-12
    cum_rows = [row.tolist() for row in cum]
    uniforms = rng.random(n - 1).tolist()
    out = np.empty(n, dtype=np.int64)
    out[0] = init
    state = init
    bis = bisect.bisect_right
    for k, u in enumerate(uniforms, start=1):
        state = bis(cum_rows[state], u)
        out[k] = state
    return out


def autocovariances(series: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased (1/n) lag autocovariances by direct sums, lags 0..max_lag."""
    y = np.asarray(series, dtype=float)
    n = y.size
    y = y - y.mean()
    out = np.empty(max_lag + 1)
    for k in range(max_lag + 1):
        out[k] = np.dot(y[: n - k], y[k:]) / n
    return out


def _pair_sums_monotone(series: np.ndarray, lag_cap: int):
    """Adaptive even/odd pair sums with the monotone-sequence correction.

    For a reversible kernel the pair sums G_m = gamma_{2m} + gamma_{2m+1}
    are nonnegative and nonincreasing; estimation stops at the first
    nonpositive pair and enforces monotonicity on the kept ones.
    """
    y = np.asarray(series, dtype=float)
    n = y.size
    y = y - y.mean()
    gamma0 = float(np.dot(y, y) / n)
    if gamma0 <= 0:
        return gamma0, [], 0
    pairs = []
    m = 0
    while 2 * m + 1 <= lag_cap:
        k0, k1 = 2 * m, 2 * m + 1
        g0 = float(np.dot(y[: n - k0], y[k0:]) / n) if k0 > 0 else gamma0
        g1 = float(np.dot(y[: n - k1], y[k1:]) / n)
        pair = g0 + g1
        if pair <= 0:
            break
        if pairs and pair > pairs[-1]:
            pair = pairs[-1]
        pairs.append(pair)
        m += 1
    return gamma0, pairs, m


def estimate_iact(trace_or_series, g=None, lag_cap=None) -> EstimatorOutput:
    """Integrated autocorrelation time by the initial-monotone-sequence rule.

    Returns tau-hat floored at zero (an exactly antithetic chain drives the
    estimator to the floor).  The asymptotic-variance estimate is
    tau-hat * sample variance.
    """
    series = _series_from(trace_or_series, g)
    n = series.size
    if n < 1000:
        raise TraceTooShort(f"need at least 1000 samples, got {n}")
    cap = min(n // 50, LAG_CAP) if lag_cap is None else lag_cap
    gamma0, pairs, m = _pair_sums_monotone(series, cap)
    if gamma0 <= 0:
        return EstimatorOutput(point=0.0, std_error=0.0,
                               method="initial_monotone_sequence", n_effective=float(n))
    sigma2 = max(-gamma0 + 2.0 * sum(pairs), 0.0)
    tau = sigma2 / gamma0
    # Crude large-n error scale for the truncated estimator.
    std_error = tau * np.sqrt((4.0 * m + 2.0) / n) if tau > 0 else 0.0
    n_eff = n / tau if tau > 0 else float(n)
    return EstimatorOutput(point=float(tau), std_error=float(std_error),
                           method="initial_monotone_sequence",
                           n_effective=float(min(n_eff, n)))


def estimate_asymptotic_variance(trace_or_series, g=None, method="initial_monotone_sequence",
                                 n_batches=64) -> EstimatorOutput:
    """sigma^2 = lim n var(mean) estimated by IMS truncation or batch means."""
    series = _series_from(trace_or_series, g)
    n = series.size
    if method == "initial_monotone_sequence":
        out = estimate_iact(series)
        var_pi = float(series.var())
        return EstimatorOutput(point=out.point * var_pi,
                               std_error=out.std_error * var_pi,
                               method=method, n_effective=out.n_effective)
    if method != "batch_means":
        raise ValueError(f"unknown method {method!r}")
    if n < 2 * n_batches:
        raise TraceTooShort(f"need at least {2 * n_batches} samples")
    blen = n // n_batches
    chunks = series[: blen * n_batches].reshape(n_batches, blen)
    means = chunks.mean(axis=1)
    point = blen * float(means.var(ddof=1))
    std_error = point * np.sqrt(2.0 / (n_batches - 1))
    return EstimatorOutput(point=point, std_error=float(std_error),
                           method="batch_means", n_effective=float(n_batches))


def _series_from(trace_or_series, g):
    if isinstance(trace_or_series, ChainTrace):
        if g is None:
            raise ValueError("a function g of the x coordinate is required")
        table = None
        if not callable(g):
            table = np.asarray(g, dtype=float)
        if table is not None:
            return table[trace_or_series.x]
        return np.array([g(int(x)) for x in trace_or_series.x], dtype=float)
    series = np.asarray(trace_or_series, dtype=float)
    if g is not None and callable(g):
        series = np.array([g(v) for v in series], dtype=float)
    return series


# -- tail autocorrelation sums ----------------------------------------------

def tail_autocorr_exact(kernel: JointKernelMatrix, g, n: int,
                        eig: EigenSystem | None = None) -> float:
    """| sum_{k >= n} <gbar, K^k gbar> | from the resolvent on the mean-zero space."""
    if eig is None:
        eig = symmetrize_and_decompose(kernel)
    gbar = kernel.lift(g) if callable(g) or np.asarray(g).size == kernel.grid.n_x \
        else np.asarray(g, dtype=float)
    gbar = gbar - float(np.dot(kernel.stationary, gbar))
    coeff = eig.function_coefficients(gbar)
    weights = coeff * coeff
    values = eig.values
    relevant = weights > 1e-18 * max(float(weights.sum()), 1.0)
    if np.any(relevant & (values >= 1.0 - 1e-12)):
        raise ZeroGap("tail sums need a strictly positive right gap")
    lam = np.where(values >= 1.0 - 1e-15, 0.0, values)
    return float(abs(np.sum(weights * lam ** n / (1.0 - lam))))


def tail_autocorr_sup(kernels_by_n: dict, g, n: int) -> dict:
    """Exact tail sums per accuracy parameter: N -> |sum_{k>=n} autocov|."""
    return {key: tail_autocorr_exact(k, g, n) for key, k in kernels_by_n.items()}


def tail_autocorr_mc(traces, g, n: int, cap: int | None = None) -> float:
    """Monte Carlo tail estimate |sum_{k=n}^{cap} gamma_k| from an ensemble."""
    totals = []
    for trace in traces:
        series = _series_from(trace, g)
        top = min(cap if cap is not None else min(series.size // 50, LAG_CAP),
                  series.size - 1)
        gammas = autocovariances(series, top)
        totals.append(gammas[n: top + 1].sum())
    return float(abs(np.mean(totals)))


# -- accuracy-parameter experiments ------------------------------------------

@dataclass(frozen=True)
class VarianceConvergenceRow:
    n_average: int
    var_pseudo: float
    var_marginal: float
    gap: float
    mean_abs_dev: float


def variance_convergence_experiment(model: ModelSpec, base_family: WeightFamily,
                                    n_list, g, tol=1e-10) -> list:
    """Exact var(g, pseudo_N) against var(g, marginal) for averaged families.

    Returns one row per N; callers assert the approach to the marginal value
    (differences shrinking, every entry above) at their own tolerance.
    """
    from .kernels import build_joint_grid, build_joint_matrix, marginal_kernel_matrix
    from .spectral import asymptotic_variance_exact
    from .weights import averaged_family

    marg = marginal_kernel_matrix(model)
    gx = np.array([g(x) for x in range(model.n_states)], dtype=float) if callable(g) \
        else np.asarray(g, dtype=float)
    var_marg = asymptotic_variance_exact(marg, gx).var_exact
    rows = []
    for n_avg in n_list:
        family = averaged_family(base_family, int(n_avg))
        grid = build_joint_grid(family, model.n_states)
        kernel = build_joint_matrix(model, grid, "pseudo")
        var_p = asymptotic_variance_exact(kernel, gx).var_exact
        from .spectral import spectral_gap
        gap = spectral_gap(kernel).gap
        dev = float(np.dot(model.pi,
                           [family.mean_abs_dev_one(x) for x in range(model.n_states)]))
        rows.append(VarianceConvergenceRow(n_average=int(n_avg), var_pseudo=var_p,
                                           var_marginal=var_marg, gap=gap,
                                           mean_abs_dev=dev))
    return rows


@dataclass(frozen=True)
class TvScanRow:
    n_average: int
    core_mass: float
    sup_core_tv: float
    max_bound_violation: float


def row_tv_distances(pseudo: JointKernelMatrix, auxiliary: JointKernelMatrix) -> np.ndarray:
    """Row-wise total variation  sup_{|f|<=1} |P f - Q f|  = L1 row distance."""
    return np.abs(pseudo.rows - auxiliary.rows).sum(axis=1)


def tv_distance_scan(model: ModelSpec, base_family: WeightFamily, n_list,
                     core_mass=0.95) -> list:
    """Sup over a stationary core set of row TV between pseudo and auxiliary.

    The core set collects joint states by decreasing stationary mass until
    ``core_mass`` is covered.  Each row is also checked against the bound
        TV(x, w) <= 2 |1 - 1/w| + 4 E_q E_Q |1 - U|
    which is valid for w >= 1; rows with w < 1 use the sharper coefficient
    2 (1 + 1/w) on the weight-deviation term.
    """
    from .kernels import build_joint_grid, build_joint_matrix
    from .weights import averaged_family

    rows = []
    for n_avg in n_list:
        family = averaged_family(base_family, int(n_avg))
        grid = build_joint_grid(family, model.n_states)
        pseudo = build_joint_matrix(model, grid, "pseudo")
        aux = build_joint_matrix(model, grid, "auxiliary")
        tv = row_tv_distances(pseudo, aux)

        order = np.argsort(pseudo.stationary)[::-1]
        cum = np.cumsum(pseudo.stationary[order])
        k = int(np.searchsorted(cum, core_mass)) + 1
        core = order[:k]

        dev = np.array([family.mean_abs_dev_one(x) for x in range(model.n_states)])
        q_dev = model.q @ dev
        w = grid.w_of
        coef = np.where(w >= 1.0, 4.0, 2.0 * (1.0 + 1.0 / w))
        bound = 2.0 * np.abs(1.0 - 1.0 / w) + coef * q_dev[grid.x_of]
        rows.append(TvScanRow(n_average=int(n_avg),
                              core_mass=float(cum[k - 1]),
                              sup_core_tv=float(tv[core].max()),
                              max_bound_violation=float(np.max(tv - bound))))
    return rows


# -- trace persistence --------------------------------------------------------

def write_trace_binary(path, trace: ChainTrace) -> None:
    """Fixed little-endian records: u64 step, u32 x index, f64 weight, u8 accepted."""
    with open(path, "wb") as fh:
        for k in range(len(trace)):
            fh.write(TRACE_RECORD.pack(k, int(trace.x[k]), float(trace.w[k]),
                                       int(trace.accepted[k])))


def read_trace_binary(path, seed=0, model_id="", family_id="") -> ChainTrace:
    xs, ws, acc = [], [], []
    with open(path, "rb") as fh:
        while chunk := fh.read(TRACE_RECORD.size):
            _, x, w, a = TRACE_RECORD.unpack(chunk)
            xs.append(x)
            ws.append(w)
            acc.append(bool(a))
    return ChainTrace(seed=seed, x=np.array(xs, dtype=np.int64),
                      w=np.array(ws), accepted=np.array(acc, dtype=bool),
                      model_id=model_id, family_id=family_id)


def write_trace_csv(path, trace: ChainTrace) -> None:
    with open(path, "w") as fh:
        fh.write("step,x,w,accepted\n")
        for k in range(len(trace)):
            fh.write(f"{k},{int(trace.x[k])},{trace.w[k]!r},{int(trace.accepted[k])}\n")

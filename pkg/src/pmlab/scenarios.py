"""Experiment dispatch: from a parsed scenario to reports on disk.

Each runner returns an ExperimentResult (pass flag, summary metrics, CSV
tables, figure payload); ``run_scenario`` executes them (optionally in
parallel), writes ``report.json`` plus one CSV and one PNG per experiment
and maps the outcome to the exit-status contract:

    0  every asserted inequality passed
    1  configuration or I/O error
    2  at least one inequality violated (offending instance serialized)
"""

from __future__ import annotations

import json
import math
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, ScenarioConfig, build_family
from .drift import (DriftSpec, check_imh_drift, check_rwm_drift,
                    check_uniform_marginal_drift, counterexample_ledger,
                    quartic_target, standard_normal_target,
                    verify_unifdrift_condition)
from .engine import tv_distance_scan, variance_convergence_experiment
from .errors import ConfigError, InequalityViolated, PmlabError
from .kernels import (build_joint_grid, build_joint_matrix, delta_functionals,
                      marginal_kernel_matrix, marginal_mean_acceptance,
                      mean_abs_weight_deviation, mean_acceptance)
from .reporting import (config_hash, render_figure, timestamp, write_csv,
                        write_eigenvalues_csv, write_report_json)
from .spectral import (asymptotic_variance_exact, gap_collapse_scan,
                       spectral_gap, verify_gap_sandwich, verify_variance_order)
from .targets import ModelSpec, ProposalKernel, StateSpace, TargetDistribution
from .weights import ConstantOne, DiscreteAtoms, TwoPoint, WeightFamily


@dataclass(frozen=True)
class ExperimentResult:
    name: str
    kind: str
    passed: bool
    metrics: dict
    tables: tuple = ()          # (filename_stem, header, rows)
    figure_data: dict | None = None
    failure: dict | None = None


def _g_function(params, n_states):
    spec = params.get("g", {"kind": "coordinate"})
    kind = spec.get("kind", "coordinate")
    if kind == "coordinate":
        return np.arange(n_states, dtype=float)
    if kind == "indicator":
        g = np.zeros(n_states)
        g[int(spec.get("state", 0))] = 1.0
        return g
    if kind == "values":
        vals = np.asarray(spec.get("values"), dtype=float)
        if vals.size != n_states:
            raise ConfigError(f"g values must have length {n_states}")
        return vals
    raise ConfigError(f"unknown g kind {kind!r}")


# -- runners --------------------------------------------------------------------

def run_spectral_sandwich(model: ModelSpec, family: WeightFamily, params,
                          seed) -> ExperimentResult:
    grid = build_joint_grid(family, model.n_states,
                            n_nodes=int(params.get("n_nodes", 128)))
    report = verify_gap_sandwich(model, grid, raise_on_fail=False)
    pseudo = build_joint_matrix(model, grid, "pseudo")
    spec_report = spectral_gap(pseudo)
    tol = float(params.get("tol", 1e-8))
    passed = report.min_slack >= -tol
    metrics = report.as_dict()
    metrics.update({"pseudo_left_gap": spec_report.left_gap,
                    "pseudo_min_eigenvalue": spec_report.min_eigenvalue})
    tables = (("gaps", ["kernel", "gap"],
               [("marginal", report.gap_marginal),
                ("auxiliary", report.gap_auxiliary),
                ("check", report.gap_check),
                ("pseudo", report.gap_pseudo)]),
              ("eigenvalues", ["index", "eigenvalue"],
               list(enumerate(spec_report.eigen_summary.tolist()))))
    return ExperimentResult("", "spectral_sandwich", passed, metrics, tables,
                            figure_data=metrics)


def run_variance_order(model: ModelSpec, family: WeightFamily, params,
                       seed) -> ExperimentResult:
    grid = build_joint_grid(family, model.n_states,
                            n_nodes=int(params.get("n_nodes", 128)))
    g = _g_function(params, model.n_states)
    report = verify_variance_order(model, grid, g, raise_on_fail=False)
    tol = float(params.get("tol", 1e-8))
    passed = report.min_slack >= -tol

    marg = marginal_kernel_matrix(model)
    pseudo = build_joint_matrix(model, grid, "pseudo")
    lams = [0.5, 0.9, 0.99, 0.999]
    from .spectral import var_lambda

    curve_m = {lam: var_lambda(marg, g, lam) for lam in lams}
    curve_p = {lam: var_lambda(pseudo, g, lam) for lam in lams}
    metrics = report.as_dict()
    figure = {"var_marginal": report.var_marginal, "var_pseudo": report.var_pseudo,
              "curve_marginal": curve_m, "curve_pseudo": curve_p}
    tables = (("variance_order", ["quantity", "value"],
               sorted(report.slacks.items())
               + [("var_marginal", report.var_marginal),
                  ("var_pseudo", report.var_pseudo),
                  ("var_check", report.var_check)]),)
    return ExperimentResult("", "variance_order", passed, metrics, tables, figure)


def run_variance_convergence(model: ModelSpec, family: WeightFamily, params,
                             seed) -> ExperimentResult:
    n_list = [int(n) for n in params.get("n_list", [1, 2, 4, 8, 16, 32])]
    g = _g_function(params, model.n_states)
    rows = variance_convergence_experiment(model, family, n_list, g)
    diffs = [abs(r.var_pseudo - r.var_marginal) for r in rows]
    above = all(r.var_pseudo >= r.var_marginal - 1e-8 for r in rows)
    decreasing = all(b < a for a, b in zip(diffs, diffs[1:]))
    dev_cap = params.get("final_mean_abs_dev_below")
    dev_ok = True if dev_cap is None else rows[-1].mean_abs_dev < float(dev_cap)
    passed = above and decreasing and dev_ok
    table_rows = [(r.n_average, r.var_pseudo, r.var_marginal, r.gap) for r in rows]
    metrics = {"n_list": n_list, "differences": diffs,
               "mean_abs_dev": [r.mean_abs_dev for r in rows],
               "monotone_decreasing": decreasing, "all_above_marginal": above,
               "final_mean_abs_dev": rows[-1].mean_abs_dev}
    tables = (("variance_convergence", ["N", "var_pseudo", "var_marginal", "gap"],
               table_rows),)
    return ExperimentResult("", "variance_convergence", passed, metrics, tables,
                            figure_data={"rows": table_rows})


def run_gap_collapse(model: ModelSpec, family: WeightFamily, params,
                     seed) -> ExperimentResult:
    cutoffs = [float(c) for c in params.get("cutoffs", [1 - 1e-2, 1 - 1e-4, 1 - 1e-6])]
    points = gap_collapse_scan(model, family, cutoffs,
                               n_nodes=int(params.get("n_nodes", 96)))
    gaps = [p.gap for p in points]
    noise = float(params.get("grid_noise", 1e-6))
    nonincreasing = all(b <= a + noise for a, b in zip(gaps, gaps[1:]))
    bound_ok = all(p.gap <= p.tail_bound + 1e-10 for p in points)
    expect_collapse = bool(params.get("expect_collapse", True))
    shrank = gaps[-1] < gaps[0] if expect_collapse else True
    passed = nonincreasing and bound_ok and shrank
    metrics = {"cutoffs": cutoffs, "gaps": gaps,
               "tail_bounds": [p.tail_bound for p in points],
               "max_weights": [p.max_weight for p in points],
               "nonincreasing": nonincreasing, "bound_respected": bound_ok}
    tables = (("gap_collapse", ["cutoff", "max_weight", "gap", "left_gap",
                                "tail_bound"],
               [(p.cutoff_quantile, p.max_weight, p.gap, p.left_gap, p.tail_bound)
                for p in points]),)
    figure = {"cutoffs": cutoffs, "gaps": gaps,
              "bounds": [p.tail_bound for p in points]}
    return ExperimentResult("", "gap_collapse", passed, metrics, tables, figure)


def _drift_result(kind, report) -> ExperimentResult:
    tables = (("drift_points",
               ["x", "w", "V", "PV", "required", "slack", "regime", "error_bar"],
               report.point_rows()),)
    figure = {"w": [p.w for p in report.points],
              "slack": [p.slack for p in report.points],
              "regime": [p.regime for p in report.points]}
    return ExperimentResult("", kind, report.passed, report.as_dict(), tables,
                            figure)


def run_drift_imh(model: ModelSpec, family: WeightFamily, params,
                  seed) -> ExperimentResult:
    report = check_imh_drift(
        model, family, flavor=params.get("flavor", "poly"),
        exponent=float(params.get("exponent", 2.0)),
        n_nodes=int(params.get("n_nodes", 128)),
        expect_uniform_regime=bool(params.get("expect_uniform_regime", False)))
    return _drift_result("drift_imh", report)


def run_drift_uniform(model: ModelSpec, family: WeightFamily, params,
                      seed) -> ExperimentResult:
    beta = params.get("beta", 2.0)
    beta = None if beta is None else float(beta)
    phi_beta = float(params.get("phi_beta", beta if beta is not None else 2.0))
    report = check_uniform_marginal_drift(
        model, family, phi=lambda w: w ** phi_beta + 1.0, beta=beta,
        n_nodes=int(params.get("n_nodes", 64)))
    return _drift_result("drift_uniform", report)


def run_drift_rwm(model, family: WeightFamily, params, seed) -> ExperimentResult:
    target_spec = params.get("target", {"kind": "standard_normal"})
    tkind = target_spec.get("kind", "standard_normal")
    if tkind == "standard_normal":
        target = standard_normal_target(float(target_spec.get("truncation", 10.0)))
    elif tkind == "quartic":
        target = quartic_target(float(target_spec.get("truncation", 4.0)))
    else:
        raise ConfigError(f"unknown rwm target kind {tkind!r}")
    report = check_rwm_drift(
        target, float(params.get("proposal_sigma", 1.0)), family,
        eta=float(params.get("eta", 0.25)), alpha=float(params.get("alpha", 1.0)),
        beta=float(params.get("beta", 2.0)),
        moment_alpha=params.get("moment_alpha"),
        moment_beta=params.get("moment_beta"),
        mc_fraction=float(params.get("mc_fraction", 0.05)),
        mc_samples=int(params.get("mc_samples", 100_000)), seed=seed)
    return _drift_result("drift_rwm", report)


def run_counterexample(model, family, params, seed) -> ExperimentResult:
    report = counterexample_ledger(params.get("k_values", [1, 2]),
                                   int(params.get("truncation", 220)))
    result = _drift_result("counterexample", report)
    return ExperimentResult("", "counterexample", report.passed, report.as_dict(),
                            (("counterexample",
                              ["k", "bound", "quotient", "left_gap"],
                              [(k, e["bound"], e["quotient_direct"],
                                e.get("left_gap", ""))
                               for k, e in report.notes["per_k"].items()]),),
                            figure_data={"per_k": report.notes["per_k"]})


def run_unifdrift(model: ModelSpec, family: WeightFamily, params,
                  seed) -> ExperimentResult:
    beta = float(params.get("beta", 2.0))
    w_core = float(params.get("w_core", 2.0))
    spec = DriftSpec(V=lambda x, w: w ** beta + 1.0, form="polynomial",
                     alpha=(beta - 1.0) / beta,
                     region_c=lambda x, w: w <= w_core)
    report = verify_unifdrift_condition(
        model, family, [int(n) for n in params.get("n_list", [1, 2, 4])], spec,
        g=_g_function(params, model.n_states),
        kappa=float(params.get("kappa", 0.5)),
        lam=float(params.get("lambda", 0.5)),
        v_level=params.get("v_level"))
    return _drift_result("unifdrift", report)


_RUNNERS = {
    "spectral_sandwich": run_spectral_sandwich,
    "variance_order": run_variance_order,
    "variance_convergence": run_variance_convergence,
    "gap_collapse": run_gap_collapse,
    "drift_imh": run_drift_imh,
    "drift_uniform": run_drift_uniform,
    "drift_rwm": run_drift_rwm,
    "counterexample": run_counterexample,
    "unifdrift": run_unifdrift,
}

_NEEDS_MODEL = {"spectral_sandwich", "variance_order", "variance_convergence",
                "gap_collapse", "drift_imh", "drift_uniform", "unifdrift"}


def run_experiment(exp: ExperimentConfig, scenario: ScenarioConfig,
                   index: int) -> ExperimentResult:
    model = scenario.models.get(exp.model) if exp.model else None
    family = scenario.families.get(exp.family) if exp.family else None
    if exp.kind in _NEEDS_MODEL and model is None:
        raise ConfigError(f"experiment {exp.name!r} needs a model ref")
    if exp.kind in _NEEDS_MODEL and family is None:
        raise ConfigError(f"experiment {exp.name!r} needs a family ref")
    if exp.kind == "drift_rwm" and family is None:
        raise ConfigError(f"experiment {exp.name!r} needs a family ref")
    runner = _RUNNERS[exp.kind]
    result = runner(model, family, exp.params, seed=scenario.seed + 1000 * index)
    return ExperimentResult(exp.name, result.kind, result.passed, result.metrics,
                            result.tables, result.figure_data, result.failure)


def run_scenario(scenario: ScenarioConfig, out_dir=None, jobs=None,
                 config_path=None) -> int:
    """Execute a scenario and write report.json + tables + figures.

    Returns the process exit status (0 pass / 1 config or IO error /
    2 inequality violated).
    """
    out = Path(out_dir if out_dir is not None else scenario.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"cannot create output dir: {exc}")
        return 1

    jobs = jobs if jobs is not None else scenario.jobs
    results = []
    try:
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(run_experiment, exp, scenario, i)
                           for i, exp in enumerate(scenario.experiments)]
                results = [f.result() for f in futures]
        else:
            results = [run_experiment(exp, scenario, i)
                       for i, exp in enumerate(scenario.experiments)]
    except ConfigError as exc:
        print(f"config error: {exc}")
        return 1
    except InequalityViolated as exc:
        _dump_violation(out, exc)
        return 2
    except PmlabError as exc:
        print(f"error: {exc}")
        traceback.print_exc()
        return 2

    report = {"version": __version__, "seed": scenario.seed,
              "config_hash": config_hash(config_path) if config_path else None,
              "generated_at": timestamp(),
              "experiments": []}
    all_passed = True
    for result in results:
        entry = {"name": result.name, "kind": result.kind,
                 "passed": bool(result.passed), "metrics": result.metrics,
                 "files": []}
        for stem, header, rows in result.tables:
            path = out / f"{result.name}_{stem}.csv"
            write_csv(path, header, rows)
            entry["files"].append(path.name)
        if result.figure_data is not None:
            fig_path = out / f"{result.name}.png"
            render_figure(result.kind, result.name, result.figure_data, fig_path)
            entry["files"].append(fig_path.name)
        report["experiments"].append(entry)
        all_passed = all_passed and result.passed
        status = "pass" if result.passed else "FAIL"
        print(f"[{status}] {result.name} ({result.kind})")

    write_report_json(out / "report.json", report)
    if not all_passed:
        for result in results:
            if not result.passed:
                _dump_violation(out, InequalityViolated(
                    f"experiment {result.name} failed", instance=result.metrics))
        return 2
    return 0


def _dump_violation(out: Path, exc: InequalityViolated) -> None:
    payload = {"message": str(exc), "instance": exc.instance}
    from .reporting import _jsonable

    with open(out / "violation.json", "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
    print(f"inequality violated: {exc}")


# -- randomized ordering suite -----------------------------------------------------

CHECK_NAMES = ("acceptance_order", "acceptance_upper_bound",
               "acceptance_tight_bound", "delta_order", "delta_upper_bound",
               "variance_order", "variance_upper_bound", "check_variance_order",
               "gap_sandwich", "imh_positivity")


def random_instance(rng: np.random.Generator, max_states=8, max_atoms=4):
    """One random reversible instance: target, proposal, bounded weights, g."""
    n = int(rng.integers(2, max_states + 1))
    mass = rng.uniform(0.05, 1.0, n)
    target = TargetDistribution.from_mass(StateSpace.finite(range(n)), mass)

    style = rng.choice(["imh", "symmetric"])
    if style == "imh":
        dist = rng.uniform(0.05, 1.0, n)
        proposal = ProposalKernel.independent(dist / dist.sum())
    else:
        a = rng.uniform(0.05, 1.0, (n, n))
        a = 0.5 * (a + a.T)
        scale = a.sum(axis=1).max() * 1.05
        q = a / scale
        q[np.arange(n), np.arange(n)] += 1.0 - q.sum(axis=1)
        proposal = ProposalKernel.explicit(q)
    model = ModelSpec(target=target, proposal=proposal)

    fam_kind = rng.choice(["constant_one", "two_point", "discrete"],
                          p=[0.15, 0.35, 0.5])
    if fam_kind == "constant_one":
        family = ConstantOne()
    elif fam_kind == "two_point":
        family = TwoPoint(low=float(rng.uniform(0.0, 0.95)),
                          p_low=float(rng.uniform(0.1, 0.9)))
    else:
        m = int(rng.integers(2, max_atoms + 1))
        values = rng.uniform(0.05, 3.0, m)
        if rng.random() < 0.15:
            values[0] = 0.0
        probs = rng.dirichlet(np.ones(m))
        mean = float(np.dot(values, probs))
        family = DiscreteAtoms.from_atoms(values / mean, probs)
    g = rng.standard_normal(n)
    return model, family, g, style


def _serialize_instance(model, family, g, style) -> dict:
    atoms = family.atoms(0)
    return {"pi": model.pi.tolist(), "q": model.q.tolist(),
            "proposal_style": str(style),
            "weights": {"values": atoms[0].tolist(), "probs": atoms[1].tolist()},
            "g": np.asarray(g).tolist()}


def randomized_suite(count: int, seed: int, max_states=8, max_atoms=4,
                     tol=1e-8) -> dict:
    """Exact ordering checks on randomized finite instances.

    Verifies, per instance: acceptance-rate order and both deviation bounds,
    the pair-functional order with its bound, the variance order with the
    bounded-weight upper bound, the check-kernel variance domination, the
    full gap sandwich, and positivity of noisy independent samplers.
    Aborts with the serialized instance on the first violation.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    min_slacks = {name: math.inf for name in CHECK_NAMES}

    for idx in range(count):
        model, family, g, style = random_instance(rng, max_states, max_atoms)
        grid = build_joint_grid(family, model.n_states)
        instance = None

        def fail(check, slack):
            nonlocal instance
            instance = _serialize_instance(model, family, g, style)
            instance.update({"index": idx, "check": check, "slack": slack})
            raise InequalityViolated(
                f"{check} violated at instance {idx} (slack {slack:.3e})",
                instance=instance)

        def note(check, slack):
            min_slacks[check] = min(min_slacks[check], slack)
            if slack < -tol:
                fail(check, slack)

        pseudo = build_joint_matrix(model, grid, "pseudo")
        marg = marginal_kernel_matrix(model)

        alpha_p = marginal_mean_acceptance(model)
        alpha_pseudo = mean_acceptance(pseudo)
        dev = mean_abs_weight_deviation(model, family)
        from .targets import rejection_vector

        tight = float(np.dot(model.pi * (1.0 - rejection_vector(model)),
                             [family.mean_abs_dev_one(x)
                              for x in range(model.n_states)]))
        note("acceptance_order", alpha_p - alpha_pseudo)
        note("acceptance_upper_bound", dev - (alpha_p - alpha_pseudo))
        note("acceptance_tight_bound", tight - (alpha_p - alpha_pseudo))

        sym = np.abs(g[:, None] - g[None, :])
        deltas = delta_functionals(model, grid, sym)
        note("delta_order", deltas.gap)
        note("delta_upper_bound", deltas.upper_bound - deltas.gap)

        order = verify_variance_order(model, grid, g, raise_on_fail=False)
        note("variance_order", order.slacks["pseudo_above_marginal"])
        note("variance_upper_bound", order.slacks["upper_bound"])
        note("check_variance_order", order.slacks["check_above_pseudo"])
        note("variance_order", order.slacks["refined_lower_bound"])

        sandwich = verify_gap_sandwich(model, grid, raise_on_fail=False)
        note("gap_sandwich", sandwich.min_slack)

        if style == "imh":
            report = spectral_gap(pseudo)
            note("imh_positivity", report.min_eigenvalue + 1e-9)

    return {"count": count, "seed": seed, "max_states": max_states,
            "max_atoms": max_atoms,
            "min_slacks": {k: (v if math.isfinite(v) else None)
                           for k, v in min_slacks.items()},
            "passed": True}

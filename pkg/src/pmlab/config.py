"""Declarative scenario configuration.

One YAML file holds the whole tree: named models, named weight families and
an experiment list.  Every run is seeded from the file (or the CLI
override); there is no ambient randomness anywhere.

    seed: 20240817
    models:
      chain5:
        target:   {kind: geometric, ratio: 0.5, states: 5}
        proposal: {kind: random_walk, increments: {-1: 0.5, 1: 0.5}}
    families:
      noise: {kind: two_point, low: 0.5, p_low: 0.8}
    experiments:
      - kind: spectral_sandwich
        model: chain5
        family: noise
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError
from .targets import (ModelSpec, ProposalKernel, StateSpace, TargetDistribution,
                      convolved_increment, discrete_gaussian_increment)
from .weights import (Averaged, ConstantOne, DiscreteAtoms, GammaShape,
                      LogNormal, TwoPoint, WeightFamily, averaged_family)

EXPERIMENT_KINDS = ("spectral_sandwich", "variance_order", "variance_convergence",
                    "gap_collapse", "drift_imh", "drift_uniform", "drift_rwm",
                    "counterexample", "unifdrift")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    name: str
    model: str | None = None
    family: str | None = None
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    models: dict
    families: dict
    experiments: tuple
    output_dir: str = "reports"
    jobs: int = 1


def _require(condition, message):
    if not condition:
        raise ConfigError(message)


def load_scenario(path, seed_override=None) -> ScenarioConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config does not parse: {exc}") from exc
    return parse_scenario(raw, seed_override=seed_override)


def parse_scenario(raw, seed_override=None) -> ScenarioConfig:
    _require(isinstance(raw, dict), "config root must be a mapping")
    seed = seed_override if seed_override is not None else raw.get("seed")
    _require(seed is not None, "config key 'seed' is required (no ambient randomness)")
    models = {name: build_model(spec, where=f"models.{name}")
              for name, spec in (raw.get("models") or {}).items()}
    families = {name: build_family(spec, where=f"families.{name}")
                for name, spec in (raw.get("families") or {}).items()}
    experiments = []
    for idx, entry in enumerate(raw.get("experiments") or []):
        where = f"experiments[{idx}]"
        _require(isinstance(entry, dict), f"{where} must be a mapping")
        kind = entry.get("kind")
        _require(kind in EXPERIMENT_KINDS,
                 f"{where}.kind must be one of {EXPERIMENT_KINDS}, got {kind!r}")
        model = entry.get("model")
        family = entry.get("family")
        if model is not None:
            _require(model in models, f"{where}.model: unknown model ref {model!r}")
        if family is not None:
            _require(family in families,
                     f"{where}.family: unknown family ref {family!r}")
        experiments.append(ExperimentConfig(
            kind=kind, name=entry.get("name", f"{idx:02d}_{kind}"),
            model=model, family=family, params=dict(entry.get("params") or {})))
    return ScenarioConfig(seed=int(seed), models=models, families=families,
                          experiments=tuple(experiments),
                          output_dir=str(raw.get("output_dir", "reports")),
                          jobs=int(raw.get("jobs", 1)))


# -- model construction --------------------------------------------------------

def build_model(spec, where="model") -> ModelSpec:
    _require(isinstance(spec, dict), f"{where} must be a mapping")
    _require("target" in spec, f"{where}.target is required")
    _require("proposal" in spec, f"{where}.proposal is required")
    target = _build_target(spec["target"], where=f"{where}.target")
    proposal = _build_proposal(spec["proposal"], target.space.n_states,
                               where=f"{where}.proposal")
    return ModelSpec(target=target, proposal=proposal)


def _build_target(spec, where) -> TargetDistribution:
    kind = spec.get("kind")
    if kind == "mass":
        values = spec.get("values")
        _require(isinstance(values, list) and len(values) >= 2,
                 f"{where}.values must list at least 2 masses")
        return TargetDistribution.from_mass(StateSpace.finite(range(len(values))),
                                            values)
    if kind == "geometric":
        states = int(spec.get("states", 0))
        ratio = float(spec.get("ratio", 0.5))
        _require(states >= 2, f"{where}.states must be >= 2")
        _require(0 < ratio < 1, f"{where}.ratio must lie in (0, 1)")
        mass = ratio ** np.arange(states)
        return TargetDistribution.from_mass(StateSpace.finite(range(states)), mass)
    if kind == "uniform":
        states = int(spec.get("states", 0))
        _require(states >= 2, f"{where}.states must be >= 2")
        return TargetDistribution.from_mass(StateSpace.finite(range(states)),
                                            np.ones(states))
    if kind == "gaussian_grid":
        points = int(spec.get("points", 64))
        half = float(spec.get("halfwidth", 10.0))
        sigma = float(spec.get("sigma", 1.0))
        space = StateSpace.grid(-half, half, points)
        return TargetDistribution.from_density(
            space, lambda x: math.exp(-0.5 * (x / sigma) ** 2))
    raise ConfigError(f"{where}.kind: unknown target kind {kind!r}")


def _build_proposal(spec, n_states, where) -> ProposalKernel:
    kind = spec.get("kind")
    if kind == "independent":
        dist = spec.get("dist", "uniform")
        if dist == "uniform":
            return ProposalKernel.independent(np.full(n_states, 1.0 / n_states))
        _require(isinstance(dist, list) and len(dist) == n_states,
                 f"{where}.dist must be 'uniform' or a list of {n_states} probs")
        return ProposalKernel.independent(dist)
    if kind == "random_walk":
        increments = spec.get("increments")
        _require(isinstance(increments, dict) and increments,
                 f"{where}.increments must be a nonempty offset->prob mapping")
        inc = {int(k): float(v) for k, v in increments.items()}
        return ProposalKernel.random_walk(n_states, inc)
    if kind == "convolved_gaussian_walk":
        sigma = float(spec.get("sigma", 2.0))
        width = int(spec.get("width", 8))
        half = discrete_gaussian_increment(sigma / math.sqrt(2.0), width)
        return ProposalKernel.random_walk(n_states, convolved_increment(half))
    if kind == "explicit":
        matrix = spec.get("matrix")
        _require(isinstance(matrix, list), f"{where}.matrix must be a list of rows")
        return ProposalKernel.explicit(matrix)
    raise ConfigError(f"{where}.kind: unknown proposal kind {kind!r}")


# -- family construction --------------------------------------------------------

def build_family(spec, where="family") -> WeightFamily:
    _require(isinstance(spec, dict), f"{where} must be a mapping")
    kind = spec.get("kind")
    if kind == "constant_one":
        return ConstantOne()
    if kind == "two_point":
        return TwoPoint(low=float(spec.get("low", 0.5)),
                        p_low=float(spec.get("p_low", 0.8)))
    if kind == "discrete":
        values, probs = spec.get("values"), spec.get("probs")
        _require(isinstance(values, list) and isinstance(probs, list),
                 f"{where} needs 'values' and 'probs' lists")
        return DiscreteAtoms.from_atoms(values, probs,
                                        rescale=bool(spec.get("rescale", False)))
    if kind == "lognormal":
        return LogNormal(sigma=float(spec.get("sigma", 1.0)))
    if kind == "gamma":
        return GammaShape(shape=float(spec.get("shape", 2.0)))
    if kind == "averaged":
        base_spec = spec.get("base")
        _require(isinstance(base_spec, dict), f"{where}.base must be a family mapping")
        base = build_family(base_spec, where=f"{where}.base")
        return averaged_family(base, int(spec.get("n", 1)),
                               strict=bool(spec.get("strict", False)))
    raise ConfigError(f"{where}.kind: unknown family kind {kind!r}")

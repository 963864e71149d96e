"""Report serialization: JSON summary, CSV tables and rendered figures.

Every experiment drops its delimited tables next to ``report.json``; the
same data is rendered to a PNG per experiment so a run can be skimmed
without loading the CSVs.  All content except the timestamp is a pure
function of (config, seed).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from datetime import datetime, timezone
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def config_hash(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]


def _jsonable(value):
    import numpy as np

    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        value = float(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def write_report_json(path, report: dict) -> None:
    payload = _jsonable(report)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def timestamp() -> str:
    return datetime.now(timezone.utc).isoformat()


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_csv_cell(v) for v in row])


def _csv_cell(value):
    if isinstance(value, float):
        return repr(value)
    return value


def write_matrix_csv(path, kernel) -> None:
    """Coordinate-list export: row, col, value for nonzero entries."""
    rows = []
    import numpy as np

    nz = np.nonzero(kernel.rows)
    for i, j in zip(*nz):
        rows.append((int(i), int(j), float(kernel.rows[i, j])))
    write_csv(path, ["row", "col", "value"], rows)


def write_eigenvalues_csv(path, values) -> None:
    write_csv(path, ["index", "eigenvalue"],
              [(i, float(v)) for i, v in enumerate(values)])


def write_weight_grid_csv(path, grid) -> None:
    """(state, node, mass) rows for a joint weight grid."""
    rows = []
    for x in range(grid.n_x):
        nodes, masses = grid.nodes_at(x)
        rows.extend((x, float(n), float(m)) for n, m in zip(nodes, masses))
    write_csv(path, ["state", "node", "mass"], rows)


# -- figures -------------------------------------------------------------------

def _new_axes(title):
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=150)
    ax.set_title(title)
    return fig, ax


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_figure(kind, name, data, path) -> None:
    renderer = _RENDERERS.get(kind)
    if renderer is None:
        return
    renderer(name, data, path)


def _render_sandwich(name, data, path):
    fig, ax = _new_axes(f"{name}: spectral gaps")
    labels = ["marginal", "auxiliary", "check", "pseudo"]
    gaps = [data["gap_marginal"], data["gap_auxiliary"],
            data["gap_check"], data["gap_pseudo"]]
    ax.bar(labels, gaps, color=["#444444", "#6677cc", "#77aa77", "#cc6666"])
    ax.axhline(data["gap_auxiliary"] / data["w_bar"], ls="--", c="k", lw=1,
               label="auxiliary gap / w_bar")
    ax.set_ylabel("right spectral gap")
    ax.legend()
    _finish(fig, path)


def _render_variance_order(name, data, path):
    fig, ax = _new_axes(f"{name}: resolvent variance")
    lams = sorted(data["curve_marginal"])
    ax.plot(lams, [data["curve_marginal"][l] for l in lams], "o-",
            label="marginal")
    ax.plot(lams, [data["curve_pseudo"][l] for l in lams], "s-", label="pseudo")
    ax.axhline(data["var_marginal"], ls=":", c="C0")
    ax.axhline(data["var_pseudo"], ls=":", c="C1")
    ax.set_xlabel("lambda")
    ax.set_ylabel("var_lambda(g)")
    ax.legend()
    _finish(fig, path)


def _render_variance_convergence(name, data, path):
    fig, ax = _new_axes(f"{name}: variance vs averaging order")
    ns = [row[0] for row in data["rows"]]
    ax.plot(ns, [row[1] for row in data["rows"]], "o-", label="pseudo")
    ax.axhline(data["rows"][0][2], ls="--", c="k", label="marginal")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("averaging order N")
    ax.set_ylabel("asymptotic variance")
    ax.legend()
    _finish(fig, path)


def _render_gap_collapse(name, data, path):
    fig, ax = _new_axes(f"{name}: gap vs weight-grid cutoff")
    tails = [1.0 - c for c in data["cutoffs"]]
    ax.plot(tails, data["gaps"], "o-", label="pseudo gap")
    ax.plot(tails, data["bounds"], "s--", label="tail rejection bound")
    ax.set_xscale("log")
    ax.invert_xaxis()
    ax.set_xlabel("1 - cutoff quantile")
    ax.set_ylabel("right spectral gap")
    ax.legend()
    _finish(fig, path)


def _render_drift(name, data, path):
    fig, ax = _new_axes(f"{name}: drift slack by weight")
    ws = data["w"]
    slacks = data["slack"]
    regimes = data["regime"]
    palette = {"core": "#888888", "w_large": "#cc6666", "w_small": "#6677cc",
               "x_large": "#77aa77", "drift": "#cc6666", "C": "#888888"}
    colors = [palette.get(r.split(":")[-1], "#333333") for r in regimes]
    ax.scatter(ws, slacks, c=colors, s=14)
    ax.axhline(0.0, c="k", lw=1)
    ax.set_xscale("log")
    ax.set_xlabel("weight w")
    ax.set_ylabel("slack")
    _finish(fig, path)


def _render_counterexample(name, data, path):
    fig, ax = _new_axes(f"{name}: ridge Rayleigh quotients")
    ks = sorted(data["per_k"])
    q = [data["per_k"][k]["quotient_direct"] for k in ks]
    b = [data["per_k"][k]["bound"] for k in ks]
    ax.plot(ks, q, "o-", label="exact quotient")
    ax.plot(ks, b, "s--", label="bound")
    ax.axhline(-1.0, c="k", lw=1)
    ax.set_xticks(ks)
    ax.set_xlabel("block index k")
    ax.set_ylabel("<f, P f> / |f|^2")
    ax.legend()
    _finish(fig, path)


def _render_random_suite(name, data, path):
    fig, ax = _new_axes(f"{name}: minimum slack per check")
    checks = sorted(data["min_slacks"])
    vals = [data["min_slacks"][c] for c in checks]
    ax.barh(checks, vals, color="#6677cc")
    ax.axvline(0.0, c="k", lw=1)
    ax.set_xlabel("minimum slack over instances")
    _finish(fig, path)


_RENDERERS = {
    "spectral_sandwich": _render_sandwich,
    "variance_order": _render_variance_order,
    "variance_convergence": _render_variance_convergence,
    "gap_collapse": _render_gap_collapse,
    "drift_imh": _render_drift,
    "drift_uniform": _render_drift,
    "drift_rwm": _render_drift,
    "unifdrift": _render_drift,
    "counterexample": _render_counterexample,
    "random_suite": _render_random_suite,
}

"""Batch scenario driver.

One invocation runs one declarative scenario config and writes one report,
as JSON (single object, fixed key order) or CSV (one row per scalar). All
randomness comes from the config seed, reports carry no timestamps, and
files are written atomically, so a rerun of the same config on the same
build reproduces the report byte for byte. Wall time goes to stderr only.

Exit codes: 0 success, 2 invalid configuration or usage, 3 numerical or
I/O failure. When an output path is set, a small PNG figure for the
scenario is rendered next to the report unless --no-figures is given.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .divergences import (
    D_HALF,
    UMEGAKI,
    closed_form_distance,
    gamma_divergence,
    hs_quadratic,
)
from .dynamics import (
    block_constraints,
    entropic_projection,
    expectation_constraints,
    hamiltonian_flow,
    linear_hamiltonian,
    marginal_constraints,
    mean_field_hamiltonian,
)
from .errors import ConfigInvalid, QigError
from .geometry import (
    bkm_kernel,
    eguchi_tensors,
    exponential_state_chart,
    pullback_metric,
    wy_kernel,
)
from .histories import (
    HistorySpec,
    PriorSpec,
    entropic_prior_density,
    histories_functional,
    history_probability,
    sliced_propagator,
    spin_coherent_family,
)
from .linalg import (
    DensityMatrix,
    QuantumChannel,
    dephasing_channel,
    depolarizing_channel,
    gibbs_state,
    partial_trace,
    random_hermitian,
    random_tangent,
    validate_state,
)
from .modular import (
    compose,
    conjugate_by_flow,
    expansional,
    gns_build,
    kms_defect,
    standard_liouvillean,
)
from .renorm import BlockModel, block_renormalize, contraction_coefficient, propagator_series

SCENARIOS = (
    "divergence",
    "geometry",
    "project",
    "evolve",
    "modular",
    "renorm",
    "contract",
    "histories",
    "prior",
    "propagator",
)
STOCHASTIC = frozenset(("geometry", "modular", "contract"))


# ---------------------------------------------------------------------------
# config access with dotted-path errors


_MISSING = object()


def _get(cfg: dict, path: str, default=_MISSING):
    node = cfg
    walked = []
    for part in path.split("."):
        walked.append(part)
        if not isinstance(node, dict) or part not in node:
            if default is not _MISSING:
                return default
            raise ConfigInvalid(f"{'.'.join(walked)}: required field is missing")
        node = node[part]
    return node


def _as_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
        raise ConfigInvalid(f"{path}: expected an integer, got {value!r}")
    return int(value)


def _as_float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigInvalid(f"{path}: expected a number, got {value!r}")
    return float(value)


def _as_matrix(value, path: str) -> np.ndarray:
    """Parse a matrix; complex entries are written as [re, im] pairs."""
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{path}: not a numeric array ({exc})") from None
    if arr.ndim == 3 and arr.shape[-1] == 2:
        return arr[..., 0] + 1j * arr[..., 1]
    if arr.ndim == 2:
        return arr.astype(complex)
    raise ConfigInvalid(f"{path}: expected a matrix, got shape {arr.shape}")


def _as_state(value, path: str, dim: int) -> DensityMatrix:
    m = _as_matrix(value, path)
    if m.shape != (dim, dim):
        raise ConfigInvalid(f"{path}: expected a {dim}x{dim} matrix, got {m.shape}")
    try:
        return validate_state(m)
    except QigError as exc:
        raise ConfigInvalid(f"{path}: not a density matrix ({exc})") from None


def _as_vector(value, path: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{path}: not a numeric vector ({exc})") from None
    if arr.ndim != 1:
        raise ConfigInvalid(f"{path}: expected a flat list, got shape {arr.shape}")
    return arr


def _divergence_by_name(name, path: str):
    table = {"umegaki": UMEGAKI, "d_half": D_HALF, "hs_quadratic": hs_quadratic()}
    if name in table:
        return table[name]
    raise ConfigInvalid(f"{path}: unknown divergence {name!r}")


# ---------------------------------------------------------------------------
# report model


@dataclass
class RunReport:
    scenario: str
    engine_version: str
    seed: int
    wall_time: float | None
    scalars: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    witnesses: dict = field(default_factory=dict)


def _encode(value):
    if isinstance(value, DensityMatrix):
        value = value.matrix
    if isinstance(value, np.ndarray):
        if np.iscomplexobj(value):
            out = np.stack([value.real, value.imag], axis=-1)
            return out.tolist()
        return value.tolist()
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_encode(v) for v in value]
    return value


def report_to_json(report: RunReport) -> str:
    obj = {
        "scenario": report.scenario,
        "engine_version": report.engine_version,
        "seed": report.seed,
        "wall_time": report.wall_time,
        "scalars": [
            {
                "name": name,
                "value": float(value),
                "tolerance": tolerance,
                "pass": passed,
            }
            for name, value, tolerance, passed in report.scalars
        ],
        "residuals": [
            {"name": name, "value": float(value)} for name, value in report.residuals
        ],
        "witnesses": {name: _encode(value) for name, value in report.witnesses.items()},
    }
    return json.dumps(obj, indent=2) + "\n"


def report_to_csv(report: RunReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", "value", "tolerance", "pass"])
    for name, value, tolerance, passed in report.scalars:
        writer.writerow(
            [
                name,
                repr(float(value)),
                "" if tolerance is None else repr(float(tolerance)),
                "" if passed is None else ("true" if passed else "false"),
            ]
        )
    # residuals fold into the same table without tolerance columns
    for name, value in report.residuals:
        writer.writerow([f"residual:{name}", repr(float(value)), "", ""])
    return buf.getvalue()


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _apply_checks(cfg: dict, scalars: list) -> list:
    rows = [(name, float(value), None, None) for name, value in scalars]
    checks = cfg.get("checks", [])
    if not isinstance(checks, list):
        raise ConfigInvalid("checks: expected a list")
    names = [row[0] for row in rows]
    for i, check in enumerate(checks):
        if not isinstance(check, dict):
            raise ConfigInvalid(f"checks[{i}]: expected an object")
        name = _get(check, "name")
        target = _as_float(_get(check, "value"), f"checks[{i}].value")
        tolerance = _as_float(_get(check, "tolerance"), f"checks[{i}].tolerance")
        if name not in names:
            raise ConfigInvalid(f"checks[{i}].name: no scalar named {name!r}")
        j = names.index(name)
        value = rows[j][1]
        rows[j] = (name, value, tolerance, bool(abs(value - target) <= tolerance))
    return rows


# ---------------------------------------------------------------------------
# scenario runners: each returns (scalars, residuals, witnesses, draw)


def _run_divergence(cfg, dim, rng, workers):
    params = _get(cfg, "parameters")
    kind = _get(params, "kind", "umegaki")
    rho = _as_state(_get(cfg, "parameters.rho"), "parameters.rho", dim)
    sigma = _as_state(_get(cfg, "parameters.sigma"), "parameters.sigma", dim)
    if kind == "gamma":
        gamma = _as_float(_get(params, "gamma"), "parameters.gamma")
        functional = gamma_divergence(gamma)
    elif kind in ("wigner_yanase", "fubini_study"):
        functional = lambda a, b: closed_form_distance(kind, a, b)
    else:
        functional = _divergence_by_name(kind, "parameters.kind")
    value = float(functional(rho, sigma))
    scalars = [("divergence", value)]
    witnesses = {}

    def draw(plt):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        wr = np.sort(np.linalg.eigvalsh(rho.matrix))
        ws = np.sort(np.linalg.eigvalsh(sigma.matrix))
        pos = np.arange(dim)
        ax.bar(pos - 0.17, wr, width=0.34, label="rho")
        ax.bar(pos + 0.17, ws, width=0.34, label="sigma")
        ax.set_xlabel("eigenvalue index")
        ax.set_ylabel("weight")
        ax.set_title(f"divergence = {value:.6f}")
        ax.legend()
        fig.tight_layout()
        return fig

    return scalars, [], witnesses, draw


def _run_geometry(cfg, dim, rng, workers):
    params = _get(cfg, "parameters", {})
    samples = _as_int(_get(params, "samples", 20), "parameters.samples")
    if samples < 1:
        raise ConfigInvalid("parameters.samples: must be at least 1")
    devs = []
    for i in range(samples):
        base = random_hermitian(dim, rng, scale=0.3)
        obs = [random_tangent(dim, rng).matrix for _ in range(2)]
        chart = exponential_state_chart(base, obs)
        theta = rng.uniform(-0.4, 0.4, size=2)
        g, _, _ = eguchi_tensors(UMEGAKI, chart, theta)
        direct = pullback_metric(bkm_kernel, chart, theta)
        devs.append(
            float(np.max(np.abs(g.matrix - direct.matrix)) / np.max(np.abs(direct.matrix)))
        )
    scalars = [
        ("max_relative_deviation", max(devs)),
        ("mean_relative_deviation", float(np.mean(devs))),
    ]
    residuals = [(f"sample_{i:02d}", d) for i, d in enumerate(devs)]

    def draw(plt):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        ax.hist(devs, bins=min(12, samples))
        ax.set_xlabel("relative deviation")
        ax.set_ylabel("charts")
        ax.set_title("distance Hessian vs monotone kernel")
        fig.tight_layout()
        return fig

    return scalars, residuals, {}, draw


def _parse_constraints(params, dim):
    kind = _get(params, "constraint.kind")
    if kind == "expectation":
        obs = _get(params, "constraint.observables")
        if not isinstance(obs, list) or not obs:
            raise ConfigInvalid("parameters.constraint.observables: expected a nonempty list")
        mats = [_as_matrix(o, f"parameters.constraint.observables[{i}]") for i, o in enumerate(obs)]
        targets = _as_vector(_get(params, "constraint.targets"), "parameters.constraint.targets")
        if len(targets) != len(mats):
            raise ConfigInvalid("parameters.constraint.targets: one target per observable")
        return expectation_constraints(mats, targets)
    if kind == "blocks":
        projs = _get(params, "constraint.projectors")
        if not isinstance(projs, list) or not projs:
            raise ConfigInvalid("parameters.constraint.projectors: expected a nonempty list")
        return block_constraints(
            [_as_matrix(p, f"parameters.constraint.projectors[{i}]") for i, p in enumerate(projs)]
        )
    if kind == "marginal":
        dims = _get(params, "constraint.dims")
        dims = [_as_int(d, "parameters.constraint.dims") for d in dims]
        if int(np.prod(dims)) != dim:
            raise ConfigInvalid("parameters.constraint.dims: product must equal dim")
        return marginal_constraints(dims)
    raise ConfigInvalid(f"parameters.constraint.kind: unknown kind {kind!r}")


def _run_project(cfg, dim, rng, workers):
    params = _get(cfg, "parameters")
    divergence = _divergence_by_name(
        _get(params, "divergence", "umegaki"), "parameters.divergence"
    )
    omega = _as_state(_get(params, "state"), "parameters.state", dim)
    constraints = _parse_constraints(params, dim)
    projection = entropic_projection(omega, constraints, divergence)

    if constraints.kind == "expectation_equalities":
        value = float(divergence(projection, omega))
        defect = max(
            abs(float(np.real(np.trace(projection.matrix @ o))) - t)
            for o, t in zip(constraints.observables, constraints.targets)
        )
    elif constraints.kind == "commutant_blocks":
        value = float(divergence(omega, projection))
        pinched = sum(p @ projection.matrix @ p for p in constraints.projectors)
        defect = float(np.max(np.abs(pinched - projection.matrix)))
    else:
        value = float(divergence(omega, projection))
        da, db = constraints.dims
        ma = partial_trace(projection, (da, db), keep=0)
        mb = partial_trace(projection, (da, db), keep=1)
        defect = float(np.max(np.abs(np.kron(ma.matrix, mb.matrix) - projection.matrix)))

    scalars = [("projection_distance", value)]
    residuals = [("constraint_defect", defect)]
    witnesses = {"projection": projection}

    def draw(plt):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        before = np.sort(np.linalg.eigvalsh(omega.matrix))
        after = np.sort(np.linalg.eigvalsh(projection.matrix))
        pos = np.arange(dim)
        ax.bar(pos - 0.17, before, width=0.34, label="input")
        ax.bar(pos + 0.17, after, width=0.34, label="projection")
        ax.set_xlabel("eigenvalue index")
        ax.set_ylabel("weight")
        ax.set_title("entropic projection spectrum")
        ax.legend()
        fig.tight_layout()
        return fig

    return scalars, residuals, witnesses, draw


def _run_evolve(cfg, dim, rng, workers):
    params = _get(cfg, "parameters")
    hkind = _get(params, "hamiltonian.kind", "linear")
    if hkind == "linear":
        h = linear_hamiltonian(_as_matrix(_get(params, "hamiltonian.matrix"), "parameters.hamiltonian.matrix"))
    elif hkind == "mean_field":
        h = mean_field_hamiltonian(
            _as_matrix(_get(params, "hamiltonian.x"), "parameters.hamiltonian.x"),
            _as_matrix(_get(params, "hamiltonian.y"), "parameters.hamiltonian.y"),
            _as_float(_get(params, "hamiltonian.coupling"), "parameters.hamiltonian.coupling"),
        )
    else:
        raise ConfigInvalid(f"parameters.hamiltonian.kind: unknown kind {hkind!r}")
    rho0 = _as_state(_get(params, "state"), "parameters.state", dim)
    t_final = _as_float(_get(params, "t_final"), "parameters.t_final")
    dt = _as_float(_get(params, "dt", 1e-3), "parameters.dt")

    flow = hamiltonian_flow(h, rho0, t_final, dt)
    stride = max(1, len(flow.times) // 200)
    picks = list(range(0, len(flow.times), stride))
    if picks[-1] != len(flow.times) - 1:
        picks.append(len(flow.times) - 1)
    spec0 = np.sort(np.linalg.eigvalsh(flow.states[0]))
    e0 = h.evaluate(rho0)
    spec_drift, energy_drift, energies = [], [], []
    for i in picks:
        state = validate_state(flow.states[i])
        spec_drift.append(float(np.max(np.abs(np.sort(np.linalg.eigvalsh(flow.states[i])) - spec0))))
        energies.append(h.evaluate(state))
        energy_drift.append(abs(energies[-1] - e0))
    scalars = [
        ("spectrum_drift", max(spec_drift)),
        ("energy_drift", max(energy_drift)),
    ]
    witnesses = {"final_state": flow.final}
    sampled_times = [float(flow.times[i]) for i in picks]

    def draw(plt):
        fig, axes = plt.subplots(2, 1, figsize=(4.5, 4.2), sharex=True)
        axes[0].plot(sampled_times, energies)
        axes[0].set_ylabel("h(rho)")
        axes[1].semilogy(sampled_times, np.maximum(spec_drift, 1e-18))
        axes[1].set_ylabel("spectrum drift")
        axes[1].set_xlabel("t")
        axes[0].set_title(f"{h.label} flow")
        fig.tight_layout()
        return fig

    return scalars, [], witnesses, draw


def _run_modular(cfg, dim, rng, workers):
    params = _get(cfg, "parameters", {})
    count = _as_int(_get(params, "count", 10), "parameters.count")
    beta = _as_float(_get(params, "beta", 1.0), "parameters.beta")
    t1 = _as_float(_get(params, "time", 0.4), "parameters.time")
    kms_list, cocycle_list = [], []
    for _ in range(count):
        h = random_hermitian(dim, rng)
        rho = gibbs_state(h, beta)
        x = random_hermitian(dim, rng)
        y = random_hermitian(dim, rng)
        kms_list.append(kms_defect(rho, x, y))
        gns = gns_build(rho)
        k = standard_liouvillean(gns, h)
        q = random_hermitian(dim, rng)
        left = expansional(gns, k, q, 2.0 * t1)
        right = compose(
            expansional(gns, k, q, t1),
            conjugate_by_flow(gns, k, expansional(gns, k, q, t1), t1),
        )
        cocycle_list.append(float(np.max(np.abs(left.matrix - right.matrix))))
    scalars = [
        ("max_kms_defect", max(kms_list)),
        ("max_cocycle_residual", max(cocycle_list)),
    ]
    residuals = [(f"kms_{i:02d}", v) for i, v in enumerate(kms_list)]
    residuals += [(f"cocycle_{i:02d}", v) for i, v in enumerate(cocycle_list)]

    def draw(plt):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        ax.semilogy(np.maximum(kms_list, 1e-18), "o", label="equilibrium defect")
        ax.semilogy(np.maximum(cocycle_list, 1e-18), "s", label="cocycle residual")
        ax.set_xlabel("draw")
        ax.set_ylabel("residual")
        ax.legend()
        fig.tight_layout()
        return fig

    return scalars, residuals, {}, draw


def _block_list(params, name, required=True):
    value = _get(params, name, _MISSING if required else [])
    if value is _MISSING:
        raise ConfigInvalid(f"parameters.{name}: required field is missing")
    if not isinstance(value, list):
        raise ConfigInvalid(f"parameters.{name}: expected a list of indices")
    return tuple(_as_int(v, f"parameters.{name}") for v in value)


def _run_renorm(cfg, dim, rng, workers):
    params = _get(cfg, "parameters")
    kernel = np.real(_as_matrix(_get(params, "kernel"), "parameters.kernel"))
    if kernel.shape != (dim, dim):
        raise ConfigInvalid(f"parameters.kernel: expected a {dim}x{dim} matrix, got {kernel.shape}")
    block_a = _block_list(params, "block_a")
    block_b = _block_list(params, "block_b")
    block_c = _block_list(params, "block_c", required=False)
    order = _as_int(_get(params, "order", 20), "parameters.order")
    try:
        model = BlockModel(kernel, block_a, block_b, block_c)
    except QigError as exc:
        raise ConfigInvalid(f"parameters.kernel: {exc}") from None
    reduced = block_renormalize(model)
    series = propagator_series(model, order)

    def squeeze(name, mat):
        mat = np.asarray(mat)
        if mat.size == 1:
            return [(name, float(np.real(mat.reshape(())[()])))]
        return [(f"{name}_norm", float(np.linalg.norm(mat)))]

    scalars = []
    scalars += squeeze("k_tilde_aa", reduced.k_aa)
    scalars += squeeze("k_tilde_ba", reduced.k_ba)
    scalars += squeeze("r_squared", reduced.r2)
    scalars += squeeze("rescale_factor", reduced.factor)
    scalars.append(("series_radius", series.radius))
    scalars.append(("series_divergent", 1.0 if series.divergent else 0.0))
    sums = [float(np.linalg.norm(s)) if np.asarray(s).size > 1 else float(np.real(np.asarray(s).reshape(())[()])) for s in series.partial_sums]
    scalars.append(("series_last_partial", sums[-1]))
    residuals = []
    if series.limit is not None:
        scalars += squeeze("series_limit", series.limit)
        residuals.append(
            ("series_gap", float(np.linalg.norm(np.asarray(series.partial_sums[-1]) - series.limit)))
        )
    witnesses = {"partial_sums": [np.asarray(s) for s in series.partial_sums]}
    if "source" in params:
        source = _as_vector(_get(params, "source"), "parameters.source")
        try:
            rescaled = reduced.rescale_source(source)
        except QigError as exc:
            raise ConfigInvalid(f"parameters.source: {exc}") from None
        scalars.append(("rescaled_source_norm", float(np.linalg.norm(rescaled))))
        witnesses["rescaled_source"] = rescaled

    def draw(plt):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        ax.plot(range(len(sums)), sums, "o-", label="partial sums")
        if series.limit is not None and np.asarray(series.limit).size == 1:
            ax.axhline(float(np.real(np.asarray(series.limit).reshape(())[()])), ls="--", label="limit")
        ax.set_xlabel("order")
        ax.set_ylabel("sum")
        ax.legend()
        fig.tight_layout()
        return fig

    return scalars, residuals, witnesses, draw


def _parse_channel(params, dim) -> QuantumChannel:
    ctype = _get(params, "channel.type")
    if ctype == "depolarizing":
        p = _as_float(_get(params, "channel.p"), "parameters.channel.p")
        return depolarizing_channel(dim, p)
    if ctype == "dephasing":
        return dephasing_channel(dim)
    if ctype == "kraus":
        ops = _get(params, "channel.operators")
        if not isinstance(ops, list) or not ops:
            raise ConfigInvalid("parameters.channel.operators: expected a nonempty list")
        mats = [_as_matrix(o, f"parameters.channel.operators[{i}]") for i, o in enumerate(ops)]
        try:
            return QuantumChannel(tuple(mats))
        except QigError as exc:
            raise ConfigInvalid(f"parameters.channel.operators: {exc}") from None
    raise ConfigInvalid(f"parameters.channel.type: unknown type {ctype!r}")


def _run_contract(cfg, dim, rng, workers):
    params = _get(cfg, "parameters")
    kind = _get(params, "kind")
    channel = _parse_channel(params, dim)
    count = _as_int(_get(params, "count", 500), "parameters.count")
    refine = _as_int(_get(params, "refine_iterations", 200), "parameters.refine_iterations")
    seed = _as_int(_get(cfg, "seed"), "seed")
    if kind == "divergence":
        payload = D_HALF
    elif kind == "metric":
        payload = wy_kernel
    elif kind == "geodesic":
        payload = lambda a, b: closed_form_distance("wigner_yanase", a, b)
    else:
        raise ConfigInvalid(f"parameters.kind: unknown coefficient kind {kind!r}")
    report = contraction_coefficient(
        kind, payload, channel, count=count, seed=seed, workers=workers, refine_iterations=refine
    )
    scalars = [("contraction", report.value), ("samples", float(report.sample_count))]

    def draw(plt):
        fig, ax = plt.subplots(figsize=(3.2, 3.0))
        ax.bar([0], [report.value], width=0.5)
        ax.axhline(1.0, color="k", lw=0.8, ls="--")
        ax.set_xticks([0])
        ax.set_xticklabels([kind])
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("coefficient")
        fig.tight_layout()
        return fig

    return scalars, [], {}, draw


def _parse_history(params, prefix, dim, times):
    projs = _get(params, f"{prefix}")
    if not isinstance(projs, list) or not projs:
        raise ConfigInvalid(f"parameters.{prefix}: expected a nonempty list")
    mats = tuple(_as_matrix(p, f"parameters.{prefix}[{i}]") for i, p in enumerate(projs))
    try:
        return HistorySpec(mats, tuple(times))
    except QigError as exc:
        raise ConfigInvalid(f"parameters.{prefix}: {exc}") from None


def _run_histories(cfg, dim, rng, workers):
    params = _get(cfg, "parameters")
    rho = _as_state(_get(params, "state"), "parameters.state", dim)
    times = _as_vector(_get(params, "times"), "parameters.times")
    h = params.get("hamiltonian")
    hm = None if h is None else _as_matrix(h, "parameters.hamiltonian")
    hist = _parse_history(params, "projectors", dim, times)
    prob = history_probability(rho, hist, hm)
    scalars = [("probability", prob)]
    witnesses = {}
    if "second_projectors" in params:
        other = _parse_history(params, "second_projectors", dim, times)
        f = histories_functional(rho, hm, hist, other)
        scalars.append(("functional_abs", abs(f)))
        witnesses["functional"] = f

    def draw(plt):
        fig, ax = plt.subplots(figsize=(3.2, 3.0))
        ax.bar([0], [prob], width=0.5)
        ax.set_ylim(0, 1.0)
        ax.set_xticks([0])
        ax.set_xticklabels(["history"])
        ax.set_ylabel("probability")
        fig.tight_layout()
        return fig

    return scalars, [], witnesses, draw


def _embed_vector_or_state(value, path, dim):
    if isinstance(value, list) and value and not isinstance(value[0], list):
        vec = _as_vector(value, path)
        if vec.size != dim:
            raise ConfigInvalid(f"{path}: expected {dim} entries, got {vec.size}")
        return np.diag(vec.astype(complex))
    return _as_state(value, path, dim).matrix


def _run_prior(cfg, dim, rng, workers):
    params = _get(cfg, "parameters")
    k = _as_float(_get(params, "k"), "parameters.k")
    alpha = _as_float(_get(params, "alpha", 1.0), "parameters.alpha")
    beta = _as_float(_get(params, "beta", 1.0), "parameters.beta")
    base = _divergence_by_name(_get(params, "kind", "umegaki"), "parameters.kind")
    reference = _embed_vector_or_state(_get(params, "reference"), "parameters.reference", dim)
    state = _embed_vector_or_state(_get(params, "state"), "parameters.state", dim)
    try:
        spec = PriorSpec(k=k, alpha=alpha, beta=beta, reference=reference, base_distance=base)
        value = entropic_prior_density(spec, state)
    except ConfigInvalid:
        raise
    except QigError as exc:
        raise ConfigInvalid(f"parameters: {exc}") from None
    scalars = [("density", value)]

    def draw(plt):
        ks = np.linspace(0.0, max(2.0 * k, 1.0), 40)
        vals = []
        for kv in ks:
            spec_k = PriorSpec(k=float(kv), alpha=alpha, beta=beta, reference=reference, base_distance=base)
            vals.append(entropic_prior_density(spec_k, state))
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        ax.plot(ks, vals)
        ax.axvline(k, ls="--", color="k", lw=0.8)
        ax.set_xlabel("k")
        ax.set_ylabel("density")
        ax.set_title("entropic prior vs strength")
        fig.tight_layout()
        return fig

    return scalars, [], {}, draw


def _run_propagator(cfg, dim, rng, workers):
    import scipy.linalg as sla

    params = _get(cfg, "parameters")
    spin = _as_float(_get(params, "spin", 0.5), "parameters.spin")
    n_theta = _as_int(_get(params, "n_theta", 6), "parameters.n_theta")
    n_phi = _as_int(_get(params, "n_phi", 12), "parameters.n_phi")
    hm = _as_matrix(_get(params, "hamiltonian"), "parameters.hamiltonian")
    z_start = tuple(_as_vector(_get(params, "z_start"), "parameters.z_start"))
    z_end = tuple(_as_vector(_get(params, "z_end"), "parameters.z_end"))
    s = _as_float(_get(params, "time", 1.0), "parameters.time")
    slices = _get(params, "slices", [8, 16, 32, 64])
    if not isinstance(slices, list) or len(slices) < 2:
        raise ConfigInvalid("parameters.slices: expected a list of at least two slice counts")
    slices = [_as_int(n, "parameters.slices") for n in slices]
    symbol = _get(params, "symbol", "transition")
    upsilon = params.get("upsilon")
    upsilon = None if upsilon is None else _as_float(upsilon, "parameters.upsilon")

    try:
        family = spin_coherent_family(spin, n_theta=n_theta, n_phi=n_phi)
    except QigError as exc:
        raise ConfigInvalid(f"parameters.spin: {exc}") from None
    if family.dim != dim:
        raise ConfigInvalid(f"dim: spin {spin} lives in dimension {family.dim}, config says {dim}")
    if hm.shape != (family.dim, family.dim):
        raise ConfigInvalid(
            f"parameters.hamiltonian: expected {family.dim}x{family.dim} for spin {spin}"
        )
    vs = family.vector_map(z_start)
    ve = family.vector_map(z_end)
    exact = complex(np.vdot(ve, sla.expm(-1j * hm * s) @ vs))

    amps, errs = [], []
    for n in slices:
        amp = sliced_propagator(family, hm, z_start, z_end, s, n, symbol=symbol, upsilon=upsilon)
        amps.append(amp)
        errs.append(abs(amp - exact))
    scalars = [("amplitude_abs", abs(amps[-1])), ("error_last", errs[-1])]
    if all(e > 0 for e in errs):
        orders = [np.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
        scalars.append(("observed_order", float(np.mean(orders))))
    residuals = [(f"error_n{n}", e) for n, e in zip(slices, errs)]
    witnesses = {"amplitudes": [complex(a) for a in amps], "reference": exact}

    def draw(plt):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        ax.loglog(slices, np.maximum(errs, 1e-18), "o-")
        ax.set_xlabel("slices")
        ax.set_ylabel("|amplitude error|")
        ax.set_title(f"{symbol} symbol slicing")
        fig.tight_layout()
        return fig

    return scalars, residuals, witnesses, draw


_RUNNERS = {
    "divergence": _run_divergence,
    "geometry": _run_geometry,
    "project": _run_project,
    "evolve": _run_evolve,
    "modular": _run_modular,
    "renorm": _run_renorm,
    "contract": _run_contract,
    "histories": _run_histories,
    "prior": _run_prior,
    "propagator": _run_propagator,
}


# ---------------------------------------------------------------------------
# driver


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigInvalid(f"config file {path!r}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config file {path!r}: not valid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigInvalid("config root: expected a JSON object")
    return cfg


def run_scenario(scenario: str, cfg: dict, workers: int | None = None):
    """Validate the config, run the scenario, and build the report.

    Returns the report together with the figure callback (or None).
    """
    declared = _get(cfg, "scenario")
    if declared != scenario:
        raise ConfigInvalid(
            f"scenario: config declares {declared!r} but {scenario!r} was requested"
        )
    dim = _as_int(_get(cfg, "dim"), "dim")
    if dim < 1:
        raise ConfigInvalid("dim: must be a positive integer")
    if scenario in STOCHASTIC:
        seed = _as_int(_get(cfg, "seed"), "seed")
    else:
        seed = _as_int(_get(cfg, "seed", 0), "seed")
    rng = np.random.default_rng(seed)

    scalars, residuals, witnesses, draw = _RUNNERS[scenario](cfg, dim, rng, workers)
    report = RunReport(
        scenario=scenario,
        engine_version=__version__,
        seed=seed,
        wall_time=None,
        scalars=_apply_checks(cfg, scalars),
        residuals=[(name, float(value)) for name, value in residuals],
        witnesses=witnesses,
    )
    return report, draw


def _render_figure(out_path: str, draw) -> str:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    png = os.path.splitext(out_path)[0] + ".png"
    fig = draw(plt)
    tmp = png + ".tmp"
    fig.savefig(tmp, format="png", dpi=110, metadata={"Software": "qig"})
    plt.close(fig)
    os.replace(tmp, png)
    return png


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qig",
        description="Run one scenario config and write a machine-readable report.",
    )
    parser.add_argument("scenario", choices=SCENARIOS)
    parser.add_argument("--config", required=True, help="path to a JSON scenario config")
    parser.add_argument("--format", choices=("json", "csv"), default="json")
    parser.add_argument("--workers", type=int, default=None, help="parallelism cap (or QIG_WORKERS)")
    parser.add_argument("--out", default=None, help="report path (default: stdout)")
    parser.add_argument(
        "--no-figures", action="store_true", help="skip the PNG figure next to the report"
    )
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    workers = args.workers
    if workers is None:
        env = os.environ.get("QIG_WORKERS")
        if env is not None:
            try:
                workers = int(env)
            except ValueError:
                print(f"qig: QIG_WORKERS={env!r} is not an integer", file=sys.stderr)
                return 2
    if workers is not None and workers < 1:
        print("qig: worker count must be at least 1", file=sys.stderr)
        return 2

    started = time.perf_counter()
    try:
        cfg = load_config(args.config)
        report, draw = run_scenario(args.scenario, cfg, workers=workers)
        text = report_to_json(report) if args.format == "json" else report_to_csv(report)
        out = args.out or cfg.get("output_path")
        if out:
            _atomic_write(out, text)
            if draw is not None and not args.no_figures:
                _render_figure(out, draw)
        else:
            sys.stdout.write(text)
    except ConfigInvalid as exc:
        print(f"qig: config error: {exc}", file=sys.stderr)
        return 2
    except QigError as exc:
        print(f"qig: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"qig: io error: {exc}", file=sys.stderr)
        return 3
    elapsed = time.perf_counter() - started
    print(f"qig: {args.scenario} finished in {elapsed:.3f}s", file=sys.stderr)
    return 0


def entry() -> None:
    sys.exit(main())

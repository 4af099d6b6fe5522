"""Run scenarios end to end and write tidy CSV outputs plus a JSON manifest.

Every CSV starts with a ``scenario_hash`` column. The manifest echoes the
fully resolved scenario, so passing it back to :func:`run_scenario`
reproduces the same outputs byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import math
import os
import platform
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import metadata
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import abm
from ._numerics import ConvergenceError
from .bestresp import attack_free_optimum, best_response
from .epidemic import (
    AdaptivePolicy,
    FixedPolicy,
    convergence_time_bounds,
    integrate_dynamics,
    steady_state_fixed_ktype,
    steady_state_strategic,
)
from .equilibrium import solve_ne
from .model import ModelError, foresighted_utility
from .reward import (
    joint_optimize,
    operator_outcome,
    operator_utility_brute,
    optimal_reward_attack_free,
    optimal_reward_secure,
    participation_mix,
)
from .scenario import Scenario, build, load_scenario, normalize, scenario_hash, set_param

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
MANIFEST = "manifest.json"

Table = Tuple[str, List[str], List[list]]


@dataclass
class RunContext:
    dt: Optional[float] = None
    tol: Optional[float] = None
    jobs: int = 1


@dataclass
class RunResult:
    out_dir: Path
    experiment: str
    scenario_hash: str
    outputs: Dict[str, str]
    summary: dict = field(default_factory=dict)

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / MANIFEST


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _atomic_write(path: Path, write: Callable):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_table(path: Path, header: Sequence[str], rows: Sequence[Sequence], shash: str):
    """RFC-4180 CSV with a leading scenario-hash column."""

    def write(fh):
        wr = csv.writer(fh, lineterminator="\r\n")
        wr.writerow(["scenario_hash", *header])
        for row in rows:
            wr.writerow([shash, *map(_cell, row)])

    _atomic_write(path, write)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def versions() -> Dict[str, str]:
    out = {"python": platform.python_version()}
    for dist in ("artifact", "numpy", "scipy", "numba", "jsonschema"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = "unknown"
    return out


def _json_safe(x):
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# ---------------------------------------------------------------- experiments


def _rates_and_weights(section: dict, sc: Scenario, key: str):
    rates = section.get(key)
    if rates is None:
        raise ModelError(f"{key} must be given for fixed-rate runs")
    weights = section.get("weights") or sc.weights
    return np.asarray(rates, dtype=float), np.asarray(weights, dtype=float)


def _tol_kw(ctx: RunContext) -> dict:
    return {} if ctx.tol is None else {"tol": ctx.tol}


def exp_solve_br(sc: Scenario, ctx: RunContext) -> Tuple[List[Table], dict]:
    header = ["type", "theta", "a_star", "a_af", "theta_bar", "foresighted_utility", "residual"]
    rows = []
    for k, t in enumerate(sc.types, 1):
        a_af = attack_free_optimum(t, sc.scheme)
        for theta in sc.doc["best_response"]["thetas"]:
            br = best_response(t, sc.scheme, sc.env, theta, **_tol_kw(ctx))
            U = foresighted_utility(t, sc.scheme, sc.env, br.a_star, theta)
            rows.append([k, theta, br.a_star, a_af, br.theta_bar, U, br.residual])
    return [("best_response.csv", header, rows)], {"rows": len(rows)}


def _dynamics_policy(sc: Scenario):
    dyn = sc.doc["dynamics"]
    if dyn["policy"] == "fixed":
        a, w = _rates_and_weights(dyn, sc, "actions")
        return FixedPolicy(a, w)
    return AdaptivePolicy(sc.types, sc.scheme, sc.env)


def _steady_state(sc: Scenario, ctx: RunContext):
    dyn = sc.doc["dynamics"]
    if dyn["policy"] == "fixed":
        a, w = _rates_and_weights(dyn, sc, "actions")
        ss = steady_state_fixed_ktype(a, w, sc.env, **_tol_kw(ctx))
        return ss.theta_inf, ss.tau_c, ss.persistent, ss.theta_k, w
    if len(sc.types) == 1:
        ss = steady_state_strategic(sc.types[0], sc.scheme, sc.env, **_tol_kw(ctx))
        return ss.theta_inf, ss.tau_c, ss.persistent, ss.theta_k, np.array([1.0])
    # with several types the observed-state dynamics settle at the equilibrium level
    ne = solve_ne(sc.types, sc.scheme, sc.env, **_tol_kw(ctx))
    return ne.theta_inf, ne.tau_c, ne.persistent, ne.theta_k_inf, np.asarray(ne.weights)


def exp_steady_state(sc: Scenario, ctx: RunContext) -> Tuple[List[Table], dict]:
    dyn = sc.doc["dynamics"]
    theta, tau_c, persistent, theta_k, w = _steady_state(sc, ctx)
    header = ["type", "weight", "theta_k", "theta_inf", "tau", "tau_c", "persistent"]
    rows = [
        [k, wk, th, theta, sc.env.tau, tau_c, persistent]
        for k, (wk, th) in enumerate(zip(w, theta_k), 1)
    ]
    tables: List[Table] = [("steady_state.csv", header, rows)]
    summary = {"theta_inf": theta, "tau_c": tau_c, "persistent": persistent}

    dt = ctx.dt if ctx.dt is not None else dyn["dt"]
    traj = integrate_dynamics(
        dyn["theta0"], sc.env, _dynamics_policy(sc), dyn["horizon"], dt, dyn["record_every"]
    )
    tables.append(("trajectory.csv", traj.header(), list(traj.rows())))
    summary["trajectory_final"] = traj.final.theta

    eps = dyn.get("epsilon")
    if eps is not None and dyn["policy"] == "adaptive" and len(sc.types) == 1 and persistent:
        lo, hi = convergence_time_bounds(dyn["theta0"], eps, sc.env, sc.types[0], sc.scheme)
        tables.append(
            ("convergence_bounds.csv", ["theta0", "epsilon", "lower", "upper"], [[dyn["theta0"], eps, lo, hi]])
        )
        summary["bounds"] = [lo, hi]
    return tables, summary


def exp_ne(sc: Scenario, ctx: RunContext) -> Tuple[List[Table], dict]:
    ne = solve_ne(sc.types, sc.scheme, sc.env, **_tol_kw(ctx))
    header = [
        "type", "weight", "a_ne", "a_af", "theta_k", "theta_inf", "tau", "tau_c",
        "persistent", "participation", "effective_participation", "residual",
    ]
    rows = [
        [k, w, a, attack_free_optimum(t, sc.scheme), th, ne.theta_inf, sc.env.tau, ne.tau_c,
         ne.persistent, ne.participation, ne.effective_participation, ne.residual]
        for k, (t, w, a, th) in enumerate(zip(sc.types, ne.weights, ne.a_ne, ne.theta_k_inf), 1)
    ]
    summary = {"theta_inf": ne.theta_inf, "tau_c": ne.tau_c, "a_ne": list(ne.a_ne)}
    return [("ne.csv", header, rows)], summary


def exp_reward_opt(sc: Scenario, ctx: RunContext) -> Tuple[List[Table], dict]:
    r_max = sc.scheme.r_max
    af = optimal_reward_attack_free(sc.types, sc.operator, r_max)
    sec = optimal_reward_secure(sc.types, sc.operator, sc.env, r_max)
    brute = operator_utility_brute(sc.types, sc.operator, sc.env, sec.r0_star, r_max)
    header = ["problem", "r0_star", "operator_utility", "binding", "a_af_mix", "r0_bar", "brute_utility"]
    rows = [
        ["attack_free", af.r0_star, af.operator_utility, af.binding, af.a_af_mix, af.r0_bar, ""],
        ["secure", sec.r0_star, sec.operator_utility, sec.binding, sec.a_af_mix, sec.r0_bar, brute],
    ]
    summary = {"r0_attack_free": af.r0_star, "r0_secure": sec.r0_star, "binding": sec.binding}
    return [("reward_opt.csv", header, rows)], summary


def exp_joint_opt(sc: Scenario, ctx: RunContext) -> Tuple[List[Table], dict]:
    sol = joint_optimize(sc.types, sc.operator, sc.tech, sc.scheme.r_max)
    header = ["r0_star", "tau_star", "operator_utility", "j0", "p"]
    rows = [[sol.r0_star, sol.tau_star, sol.operator_utility, sc.tech.j0, sc.tech.p]]
    return [("joint_opt.csv", header, rows)], {"r0_star": sol.r0_star, "tau_star": sol.tau_star}


def _sim_inputs(sc: Scenario, ctx: RunContext) -> dict:
    """Keyword arguments for :func:`abm.simulate` according to ``sim.mode``."""
    sim = sc.doc["sim"]
    mode = sim["mode"]
    kw = {"scheme": sc.scheme, "operator": sc.operator}
    if mode == abm.ADAPTIVE:
        return {**kw, "mode": abm.ADAPTIVE, "types": sc.types}
    if mode == "ne":
        # agents hold the equilibrium rates instead of observing the state
        ne = solve_ne(sc.types, sc.scheme, sc.env, **_tol_kw(ctx))
        return {**kw, "mode": abm.FIXED, "fixed_rates": list(ne.a_ne), "types": sc.types}
    rates, w = _rates_and_weights(sim, sc, "fixed_rates")
    out = {**kw, "mode": abm.FIXED, "fixed_rates": list(rates), "weights": list(w)}
    if len(w) == len(sc.types):
        out["types"] = sc.types
    else:
        out["scheme"] = out["operator"] = None
    return out


def seed_for(base: int, index: int) -> int:
    return int(base) ^ int(index)


def _sim_runs(sc: Scenario, ctx: RunContext) -> List[abm.SimTrace]:
    sim = sc.doc["sim"]
    kw = _sim_inputs(sc, ctx)
    traces = []
    for i in range(sim["n_seeds"]):
        cfg = replace(sc.sim_config, seed=seed_for(sc.seed, i))
        traces.append(abm.simulate(cfg, sc.env, sim["horizon_slots"], **kw))
    return traces


TAIL_METRICS = ("theta_hat", "mean_participation", "effective_participation", "operator_utility_rate")


def exp_simulate(sc: Scenario, ctx: RunContext) -> Tuple[List[Table], dict]:
    traces = _sim_runs(sc, ctx)
    tables: List[Table] = []
    summary_rows = []
    for tr in traces:
        rows = [
            [int(tr.slot[i])] + [float(getattr(tr, c)[i]) for c in abm.TRACE_COLUMNS[1:]]
            for i in range(len(tr.slot))
        ]
        tables.append((f"trace_seed{tr.config.seed}.csv", list(abm.TRACE_COLUMNS), rows))
        summary_rows.append([tr.config.seed, tr.eta] + [tr.tail_mean(c) for c in TAIL_METRICS])
    header = ["seed", "eta"] + [f"{c}_tail" for c in TAIL_METRICS]
    tables.append(("simulate.csv", header, summary_rows))
    theta_tail = [r[2] for r in summary_rows]
    return tables, {"theta_hat_tail_mean": float(np.mean(theta_tail))}


# ---------------------------------------------------------------- sweeps


def _point_metrics(target: str, sc: Scenario, ctx: RunContext) -> Dict[str, object]:
    tk = _tol_kw(ctx)
    if target == "solve-br":
        theta = sc.doc["best_response"]["thetas"][0]
        return {f"a_star_{k}": best_response(t, sc.scheme, sc.env, theta, **tk).a_star
                for k, t in enumerate(sc.types, 1)}
    if target == "steady-state":
        theta, tau_c, persistent, _, _ = _steady_state(sc, ctx)
        return {"theta_inf": theta, "tau_c": tau_c, "persistent": persistent}
    if target == "ne":
        ne = solve_ne(sc.types, sc.scheme, sc.env, **tk)
        out = {"theta_inf": ne.theta_inf, "tau_c": ne.tau_c, "participation": ne.participation,
               "effective_participation": ne.effective_participation}
        out.update({f"a_ne_{k}": a for k, a in enumerate(ne.a_ne, 1)})
        return out
    if target == "operator":
        o = operator_outcome(sc.types, sc.operator, sc.env, sc.scheme.r0, sc.scheme.r_max)
        return {"r0": o.r0, "theta_inf": o.theta_inf, "effective_participation": o.effective_participation,
                "operator_utility": o.operator_utility, "participation": o.participation,
                "a_af_mix": participation_mix(sc.types, o.r0, sc.scheme.r_max)}
    if target == "reward-opt":
        s = optimal_reward_secure(sc.types, sc.operator, sc.env, sc.scheme.r_max)
        return {"r0_star": s.r0_star, "operator_utility": s.operator_utility,
                "binding": s.binding, "r0_bar": s.r0_bar}
    if target == "joint-opt":
        j = joint_optimize(sc.types, sc.operator, sc.tech, sc.scheme.r_max)
        return {"r0_star": j.r0_star, "tau_star": j.tau_star, "operator_utility": j.operator_utility}
    if target == "simulate":
        traces = _sim_runs(sc, ctx)
        out = {"eta": float(np.mean([t.eta for t in traces]))}
        out.update({c: float(np.mean([t.tail_mean(c) for t in traces])) for c in TAIL_METRICS})
        return out
    raise ModelError(f"unknown sweep target {target!r}")


def _eval_point(args) -> Tuple[str, str, Dict[str, object]]:
    target, doc, ctx = args
    try:
        return "ok", "", _point_metrics(target, build(doc), ctx)
    except (ModelError, ConvergenceError, ArithmeticError) as e:
        return "error", f"{type(e).__name__}: {e}", {}


def sweep_points(doc: dict) -> List[Tuple[Dict[str, float], dict]]:
    """Cartesian product of the sweep axes; each point gets seed ``seed XOR index``."""
    axes = doc["sweep"]["axes"]
    names = [a["param"] for a in axes]
    points = []
    for idx, combo in enumerate(itertools.product(*(a["values"] for a in axes))):
        d = doc
        for name, val in zip(names, combo):
            d = set_param(d, name, val)
        d = dict(d, seed=seed_for(doc["seed"], idx))
        points.append((dict(zip(names, combo)), d))
    return points


def exp_sweep(sc: Scenario, ctx: RunContext) -> Tuple[List[Table], dict]:
    target = sc.doc["sweep"]["target"]
    points = sweep_points(sc.doc)
    args = [(target, d, ctx) for _, d in points]
    if ctx.jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=ctx.jobs) as pool:
            results = list(pool.map(_eval_point, args))
        # map preserves submission order, so the merged table is deterministic
    else:
        results = [_eval_point(a) for a in args]
    names = [a["param"] for a in sc.doc["sweep"]["axes"]]
    metric_cols: List[str] = []
    for _, _, m in results:
        metric_cols += [c for c in m if c not in metric_cols]
    header = ["point", "seed", *names, "status", "error", *metric_cols]
    rows = []
    for idx, ((vals, d), (status, err, m)) in enumerate(zip(points, results)):
        rows.append([idx, d["seed"], *[vals[n] for n in names], status, err,
                     *[m.get(c) for c in metric_cols]])
    n_err = sum(r[0] != "ok" for r in results)
    if n_err:
        log.warning("%d of %d sweep points failed", n_err, len(points))
    return [("sweep.csv", header, rows)], {"points": len(points), "failed": n_err}


# ---------------------------------------------------------------- comparison


@dataclass(frozen=True)
class MetricGap:
    metric: str
    analytic: float
    abm_mean: float
    abm_std: float
    tolerance: float

    @property
    def gap(self) -> float:
        return abs(self.abm_mean - self.analytic)

    @property
    def passed(self) -> bool:
        return self.gap <= self.tolerance


@dataclass
class CompareReport:
    gaps: List[MetricGap]
    a_af_mix: float
    a_c: float
    traces: List[abm.SimTrace]

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.gaps)


def _analytic_levels(sc: Scenario, ctx: RunContext):
    """``(theta_inf, mean participation, effective participation, policy)`` of the mean field."""
    sim = sc.doc["sim"]
    if sim["mode"] == abm.FIXED:
        a, w = _rates_and_weights(sim, sc, "fixed_rates")
        ss = steady_state_fixed_ktype(a, w, sc.env, **_tol_kw(ctx))
        th_k = np.asarray(ss.theta_k)
        return ss.theta_inf, float(w @ a), float(np.sum(w * (1 - th_k) * a)), FixedPolicy(a, w)
    ne = solve_ne(sc.types, sc.scheme, sc.env, **_tol_kw(ctx))
    if sim["mode"] == "ne":
        policy = FixedPolicy(ne.a_ne, ne.weights)
    else:
        policy = AdaptivePolicy(sc.types, sc.scheme, sc.env)
    return ne.theta_inf, ne.participation, ne.effective_participation, policy


def compare_meanfield_abm(sc: Scenario, ctx: Optional[RunContext] = None) -> Tuple[CompareReport, List[Table]]:
    """Run the analytic and simulated pipelines and report per-metric gaps."""
    ctx = ctx or RunContext()
    cmp_ = sc.doc["compare"]
    tols = cmp_["tolerances"]
    theta, part, eff, policy = _analytic_levels(sc, ctx)
    traces = _sim_runs(sc, ctx)
    frac = cmp_["tail_fraction"]

    gaps = []
    for metric, analytic in (("theta", theta), ("mean_participation", part), ("effective_participation", eff)):
        col = "theta_hat" if metric == "theta" else metric
        vals = [t.tail_mean(col, frac) for t in traces]
        gaps.append(MetricGap(metric, analytic, float(np.mean(vals)), float(np.std(vals)), tols[metric]))

    try:
        a_af = participation_mix(sc.types, sc.scheme.r0, sc.scheme.r_max)
    except ModelError:
        a_af = math.nan
    a_c = 1.0 / sc.env.tau if sc.env.tau > 0 else math.inf
    report = CompareReport(gaps, a_af, a_c, traces)

    gap_rows = [[g.metric, g.analytic, g.abm_mean, g.abm_std, g.gap, g.tolerance, g.passed] for g in gaps]
    tables: List[Table] = [
        ("compare.csv", ["metric", "analytic", "abm_mean", "abm_std", "gap", "tolerance", "pass"], gap_rows)
    ]

    # averaged ABM trajectories next to the mean-field path and reference levels
    cfg = sc.sim_config
    S = cfg.slots_per_unit_time
    t_abm = traces[0].slot / S
    dt = ctx.dt if ctx.dt is not None else 1.0 / S
    mf = integrate_dynamics(cfg.theta0, sc.env, policy, float(t_abm[-1]), dt, record_every=max(1, int(round(1.0 / (dt * S)))))
    theta_mf = np.interp(t_abm, mf.t, mf.theta)
    th_mean = np.mean([t.theta_hat for t in traces], axis=0)
    part_mean = np.mean([t.mean_participation for t in traces], axis=0)
    rows = [
        [int(traces[0].slot[i]), float(t_abm[i]), th_mean[i], theta_mf[i], part_mean[i], a_af, a_c]
        for i in range(len(t_abm))
    ]
    tables.append(
        ("compare_trajectory.csv",
         ["slot", "t", "theta_hat_mean", "theta_meanfield", "mean_participation", "a_af_mix", "a_c"],
         rows)
    )
    return report, tables


def exp_compare(sc: Scenario, ctx: RunContext) -> Tuple[List[Table], dict]:
    report, tables = compare_meanfield_abm(sc, ctx)
    summary = {"passed": report.passed, "gaps": {g.metric: g.gap for g in report.gaps}}
    return tables, summary


EXPERIMENT_FUNCS: Dict[str, Callable[[Scenario, RunContext], Tuple[List[Table], dict]]] = {
    "solve-br": exp_solve_br,
    "steady-state": exp_steady_state,
    "ne": exp_ne,
    "reward-opt": exp_reward_opt,
    "joint-opt": exp_joint_opt,
    "simulate": exp_simulate,
    "sweep": exp_sweep,
    "compare": exp_compare,
}


# ---------------------------------------------------------------- entry point


def resolve(
    doc: dict,
    experiment: Optional[str] = None,
    seed: Optional[int] = None,
    dt: Optional[float] = None,
    tol: Optional[float] = None,
) -> dict:
    """Apply command-line overrides and re-validate."""
    doc = dict(doc)
    if experiment is not None:
        doc["experiment"] = experiment
    if seed is not None:
        doc["seed"] = int(seed)
    if tol is not None:
        doc["tol"] = float(tol)
    if dt is not None:
        doc["dynamics"] = dict(doc["dynamics"], dt=float(dt))
    return normalize(doc)


def run_scenario(
    path,
    out_dir="out",
    experiment: Optional[str] = None,
    seed: Optional[int] = None,
    dt: Optional[float] = None,
    tol: Optional[float] = None,
    jobs: int = 1,
) -> RunResult:
    """Run the scenario (or manifest) at ``path`` and write its outputs to ``out_dir``."""
    doc = resolve(load_scenario(path), experiment, seed, dt, tol)
    return run_doc(doc, out_dir, jobs)


def run_doc(doc: dict, out_dir="out", jobs: int = 1) -> RunResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sc = build(doc)
    shash = scenario_hash(doc)
    ctx = RunContext(dt=doc["dynamics"]["dt"], tol=doc.get("tol"), jobs=jobs)
    experiment = doc["experiment"]
    log.info("running %s (scenario %s) into %s", experiment, shash, out)
    tables, summary = EXPERIMENT_FUNCS[experiment](sc, ctx)

    outputs = {}
    for name, header, rows in tables:
        path = out / name
        write_table(path, header, rows, shash)
        outputs[name] = _sha256(path)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "experiment": experiment,
        "scenario_hash": shash,
        "seed": doc["seed"],
        "scenario": doc,
        "versions": versions(),
        "outputs": outputs,
        "summary": _json_safe(summary),
    }
    _atomic_write(out / MANIFEST, lambda fh: fh.write(_manifest_text(manifest)))
    return RunResult(out, experiment, shash, outputs, summary)


def _manifest_text(manifest: dict) -> str:
    return json.dumps(manifest, indent=2, sort_keys=True, allow_nan=False) + "\n"

"""Experiment orchestration: problem instances, runs, sweeps and output files."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..baselines import wirtinger_flow
from ..core import INIT, PROBLEM, Objective, make_ensemble, stream_generator
from ..diagnostics import SuccessCriterion, aggregate, lyapunov_V
from ..dynamics import RunTrace, run
from ..errors import ConfigurationError, MirrorCBXError
from ..mirror_maps import BallMap, make_constraint, make_mirror_map
from ..objectives import (ackley_objective, half_norm_squared, holder_table_objective,
                          l1_residual, lift, lifted_objective, make_deconvolution,
                          make_phase_retrieval, make_simplex_regression, quadratic_fidelity,
                          sample_stiefel_uniform, unlift)
from ..variants import make_optimizer
from .config import ExperimentConfig, parse_config, resolve_array, set_path, to_params

__all__ = [
    "CSV_COLUMNS",
    "Instance",
    "build_instance",
    "execute_run",
    "run_experiment",
    "sweep",
    "write_outputs",
    "traces_to_csv",
    "worker_count",
]

CSV_COLUMNS = ("run", "iter", "best_energy", "consensus_dist", "alpha", "lyapunov")


@dataclass
class Instance:
    """One concrete problem: objective, reference point and error measure."""

    objective: Objective
    dim: int
    target: Optional[np.ndarray] = None
    error_fn: Optional[Callable] = None
    noise_level: float = 0.0
    phase: object = None


def _spec_dict(model):
    return {k: v for k, v in model.model_dump().items() if v is not None}


def _shift(cfg, dim, rng):
    p = cfg.problem
    if isinstance(p.shift, str) and p.shift == "random_stiefel":
        if p.stiefel_n is None or p.stiefel_p is None or p.stiefel_n * p.stiefel_p != dim:
            raise ConfigurationError("random_stiefel shift needs stiefel_n * stiefel_p == dim")
        return sample_stiefel_uniform(p.stiefel_n, p.stiefel_p, rng).ravel(order="F")
    if isinstance(p.shift, str) and p.shift == "random_normal":
        return rng.standard_normal(dim)
    shift = resolve_array(p.shift, cfg.base_dir)
    return np.broadcast_to(shift, (dim,)).astype(np.float64)


def _constraint(cfg):
    opt = cfg.optimizer
    if opt.constraint is not None:
        return make_constraint(_spec_dict(opt.constraint))
    if opt.mirror_map is not None and opt.mirror_map.set is not None:
        return make_constraint(_spec_dict(opt.mirror_map.set))
    return None


def _matrix(cfg, name):
    value = getattr(cfg.problem, name)
    if value is None:
        raise ConfigurationError(f"problem.{name} is required for {cfg.problem.kind!r}")
    return resolve_array(value, cfg.base_dir)


def build_instance(cfg: ExperimentConfig, run_index: int) -> Instance:
    """Problem instance of one run; stochastic builders draw from the run's stream."""
    p = cfg.problem
    rng = stream_generator(cfg.seed, run_index, 0, PROBLEM)
    kind = p.kind
    if kind in ("ackley", "holder_table", "half_norm_squared"):
        dim = 2 if kind == "holder_table" else p.dim
        if dim is None:
            raise ConfigurationError("problem.dim is required")
        shift = _shift(cfg, dim, rng) if kind != "half_norm_squared" else np.zeros(dim)
        if kind == "ackley":
            J = ackley_objective(dim, p.a, p.b, p.c, shift)
        elif kind == "holder_table":
            J = holder_table_objective(shift)
        else:
            J = half_norm_squared(dim)
        inst = Instance(J, dim, target=shift)
        if cfg.target == "projected_shift":
            con = _constraint(cfg)
            if con is None:
                raise ConfigurationError("target 'projected_shift' needs a constraint set")
            inst.target = con.project(shift)
    elif kind in ("quadratic_fidelity", "l1_residual"):
        A = np.atleast_2d(_matrix(cfg, "A"))
        b = np.atleast_1d(_matrix(cfg, "rhs"))
        J = quadratic_fidelity(A, b, p.scale) if kind == "quadratic_fidelity" else l1_residual(A, b)
        inst = Instance(J, A.shape[1])
    elif kind == "deconvolution":
        for name in ("dim", "K", "sigma_kappa", "n_peaks"):
            if getattr(p, name) is None:
                raise ConfigurationError(f"problem.{name} is required for deconvolution")
        prob = make_deconvolution(p.dim, p.K, p.sigma_kappa, p.n_peaks, p.noise_factor, rng)
        J = quadratic_fidelity(prob.A, prob.b, p.scale)
        inst = Instance(J, p.dim, target=prob.x_true, noise_level=prob.noise_level)
    elif kind == "simplex_regression":
        if p.dim is None or p.d_tilde is None:
            raise ConfigurationError("problem.dim and problem.d_tilde are required")
        prob = make_simplex_regression(p.dim, p.d_tilde, p.noise_factor, rng)
        J = (l1_residual(prob.A, prob.b) if p.fidelity == "l1"
             else quadratic_fidelity(prob.A, prob.b, p.scale))
        inst = Instance(J, p.dim, target=prob.x_true, noise_level=prob.noise_level)
    else:  # phase_retrieval
        if p.dim is None or p.M is None:
            raise ConfigurationError("problem.dim and problem.M are required")
        prob = make_phase_retrieval(p.dim, p.M, p.noise_factor, rng)
        lifted = cfg.optimizer.kind != "wirtinger_flow"
        J = lifted_objective(prob)
        x = prob.x_true

        def err(z, lifted=lifted):
            v = unlift(prob, z) if lifted else np.asarray(z, dtype=np.float64)
            return float(min(np.linalg.norm(v - x), np.linalg.norm(v + x)))

        target = lift(prob, x) if lifted else x
        inst = Instance(J, p.dim + 1 if lifted else p.dim, target=target, error_fn=err,
                        phase=prob)
    if isinstance(cfg.target, list):
        inst.target = np.asarray(cfg.target, dtype=np.float64)
    elif cfg.target == "none":
        inst.target = None
    elif cfg.target == "ground_truth" and inst.target is None:
        raise ConfigurationError(f"problem {kind!r} has no ground truth")
    elif cfg.target == "known" and inst.target is None and inst.objective.known_minimizer is not None:
        inst.target = inst.objective.known_minimizer
    if inst.error_fn is None and inst.target is not None:
        norm = cfg.success.norm if cfg.success is not None else "l2"
        tol = cfg.success.tol if cfg.success is not None else 1.0
        inst.error_fn = SuccessCriterion(inst.target, tol, norm).error
    return inst


def _initial_ensemble(cfg, n, dim, run_index):
    spec = _spec_dict(cfg.init)
    antithetic = spec.pop("antithetic", False)
    spec.pop("space", None)
    if spec.get("data") is not None:
        spec["data"] = resolve_array(spec["data"], cfg.base_dir)
    rng = stream_generator(cfg.seed, run_index, 0, INIT)
    if antithetic:
        if n % 2:
            raise ConfigurationError("antithetic init needs an even particle count")
        half = make_ensemble(spec, n // 2, dim, rng)
        return np.concatenate([half, -half])
    return make_ensemble(spec, n, dim, rng)


def _descent_trace(cfg, inst, run_index):
    prob = inst.phase
    if prob is None:
        raise ConfigurationError("wirtinger_flow needs a phase_retrieval problem")
    opt = cfg.optimizer
    stride = cfg.record_stride
    dt = wirtinger_flow(prob.frames, prob.y, opt.tau0, opt.k_max, stride=stride)
    trace = RunTrace(run_index=run_index)
    best = math.inf
    its = list(range(-1, opt.k_max))
    kept = [k for k in its[1:] if (k + 1) % stride == 0 or k == opt.k_max - 1]
    for k, z, v in zip(kept, dt.iterates[1:], dt.values[1:]):
        best = min(best, v)
        trace.rows.append({"iter": k, "best_energy": best, "consensus_dist": inst.error_fn(z),
                           "alpha": None, "lyapunov": None})
    trace.final_consensus = dt.final
    trace.final_best = dt.final
    trace.final_best_energy = min(dt.values)
    trace.n_iterations = opt.k_max
    return trace


def execute_run(cfg: ExperimentConfig, run_index: int) -> RunTrace:
    """One independent run; library errors are captured in ``trace.failure``."""
    try:
        inst = build_instance(cfg, run_index)
        if cfg.optimizer.kind == "wirtinger_flow":
            trace = _descent_trace(cfg, inst, run_index)
        else:
            trace = _particle_trace(cfg, inst, run_index)
    except (MirrorCBXError, ArithmeticError, np.linalg.LinAlgError) as exc:
        trace = RunTrace(run_index=run_index, failure=f"{type(exc).__name__}: {exc}")
        return trace
    trace.run_index = run_index
    if inst.error_fn is not None and trace.final_consensus is not None:
        trace.error = inst.error_fn(trace.final_consensus)
        if cfg.success is not None:
            trace.success = bool(trace.error <= cfg.success.tol)
    return trace


def _particle_trace(cfg, inst, run_index):
    params = to_params(cfg)
    if params.discrepancy is not None and cfg.optimizer.params.discrepancy.delta is None:
        if not inst.noise_level > 0:
            raise ConfigurationError("discrepancy rule needs delta or a noisy problem")
        params = params.with_(discrepancy=type(params.discrepancy)(
            **{**params.discrepancy.__dict__, "delta": inst.noise_level}))
    opt = cfg.optimizer
    mirror_map = make_mirror_map(_spec_dict(opt.mirror_map)) if opt.mirror_map else None
    optimizer = make_optimizer(opt.kind, mirror_map, _constraint(cfg) if opt.kind != "mirrorcbo" else None)
    x0 = _initial_ensemble(cfg, params.n_particles, inst.dim, run_index)
    if cfg.init.space == "dual":
        state = optimizer.init_state(None, params, cfg.seed, run_index, dual0=x0)
    else:
        state = optimizer.init_state(x0, params, cfg.seed, run_index)
    lyap = mass = None
    if cfg.lyapunov:
        if inst.target is None:
            raise ConfigurationError("lyapunov recording needs a target")
        lmap = optimizer.mirror_map
        lyap = lambda s: lyapunov_V(s.dual, lmap, inst.target)  # noqa: E731
        if isinstance(lmap, BallMap):
            mass = lambda s: float(np.mean(np.linalg.norm(s.dual, axis=1) <= 1.0))  # noqa: E731
    return run(state, optimizer.step, inst.objective, target=inst.target, lyapunov_fn=lyap,
               mass_fn=mass, distance_fn=inst.error_fn if inst.phase is not None else None)


def worker_count(n_runs, requested=None):
    """Pool size: ``requested``, else ``MIRRORCBX_THREADS``, else the CPU count."""
    if requested is None:
        env = os.environ.get("MIRRORCBX_THREADS")
        if env:
            try:
                requested = int(env)
            except ValueError:
                raise ConfigurationError(f"MIRRORCBX_THREADS must be an integer, got {env!r}") from None
        else:
            requested = os.cpu_count() or 1
    return max(1, min(int(requested), n_runs))


def _execute_json(payload):
    data, base_dir, run_index = payload
    return execute_run(parse_config(data, base_dir), run_index)


def run_experiment(cfg: ExperimentConfig, n_runs=None, seed=None, workers=None):
    """Run ``n_runs`` independent runs and summarise them.

    Returns ``(traces, summary)``. Results do not depend on the pool size.
    """
    updates = {}
    if n_runs is not None:
        updates["n_runs"] = int(n_runs)
    if seed is not None:
        updates["seed"] = int(seed)
    if updates:
        cfg = parse_config({**cfg.model_dump(mode="json", exclude={"base_dir"}), **updates},
                           cfg.base_dir)
    n = cfg.n_runs
    w = worker_count(n, workers)
    if w == 1:
        traces = [execute_run(cfg, i) for i in range(n)]
    else:
        data = cfg.model_dump(mode="json", exclude={"base_dir"})
        with ProcessPoolExecutor(max_workers=w) as pool:
            traces = list(pool.map(_execute_json, [(data, cfg.base_dir, i) for i in range(n)]))
    return traces, summarize(cfg, traces)


def summarize(cfg, traces):
    ok = [t for t in traces if t.failure is None]
    summary = {"experiment": cfg.experiment, "n_runs": len(traces),
               "n_failed": len(traces) - len(ok), "success_rate": None,
               "mean_l0": None, "mean_error": None, "median_error": None, "curve": []}
    if ok:
        agg = aggregate(ok, zero_tol=cfg.problem.l0_zero_tol)
        summary.update(success_rate=agg["success_rate"], mean_l0=agg["mean_l0"], curve=agg["curve"])
        errors = [t.error for t in ok if t.error is not None]
        if errors:
            summary["mean_error"] = float(np.mean(errors))
            summary["median_error"] = float(np.median(errors))
    if summary["n_failed"]:
        summary["failures"] = [f"run {t.run_index}: {t.failure}" for t in traces if t.failure]
    return summary


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def traces_to_csv(traces, extra=None):
    """CSV text with header ``run,iter,best_energy,consensus_dist,alpha,lyapunov``.

    ``extra`` is an optional ``(name, value)`` column prepended to every row.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    head = list(CSV_COLUMNS)
    if extra is not None:
        head.insert(0, extra[0])
    writer.writerow(head)
    for t in traces:
        for row in t.rows:
            out = [t.run_index, row["iter"], row["best_energy"], row["consensus_dist"],
                   row["alpha"], row["lyapunov"]]
            line = [_fmt(v) for v in out]
            if extra is not None:
                line.insert(0, _fmt(extra[1]) if not isinstance(extra[1], str) else extra[1])
            writer.writerow(line)
    return buf.getvalue()


def write_outputs(out_dir, experiment, traces, summary):
    """Write ``<experiment>.csv`` and ``<experiment>_summary.json``; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{experiment}.csv"
    json_path = out / f"{experiment}_summary.json"
    csv_path.write_text(traces_to_csv(traces))
    json_path.write_text(json.dumps(summary, indent=2) + "\n")
    return csv_path, json_path


def sweep(cfg: ExperimentConfig, path: str, values, workers=None, out_dir=None):
    """One experiment per value of the dotted parameter ``path``.

    Value ``i`` runs with base seed ``seed + i``. Returns a list of
    ``(value, traces, summary)``; with ``out_dir`` a combined CSV (leading
    ``value`` column) and a JSON list of summaries are written.
    """
    results = []
    for i, value in enumerate(values):
        sub = set_path(cfg, path, value)
        sub = set_path(sub, "seed", cfg.seed + i)
        traces, summary = run_experiment(sub, workers=workers)
        summary["value"] = value
        results.append((value, traces, summary))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        parts = []
        for j, (value, traces, _) in enumerate(results):
            text = traces_to_csv(traces, extra=("value", json.dumps(value)))
            parts.append(text if j == 0 else text.split("\n", 1)[1])
        (out / f"{cfg.experiment}_sweep.csv").write_text("".join(parts))
        (out / f"{cfg.experiment}_sweep_summary.json").write_text(
            json.dumps([s for _, _, s in results], indent=2) + "\n")
    return results

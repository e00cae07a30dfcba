"""Mirror consensus-based optimisation and the stepping machinery it shares.

One iteration evaluates the energies of the primal ensemble, forms the
consensus point, moves the dual particles by the primal drift plus scaled
noise, maps them back through the inverse mirror map and finally runs the
post-step routines (inverse-temperature schedule, discrepancy rule,
resampling) in that order.
"""
from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (NOISE, PERMUTE, RESAMPLE, OptimizerParams, gaussian_block,
                   stream_generator)
from .errors import ConfigurationError, StepError

__all__ = [
    "logsumexp",
    "consensus_weights",
    "compute_consensus",
    "BatchState",
    "compute_consensus_partial",
    "compute_polarized_consensus",
    "isotropic_noise",
    "anisotropic_noise",
    "multiply_alpha",
    "ess_alpha",
    "discrepancy_update",
    "OptimizerState",
    "RunTrace",
    "initialize_state",
    "resample_if_stalled",
    "mirrorcbo_step",
    "run",
]

ARGMIN_ALPHA = 1e12


# --------------------------------------------------------------------------
# consensus


def logsumexp(v):
    v = np.asarray(v, dtype=np.float64)
    a = np.max(v)
    if not np.isfinite(a):
        return a
    return a + math.log(np.sum(np.exp(v - a)))


def consensus_weights(energies, alpha):
    """Normalised Gibbs weights ``exp(-alpha J_i - LSE(-alpha J))``."""
    E = np.asarray(energies, dtype=np.float64)
    # shift by the minimum first so that alpha * E never cancels catastrophically
    z = -alpha * (E - np.min(E))
    return np.exp(z - logsumexp(z))


def _weighted_mean(points, weights):
    # offsetting by the heaviest particle makes a collapsed ensemble an exact fixed point
    ref = points[int(np.argmax(weights))]
    return ref + weights @ (points - ref)


def compute_consensus(primal, energies, alpha):
    """Weighted mean of the particles with softmin weights of the energies."""
    if not alpha > 0:
        raise ConfigurationError("alpha must be > 0")
    primal = np.asarray(primal, dtype=np.float64)
    return _weighted_mean(primal, consensus_weights(energies, alpha))


@dataclass
class BatchState:
    """Remaining indices of the current random permutation."""

    batch_size: int
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def compute_consensus_partial(primal, energies, alpha, batch_state, rng):
    """Consensus of the next ``b`` particles of a running permutation.

    The permutation is redrawn when fewer than ``b`` indices remain. Returns
    the consensus point and the updated batch state.
    """
    primal = np.asarray(primal, dtype=np.float64)
    N = primal.shape[0]
    b = batch_state.batch_size
    if b > N or b < 1:
        raise ConfigurationError(f"batch size {b} not in [1, {N}]")
    idx = batch_state.indices
    if len(idx) < b:
        idx = rng.permutation(N)
    sel, rest = idx[:b], idx[b:]
    m = compute_consensus(primal[sel], np.asarray(energies)[sel], alpha)
    return m, BatchState(b, rest)


def compute_polarized_consensus(primal, energies, alpha, kernel_width):
    """Per-particle consensus with a Gaussian kernel of width ``kernel_width``."""
    if kernel_width <= 0:
        raise ConfigurationError("kernel width must be > 0")
    X = np.asarray(primal, dtype=np.float64)
    sq = np.sum(X * X, axis=1)
    D2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (X @ X.T), 0.0)
    E = np.asarray(energies, dtype=np.float64)
    logw = -D2 / (2.0 * kernel_width ** 2) - alpha * (E - np.min(E))[None, :]
    logw -= np.max(logw, axis=1, keepdims=True)
    W = np.exp(logw)
    W /= np.sum(W, axis=1, keepdims=True)
    out = np.empty_like(X)
    for j in range(X.shape[0]):
        out[j] = _weighted_mean(X, W[j])
    return out


# --------------------------------------------------------------------------
# noise


def isotropic_noise(r, tau, draw):
    """``sqrt(tau) |r| z``, row-wise for ensembles."""
    r = np.asarray(r, dtype=np.float64)
    norm = np.linalg.norm(r, axis=-1, keepdims=True)
    return math.sqrt(tau) * norm * np.asarray(draw)


def anisotropic_noise(r, tau, draw):
    """``sqrt(tau) r * z`` componentwise."""
    return math.sqrt(tau) * np.asarray(r, dtype=np.float64) * np.asarray(draw)


_NOISES = {"isotropic": isotropic_noise, "anisotropic": anisotropic_noise}


# --------------------------------------------------------------------------
# parameter updates


def multiply_alpha(alpha, eta, alpha_max):
    return min(alpha * eta, alpha_max)


def ess_alpha(energies, eta, alpha_max, bracket=None, bisection_tol=1e-6, max_iter=100):
    """Inverse temperature at which the effective sample size equals ``eta * N``.

    The sign of ``e(alpha) = (sum w)^2 - eta N sum w^2`` is evaluated in log
    space. Bisection runs on ``log(alpha)`` inside the bracket; when ``e`` does
    not change sign the bracket end it points to is returned.
    """
    if not 0 < eta < 1:
        raise ConfigurationError("eta must lie in (0, 1)")
    J = np.asarray(energies, dtype=np.float64)
    J = J - np.min(J)
    N = J.size
    lo, hi = bracket if bracket is not None else (1e-8, alpha_max)
    log_eta_n = math.log(eta * N)

    def h(a):
        return 2.0 * logsumexp(-a * J) - logsumexp(-2.0 * a * J) - log_eta_n

    h_lo, h_hi = h(lo), h(hi)
    if h_lo > 0 and h_hi > 0:
        return min(hi, alpha_max)
    if h_lo < 0 and h_hi < 0:
        return lo
    a, b = math.log(lo), math.log(hi)
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        if h(math.exp(mid)) > 0:
            a = mid
        else:
            b = mid
        if b - a < bisection_tol:
            break
    return min(math.exp(0.5 * (a + b)), alpha_max)


def discrepancy_update(lam, J_at_consensus, delta, eta_incr, eta_decr, lam_min, lam_max):
    """Shrink ``lam`` while the residual is below the noise level, grow it otherwise."""
    if 2.0 * J_at_consensus < delta ** 2:
        lam = lam * eta_incr
    else:
        lam = lam * eta_decr
    return min(max(lam, lam_min), lam_max)


# --------------------------------------------------------------------------
# state and trace


@dataclass
class OptimizerState:
    """Mutable optimizer state; ensembles are replaced, never written in place."""

    dual: np.ndarray
    primal: np.ndarray
    params: OptimizerParams
    seed: int = 0
    run: int = 0
    k: int = 0
    alpha: float = 1.0
    sigma_indep: float = 0.0
    lam: float = 0.0
    l0_weight: float = 0.0
    consensus: Optional[np.ndarray] = None
    best_x: Optional[np.ndarray] = None
    best_energy: float = math.inf
    history: deque = field(default_factory=deque)
    batch: Optional[BatchState] = None
    penalty: Optional[Callable[[np.ndarray], np.ndarray]] = None
    resampled: bool = False

    @property
    def n_particles(self):
        return self.primal.shape[0]

    @property
    def dim(self):
        return self.primal.shape[1]


@dataclass
class RunTrace:
    """Per-iteration records plus a terminal summary."""

    rows: list = field(default_factory=list)
    final_consensus: Optional[np.ndarray] = None
    final_best: Optional[np.ndarray] = None
    final_best_energy: float = math.inf
    success: Optional[bool] = None
    wall_time: float = 0.0
    n_iterations: int = 0
    final_dual: Optional[np.ndarray] = None
    final_primal: Optional[np.ndarray] = None
    run_index: int = 0
    error: Optional[float] = None
    failure: Optional[str] = None

    def column(self, name):
        return np.array([row[name] if row[name] is not None else np.nan for row in self.rows])

    def __eq__(self, other):
        if not isinstance(other, RunTrace):
            return NotImplemented
        return (self.rows == other.rows
                and np.array_equal(self.final_consensus, other.final_consensus)
                and self.final_best_energy == other.final_best_energy)


def initialize_state(x0, mirror_map, params, seed=0, run=0, dual0=None):
    """Set ``y_0`` in the subdifferential at ``x_0`` and ``x_0 = inverse(y_0)``.

    Passing ``dual0`` instead starts from a given dual ensemble (useful for
    projection maps whose initial sample lies off the constraint set).
    """
    if dual0 is None:
        dual = mirror_map.forward(np.asarray(x0, dtype=np.float64))
    else:
        dual = np.array(dual0, dtype=np.float64, copy=True)
    primal = mirror_map.inverse(dual)
    res = params.resampling
    return OptimizerState(
        dual=dual, primal=primal, params=params, seed=int(seed), run=int(run),
        alpha=float(params.alpha),
        sigma_indep=res.sigma_indep if res is not None else 0.0,
        lam=float(params.lam), l0_weight=float(params.l0_weight),
        batch=BatchState(params.batching.batch_size) if params.batching else None,
    )


def compute_energies(state, objective):
    """Objective values plus the l0 term and any constraint penalty in the state."""
    X = state.primal
    E = objective.batch_eval(X)
    if state.l0_weight > 0:
        E = E + state.l0_weight * np.count_nonzero(X, axis=1)
    if state.penalty is not None and state.lam > 0:
        E = E + state.lam * state.penalty(X)
    bad = ~np.isfinite(E)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise StepError(f"objective returned {E[i]} for particle {i}: {X[i]!r}",
                        iteration=state.k, particle=i)
    return E


def _consensus(state, energies):
    p = state.params
    X = state.primal
    if p.consensus == "polarized":
        return compute_polarized_consensus(X, energies, state.alpha, p.kernel_width)
    if p.argmin_switch and state.alpha > ARGMIN_ALPHA:
        return X[int(np.argmin(energies))].copy()
    if state.batch is not None:
        rng = stream_generator(state.seed, state.run, state.k, PERMUTE)
        m, state.batch = compute_consensus_partial(X, energies, state.alpha, state.batch, rng)
        return m
    return compute_consensus(X, energies, state.alpha)


def begin_step(state, objective):
    """Energies and consensus for the current ensemble; updates the best particle."""
    E = compute_energies(state, objective)
    i = int(np.argmin(E))
    if E[i] < state.best_energy:
        state.best_energy = float(E[i])
        state.best_x = state.primal[i].copy()
    m = _consensus(state, E)
    state.consensus = m
    return E, m


def scaled_noise(state, r):
    """``sigma * Noise(r, tau)`` with the per-particle draws of iteration ``k``."""
    p = state.params
    if p.sigma == 0:
        return np.zeros_like(r)
    N, d = r.shape
    Z = gaussian_block(state.seed, state.run, state.k, N, d, NOISE)
    return p.sigma * _NOISES[p.noise](r, p.tau, Z)


def _resample_dual(state, mirror_map):
    def apply(noise):
        state.dual = state.dual + noise
        state.primal = mirror_map.inverse(state.dual)
    return apply


def resample_if_stalled(state, apply=None, mirror_map=None):
    """Add independent noise when the consensus has stalled for ``patience`` steps.

    ``apply`` receives the noise ensemble and perturbs the right variables;
    by default the dual ensemble is perturbed and the primal recomputed.
    Returns ``True`` when resampling fired.
    """
    cfg = state.params.resampling
    state.resampled = False
    if cfg is None:
        return False
    hist = state.history
    if len(hist) < cfg.patience + 2:
        return False
    h = list(hist)
    moves = [np.linalg.norm(h[-1 - j] - h[-2 - j]) for j in range(cfg.patience + 1)]
    if not max(moves) < cfg.tol:
        return False
    N, d = state.dual.shape
    Z = gaussian_block(state.seed, state.run, state.k, N, d, RESAMPLE)
    noise = state.sigma_indep * math.sqrt(state.params.tau) * Z
    if apply is None:
        apply = _resample_dual(state, mirror_map)
    apply(noise)
    state.sigma_indep *= cfg.eta
    state.resampled = True
    return True


def post_step(state, objective, energies, m, apply_resample):
    """Scheduler, discrepancy rule and resampling, then advance ``k``."""
    p = state.params
    sch = p.scheduler
    if sch is not None:
        if sch.kind == "multiply":
            state.alpha = multiply_alpha(state.alpha, sch.eta, sch.alpha_max)
        else:
            state.alpha = ess_alpha(energies, sch.eta, sch.alpha_max)
    if p.discrepancy is not None and m.ndim == 1:
        dc = p.discrepancy
        state.l0_weight = discrepancy_update(state.l0_weight, objective(m), dc.delta,
                                             dc.eta_incr, dc.eta_decr, dc.lam_min, dc.lam_max)
    if p.resampling is not None:
        m_hist = m if m.ndim == 1 else np.mean(m, axis=0)
        state.history.append(np.array(m_hist, copy=True))
        while len(state.history) > p.resampling.patience + 2:
            state.history.popleft()
        resample_if_stalled(state, apply_resample)
    state.k += 1
    return state


def mirrorcbo_step(state, mirror_map, objective):
    """One iteration of mirror consensus-based optimisation."""
    p = state.params
    E, m = begin_step(state, objective)
    r = state.primal - m
    dual = state.dual - p.tau * r + scaled_noise(state, r)
    state.dual = dual
    state.primal = mirror_map.inverse(dual)
    return post_step(state, objective, E, m, _resample_dual(state, mirror_map))


# --------------------------------------------------------------------------
# driver


def _row(state, k, m, target, lyapunov_fn, mass_fn, distance_fn=None):
    mm = m if m.ndim == 1 else np.mean(m, axis=0)
    if distance_fn is not None:
        dist = float(distance_fn(mm))
    elif target is not None:
        dist = float(np.linalg.norm(mm - target))
    else:
        dist = None
    row = {
        "iter": k,
        "best_energy": state.best_energy,
        "consensus_dist": dist,
        "alpha": state.alpha,
        "lyapunov": lyapunov_fn(state) if lyapunov_fn is not None else None,
    }
    if mass_fn is not None:
        row["mass_fraction"] = mass_fn(state)
    return row


def run(state, step, objective, target=None, lyapunov_fn=None, mass_fn=None,
        success_fn=None, distance_fn=None):
    """Execute exactly ``params.k_max`` steps of ``step(state, objective)``.

    One row is recorded per executed iteration (or every ``record_stride``
    iterations plus the last); it holds the consensus used in that step. The
    terminal consensus is recomputed from the final ensemble. ``distance_fn``
    overrides the Euclidean distance to ``target``.
    """
    p = state.params
    t0 = time.perf_counter()
    trace = RunTrace()
    target = None if target is None else np.asarray(target, dtype=np.float64)
    for k in range(p.k_max):
        try:
            step(state, objective)
        except StepError as exc:
            if exc.iteration is None:
                exc.iteration = k
            raise
        if (k % p.record_stride == 0) or k == p.k_max - 1:
            trace.rows.append(_row(state, k, state.consensus, target, lyapunov_fn, mass_fn,
                                        distance_fn))
    E = compute_energies(state, objective)
    i = int(np.argmin(E))
    if E[i] < state.best_energy:
        state.best_energy, state.best_x = float(E[i]), state.primal[i].copy()
    if p.consensus == "polarized":
        final = compute_polarized_consensus(state.primal, E, state.alpha, p.kernel_width)
    else:
        final = compute_consensus(state.primal, E, state.alpha)
    trace.final_consensus = final
    trace.final_best = state.best_x
    trace.final_best_energy = state.best_energy
    trace.n_iterations = p.k_max
    trace.final_dual = state.dual
    trace.final_primal = state.primal
    if success_fn is not None:
        trace.success = bool(success_fn(final))
    trace.wall_time = time.perf_counter() - t0
    return trace

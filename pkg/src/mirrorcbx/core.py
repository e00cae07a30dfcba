"""Shared types: ensembles, objectives, optimizer parameters and seeded noise.

Ensembles are plain ``(N, d)`` float64 arrays. Randomness is drawn from
counter-style streams keyed on ``(seed, run, iteration, purpose)`` so that the
Gaussian vector used by particle ``i`` at iteration ``k`` does not depend on
evaluation order, thread count or on which optimizer variant consumes it.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DimensionError

__all__ = [
    "NOISE",
    "RESAMPLE",
    "PERMUTE",
    "INIT",
    "PROBLEM",
    "RngStream",
    "stream_generator",
    "gaussian_block",
    "gaussian_draw",
    "as_ensemble",
    "make_ensemble",
    "Objective",
    "SchedulerConfig",
    "ResamplingConfig",
    "BatchingConfig",
    "DiscrepancyConfig",
    "OptimizerParams",
]

# purpose tags, part of every stream key
NOISE = 0
RESAMPLE = 1
PERMUTE = 2
INIT = 3
PROBLEM = 4


@dataclass(frozen=True)
class RngStream:
    """Coordinates of one Gaussian draw.

    The vector returned by :func:`gaussian_draw` is a pure function of
    ``(seed, run_index, particle_index, iteration_index, purpose)``.
    """

    seed: int
    run_index: int = 0
    particle_index: int = 0
    iteration_index: int = 0
    purpose: int = NOISE

    def __post_init__(self):
        for name in ("seed", "run_index", "particle_index", "iteration_index", "purpose"):
            if int(getattr(self, name)) < 0:
                raise ConfigurationError(f"{name} must be non-negative")


def stream_generator(seed, run=0, iteration=0, purpose=NOISE):
    """Return a fresh ``numpy.random.Generator`` for one stream key."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(run), int(iteration), int(purpose)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def gaussian_block(seed, run, iteration, n, d, purpose=NOISE):
    """Standard normal ``(n, d)`` block; row ``i`` belongs to particle ``i``.

    Rows are generated sequentially from the same stream, so row ``i`` does
    not depend on ``n`` as long as ``n > i``.
    """
    return stream_generator(seed, run, iteration, purpose).standard_normal((n, d))


def gaussian_draw(stream, d):
    """Single-particle view of :func:`gaussian_block`."""
    i = stream.particle_index
    block = gaussian_block(stream.seed, stream.run_index, stream.iteration_index,
                           i + 1, d, stream.purpose)
    return block[i].copy()


def as_ensemble(data):
    """Validate and return an ``(N, d)`` float64 ensemble array."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"ensemble must be a non-empty (N, d) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError("ensemble contains non-finite entries")
    return arr


def make_ensemble(init_spec, n_particles, dim, rng):
    """Draw an initial ensemble.

    Parameters
    ----------
    init_spec : dict
        ``{"kind": ...}`` with one of ``normal(mean, std)``,
        ``uniform(lo, hi)``, ``simplex``, ``sphere(center, radius, radius_max)``,
        ``stiefel(n, p)`` or ``explicit(data)``.
    n_particles, dim : int
    rng : numpy.random.Generator

    Returns
    -------
    ndarray of shape (n_particles, dim)
    """
    if n_particles < 1 or dim < 1:
        raise DimensionError("n_particles and dim must be >= 1")
    spec = dict(init_spec)
    kind = spec.get("kind")
    N, d = int(n_particles), int(dim)
    if kind == "normal":
        mean = np.broadcast_to(np.asarray(spec.get("mean", 0.0), dtype=float), (d,))
        std = float(spec.get("std", 1.0))
        if std <= 0:
            raise ConfigurationError("normal init requires std > 0")
        out = mean + std * rng.standard_normal((N, d))
    elif kind == "uniform":
        lo, hi = float(spec.get("lo", 0.0)), float(spec.get("hi", 1.0))
        if not lo < hi:
            raise ConfigurationError("uniform init requires lo < hi")
        out = rng.uniform(lo, hi, size=(N, d))
    elif kind == "simplex":
        z = rng.exponential(1.0, size=(N, d))
        out = z / np.sum(z, axis=1, keepdims=True)
    elif kind == "sphere":
        center = np.broadcast_to(np.asarray(spec.get("center", 0.0), dtype=float), (d,))
        radius = float(spec.get("radius", 1.0))
        if radius <= 0:
            raise ConfigurationError("sphere init requires radius > 0")
        z = rng.standard_normal((N, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        if spec.get("radius_max") is not None:
            # radii uniform in [radius, radius_max]: a spherical shell
            r_max = float(spec["radius_max"])
            if r_max < radius:
                raise ConfigurationError("sphere init requires radius_max >= radius")
            z *= rng.uniform(radius, r_max, size=(N, 1))
        else:
            z *= radius
        out = center + z
    elif kind == "stiefel":
        from .objectives import sample_stiefel_uniform

        n, p = int(spec["n"]), int(spec["p"])
        if n * p != d or n < p:
            raise DimensionError(f"stiefel init needs dim == n*p and n >= p, got n={n}, p={p}, dim={d}")
        out = np.stack([sample_stiefel_uniform(n, p, rng).ravel(order="F") for _ in range(N)])
    elif kind == "explicit":
        out = as_ensemble(spec["data"])
        if out.shape != (N, d):
            raise DimensionError(f"explicit init has shape {out.shape}, expected {(N, d)}")
        out = out.copy()
    else:
        raise ConfigurationError(f"unknown init kind {kind!r}")
    return np.ascontiguousarray(out, dtype=np.float64)


class Objective:
    """Scalar cost over R^d with a batch evaluation contract.

    ``batch_fn`` maps an ``(N, d)`` array to ``N`` values and must treat rows
    independently with a row-wise reduction order; scalar evaluation routes
    through the same function so ``batch_eval(X)[i] == obj(X[i])`` exactly.
    """

    def __init__(self, batch_fn: Callable[[np.ndarray], np.ndarray], dim: Optional[int] = None,
                 gradient: Optional[Callable] = None, known_minimizer=None, name: str = "objective"):
        self._batch_fn = batch_fn
        self.dim = dim
        self.gradient = gradient
        self.known_minimizer = None if known_minimizer is None else np.asarray(known_minimizer, float)
        self.name = name

    def batch_eval(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise DimensionError("batch_eval expects an (N, d) array")
        if self.dim is not None and X.shape[1] != self.dim:
            raise DimensionError(f"{self.name} expects dimension {self.dim}, got {X.shape[1]}")
        return np.asarray(self._batch_fn(X), dtype=np.float64).reshape(X.shape[0])

    def __call__(self, x):
        return float(self.batch_eval(np.asarray(x, dtype=np.float64)[None, :])[0])

    eval = __call__

    def __repr__(self):
        return f"Objective({self.name}, dim={self.dim})"


@dataclass(frozen=True)
class SchedulerConfig:
    """Inverse-temperature schedule: ``multiply`` or ``ess``."""

    kind: str = "multiply"
    eta: float = 1.05
    alpha_max: float = 1e12

    def __post_init__(self):
        if self.kind not in ("multiply", "ess"):
            raise ConfigurationError(f"unknown scheduler {self.kind!r}")
        if self.eta <= 0 or self.alpha_max <= 0:
            raise ConfigurationError("scheduler requires eta > 0 and alpha_max > 0")
        if self.kind == "ess" and not 0 < self.eta < 1:
            raise ConfigurationError("ess scheduler requires 0 < eta < 1")


@dataclass(frozen=True)
class ResamplingConfig:
    sigma_indep: float = 0.1
    patience: int = 5
    eta: float = 0.99
    tol: float = 1e-5

    def __post_init__(self):
        if self.sigma_indep < 0 or self.patience < 0 or self.eta <= 0 or self.tol < 0:
            raise ConfigurationError("invalid resampling parameters")


@dataclass(frozen=True)
class BatchingConfig:
    batch_size: int

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")


@dataclass(frozen=True)
class DiscrepancyConfig:
    """Adaptive discrepancy rule acting on the l0 penalty weight."""

    delta: float
    eta_incr: float = 0.9
    eta_decr: float = 1.1
    lam_min: float = 0.0
    lam_max: float = 1.0

    def __post_init__(self):
        if self.delta <= 0 or self.eta_incr > 1 or self.eta_decr < 1 or self.lam_min > self.lam_max:
            raise ConfigurationError("invalid discrepancy parameters")


@dataclass(frozen=True)
class OptimizerParams:
    """Hyperparameters shared by every consensus optimizer.

    ``lam``, ``lam1``, ``lam2`` and ``p`` are only read by the penalty-based
    variants; ``l0_weight`` adds ``l0_weight * |x|_0`` to the energies.
    """

    tau: float = 0.1
    alpha: float = 1.0
    sigma: float = 1.0
    noise: str = "isotropic"
    k_max: int = 100
    n_particles: int = 50
    scheduler: Optional[SchedulerConfig] = None
    resampling: Optional[ResamplingConfig] = None
    batching: Optional[BatchingConfig] = None
    discrepancy: Optional[DiscrepancyConfig] = None
    consensus: str = "standard"
    kernel_width: float = 1.0
    argmin_switch: bool = False
    lam: float = 0.0
    lam1: float = 0.0
    lam2: float = 0.0
    p: int = 2
    penalty_eta: float = 1.5
    penalty_tol: float = 1e-3
    penalty_max: float = 1e8
    l0_weight: float = 0.0
    record_stride: int = 1
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigurationError("tau must be > 0")
        if not self.alpha > 0:
            raise ConfigurationError("alpha must be > 0")
        if self.sigma < 0:
            raise ConfigurationError("sigma must be >= 0")
        if self.noise not in ("isotropic", "anisotropic"):
            raise ConfigurationError(f"unknown noise kind {self.noise!r}")
        if self.k_max < 0:
            raise ConfigurationError("k_max must be >= 0")
        if self.n_particles < 1:
            raise ConfigurationError("n_particles must be >= 1")
        if self.consensus not in ("standard", "polarized"):
            raise ConfigurationError(f"unknown consensus kind {self.consensus!r}")
        if self.kernel_width <= 0:
            raise ConfigurationError("kernel_width must be > 0")
        if self.p not in (1, 2):
            raise ConfigurationError("p must be 1 or 2")
        if min(self.lam, self.lam1, self.lam2, self.l0_weight) < 0:
            raise ConfigurationError("penalty weights must be >= 0")
        if self.record_stride < 1:
            raise ConfigurationError("record_stride must be >= 1")
        if self.batching is not None and self.batching.batch_size > self.n_particles:
            raise ConfigurationError("batch_size exceeds n_particles")

    def with_(self, **changes):
        return replace(self, **changes)

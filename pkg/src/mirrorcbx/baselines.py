"""Deterministic gradient baselines: mirror descent, projected gradient descent
and Wirtinger flow for real phase retrieval."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, StepError

__all__ = [
    "DescentTrace",
    "lazy_mirror_descent",
    "projected_gradient_descent",
    "spectral_init",
    "wirtinger_objective",
    "wirtinger_gradient",
    "wirtinger_flow",
]


@dataclass
class DescentTrace:
    """Iterates (every ``stride``-th plus the last), objective values and step sizes."""

    iterates: list = field(default_factory=list)
    values: list = field(default_factory=list)
    steps: list = field(default_factory=list)

    @property
    def final(self):
        return self.iterates[-1]


def _grad_or_fail(objective, x, k):
    if objective.gradient is None:
        raise ConfigurationError(f"objective {objective.name} has no gradient")
    g = np.asarray(objective.gradient(x), dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise StepError(f"gradient is not finite at iteration {k}", iteration=k)
    return g


def lazy_mirror_descent(objective, mirror_map, tau, x0, k_max, stride=1):
    """Dual averaging ``y <- y - tau grad J(x)``, ``x = inverse(y)``, ``y_0 = forward(x_0)``.

    With the elastic-net map this is the linearized Bregman iteration, with
    the negative entropy it is exponentiated gradient descent.
    """
    x = np.asarray(x0, dtype=np.float64)
    y = mirror_map.forward(x)
    x = mirror_map.inverse(y)
    trace = DescentTrace([x.copy()], [objective(x)], [])
    for k in range(k_max):
        y = y - tau * _grad_or_fail(objective, x, k)
        x = mirror_map.inverse(y)
        if (k + 1) % stride == 0 or k == k_max - 1:
            trace.iterates.append(x.copy())
            trace.values.append(objective(x))
        trace.steps.append(tau)
    return trace


def projected_gradient_descent(objective, constraint, tau, x0, k_max, stride=1):
    """``x <- proj(x - tau grad J(x))``."""
    x = np.asarray(x0, dtype=np.float64).copy()
    trace = DescentTrace([x.copy()], [objective(x)], [])
    for k in range(k_max):
        x = constraint.project(x - tau * _grad_or_fail(objective, x, k))
        if (k + 1) % stride == 0 or k == k_max - 1:
            trace.iterates.append(x.copy())
            trace.values.append(objective(x))
        trace.steps.append(tau)
    return trace


def spectral_init(frames, y, max_iter=200, rtol=1e-10):
    """Scaled top eigenvector of ``(1/M) sum y_m f_m f_m^T``.

    The eigenvector comes from power iteration started at the normalised
    all-ones vector; the scale is ``d sum(y) / sum |f_m|^2``.
    """
    F = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    M, d = F.shape
    if M < 1:
        raise ConfigurationError("need at least one frame")
    lam = d * np.sum(y) / np.sum(F * F)
    Y = (F.T * y) @ F / M
    v = np.ones(d) / np.sqrt(d)
    ev = 0.0
    for _ in range(max_iter):
        w = Y @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        v = w / nw
        ev_new = float(v @ Y @ v)
        if abs(ev_new - ev) <= rtol * abs(ev_new):
            break
        ev = ev_new
    return lam * v


def wirtinger_objective(frames, y, z):
    """``(1/2M) sum (<f_m, z>^2 - y_m)^2``."""
    F = np.asarray(frames, dtype=np.float64)
    res = (F @ z) ** 2 - y
    return float(res @ res) / (2.0 * F.shape[0])


def wirtinger_gradient(frames, y, z):
    """Exact gradient ``(2/M) sum (<f_m, z>^2 - y_m) f_m f_m^T z`` of the objective.

    The complex Wirtinger derivative drops the factor 2; for real signals the
    true gradient is used so that it agrees with finite differences.
    """
    F = np.asarray(frames, dtype=np.float64)
    p = F @ z
    return 2.0 * (F.T @ ((p * p - y) * p)) / F.shape[0]


def wirtinger_flow(frames, y, tau0, k_max, z0=None, armijo=0.1, shrink=0.2, trials=50,
                   stride=1):
    """Gradient descent from the spectral initialisation with backtracking.

    A trial step ``tau`` is accepted once ``J(z - tau g) < J(z) - armijo tau |g|^2``;
    otherwise ``tau`` shrinks by ``shrink``. After ``trials`` failures the last
    trial is taken anyway. Each outer iteration restarts from ``tau0``.
    """
    if tau0 <= 0:
        raise ConfigurationError("tau0 must be > 0")
    F = np.asarray(frames, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = spectral_init(F, y) if z0 is None else np.asarray(z0, dtype=np.float64).copy()
    Jz = wirtinger_objective(F, y, z)
    trace = DescentTrace([z.copy()], [Jz], [])
    for k in range(k_max):
        g = wirtinger_gradient(F, y, z)
        gg = float(g @ g)
        used = 0.0
        if gg > 0.0:
            tau = tau0
            for _ in range(trials):
                zt = z - tau * g
                Jt = wirtinger_objective(F, y, zt)
                used = tau
                if Jt < Jz - armijo * tau * gg:
                    break
                tau *= shrink
            z, Jz = zt, Jt
        trace.steps.append(used)
        if (k + 1) % stride == 0 or k == k_max - 1:
            trace.iterates.append(z.copy())
            trace.values.append(Jz)
    return trace

"""Consensus optimizers that compete with or complement the mirror scheme.

Every ``*_step`` function shares the stepping skeleton of
:mod:`mirrorcbx.dynamics`: energies and consensus first, then the variant's
particle update, then the post-step routines. With their constraint strength
set to zero the penalty and drift variants fall back to the plain CBO update
so that trajectories coincide bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import Objective
from .dynamics import (begin_step, initialize_state, mirrorcbo_step,
                       post_step, scaled_noise)
from .errors import ConfigurationError, DimensionError, StepError
from .mirror_maps import (Hyperplane, MirrorMap, QuadraticMap,
                          Quadric, Sphere, Stiefel, shrink)

__all__ = [
    "cbo_step",
    "projected_cbo_step",
    "penalized_objective",
    "penalized_lambda_update",
    "penalized_cbo_step",
    "constraint_penalty",
    "drift_constrained_step",
    "combination_step",
    "hypersurface_sphere_step",
    "hypersurface_stiefel_step",
    "stiefel_tangent_projection",
    "dualized_problem",
    "Optimizer",
    "OPTIMIZER_KINDS",
    "make_optimizer",
]

_COND_MAX = 1e14


def _resample_primal(state, project=None):
    def apply(noise):
        x = state.primal + noise
        if project is not None:
            x = project(x)
        state.primal = x
        state.dual = x
    return apply


def _set_primal(state, x):
    state.primal = x
    state.dual = x


# --------------------------------------------------------------------------
# plain and projected CBO


def cbo_step(state, objective):
    """Euler-Maruyama step ``x <- x - tau (x - m) + sigma Noise(x - m, tau)``."""
    p = state.params
    E, m = begin_step(state, objective)
    r = state.primal - m
    _set_primal(state, state.primal - p.tau * r + scaled_noise(state, r))
    return post_step(state, objective, E, m, _resample_primal(state))


def projected_cbo_step(state, objective, constraint):
    """CBO step followed by projection of every particle onto ``constraint``.

    Resampling noise is added after the projection and the result is
    projected again right away, so recorded ensembles stay feasible.
    """
    p = state.params
    E, m = begin_step(state, objective)
    r = state.primal - m
    x = constraint.project(state.primal - p.tau * r + scaled_noise(state, r))
    _set_primal(state, x)
    return post_step(state, objective, E, m, _resample_primal(state, constraint.project))


# --------------------------------------------------------------------------
# penalized CBO


def constraint_penalty(constraint, p=2, form="natural"):
    """Batch function ``x -> |g(x)|^p``.

    ``form="quadric"`` uses ``|x|^2 - 1`` for the sphere instead of ``|x| - 1``.
    """
    if p not in (1, 2):
        raise ConfigurationError("p must be 1 or 2")
    g = _g_function(constraint, form)

    def G(X):
        v = np.abs(g(X))
        return v * v if p == 2 else v
    return G


def _g_function(constraint, form="natural"):
    if isinstance(constraint, Sphere) and form == "quadric":
        return lambda X: np.sum(X * X, axis=-1) - 1.0
    if not hasattr(constraint, "g"):
        raise ConfigurationError(f"constraint {constraint!r} has no level-set function g")
    return constraint.g


def penalized_objective(J, g, p, lam):
    """``J(x) + lam * |g(x)|^p`` as a new :class:`Objective`.

    ``g`` maps an ``(N, d)`` array to ``N`` constraint values.
    """
    if p not in (1, 2):
        raise ConfigurationError("p must be 1 or 2")
    if lam < 0:
        raise ConfigurationError("lam must be >= 0")
    if lam == 0:
        return J

    def batch(X):
        v = np.abs(g(X))
        return J.batch_eval(X) + lam * (v * v if p == 2 else v)
    return Objective(batch, dim=J.dim, name=f"penalized_{J.name}")


def penalized_lambda_update(lam, ensemble, g, p=2, eta=1.5, tol=1e-3, lam_max=1e8):
    """Grow ``lam`` by ``eta`` while the mean violation ``|g|^p`` exceeds ``tol``."""
    v = np.abs(g(np.asarray(ensemble, dtype=np.float64)))
    viol = float(np.mean(v * v if p == 2 else v))
    if viol > tol:
        lam = min(lam * eta, lam_max)
    return lam


def penalized_cbo_step(state, objective, constraint):
    """CBO on ``J + lam G_p`` with the multiplicative ``lam`` schedule."""
    pr = state.params
    if state.penalty is None:
        state.penalty = constraint_penalty(constraint, pr.p)
    E, m = begin_step(state, objective)
    r = state.primal - m
    _set_primal(state, state.primal - pr.tau * r + scaled_noise(state, r))
    if state.lam > 0:
        state.lam = penalized_lambda_update(state.lam, state.primal, constraint.g, pr.p,
                                            pr.penalty_eta, pr.penalty_tol, pr.penalty_max)
    return post_step(state, objective, E, m, _resample_primal(state))


# --------------------------------------------------------------------------
# drift-constrained CBO


def _penalty_derivatives(constraint, X):
    """Gradient and Hessian of ``G = g^2`` for every row of ``X``."""
    g = constraint.g(X)
    dg = constraint.grad_g(X)
    d2g = constraint.hess_g(X)
    grad = 2.0 * g[:, None] * dg
    hess = 2.0 * dg[:, :, None] * dg[:, None, :] + 2.0 * g[:, None, None] * d2g
    return grad, hess


def _solve_batch(M, rhs, state):
    cond = np.linalg.cond(M)
    bad = ~(cond < _COND_MAX)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise StepError(f"implicit system of particle {i} is singular (cond={cond[i]:.3g})",
                        iteration=state.k, particle=i)
    return np.linalg.solve(M, rhs[:, :, None])[:, :, 0]


def drift_constrained_step(state, objective, constraint, lam=None):
    """Semi-implicit step ``x <- x - (I + tau lam Hess G)^{-1} v`` with ``G = g^2``.

    ``v = tau (x - m) + tau lam grad G(x) - sigma Noise(x - m, tau)``.
    """
    p = state.params
    lam = p.lam if lam is None else lam
    E, m = begin_step(state, objective)
    X = state.primal
    r = X - m
    noise = scaled_noise(state, r)
    if lam == 0:
        x = X - p.tau * r + noise
    else:
        grad, hess = _penalty_derivatives(constraint, X)
        v = p.tau * r + p.tau * lam * grad - noise
        M = np.eye(X.shape[1]) + p.tau * lam * hess
        x = X - _solve_batch(M, v, state)
    _set_primal(state, x)
    return post_step(state, objective, E, m, _resample_primal(state))


# --------------------------------------------------------------------------
# combination of penalized consensus and implicit drift


def combination_step(state, objective, constraint, lam1=None, lam2=None):
    """Consensus of ``J + lam1 G_2``, explicit CBO predictor, implicit drift correction.

    Closed-form corrections: hyperplane ``v - 2 tau lam2 g n/|n|``; sphere
    ``v / (1 + 4 tau lam2 g)`` with ``g = |x|^2 - 1``; quadric
    ``(I + 4 tau lam2 g Q)^{-1} (v - 2 tau lam2 g n_Q)``.
    """
    p = state.params
    lam1 = p.lam1 if lam1 is None else lam1
    lam2 = p.lam2 if lam2 is None else lam2
    if not isinstance(constraint, (Hyperplane, Sphere, Quadric)):
        raise ConfigurationError("combination step supports hyperplane, sphere and quadric sets")
    state.lam = lam1
    if state.penalty is None:
        state.penalty = constraint_penalty(constraint, 2, form="quadric")
    E, m = begin_step(state, objective)
    X = state.primal
    r = X - m
    v = X - p.tau * r + scaled_noise(state, r)
    if lam2 != 0:
        c = p.tau * lam2
        if isinstance(constraint, Hyperplane):
            g = constraint.g(X)
            v = v - 2.0 * c * g[:, None] * (constraint.normal / constraint.norm)
        elif isinstance(constraint, Sphere):
            g = np.sum(X * X, axis=1) - 1.0
            den = 1.0 + 4.0 * c * g
            if np.any(den == 0):
                i = int(np.flatnonzero(den == 0)[0])
                raise StepError("singular sphere correction", iteration=state.k, particle=i)
            v = v / den[:, None]
        else:
            g = constraint.g(X)
            d = X.shape[1]
            M = np.eye(d)[None] + 4.0 * c * g[:, None, None] * constraint.Q[None]
            v = _solve_batch(M, v - 2.0 * c * g[:, None] * constraint.n_Q, state)
    _set_primal(state, v)
    return post_step(state, objective, E, m, _resample_primal(state))


# --------------------------------------------------------------------------
# hypersurface CBO


def hypersurface_sphere_step(state, objective):
    """Tangential drift and noise with Ito correction, then renormalisation."""
    p = state.params
    E, m = begin_step(state, objective)
    X = state.primal
    nx = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(nx == 0):
        i = int(np.flatnonzero(nx[:, 0] == 0)[0])
        raise StepError("particle at the origin", iteration=state.k, particle=i)
    u = X / nx
    r = X - m

    def tangent(V):
        return V - np.sum(V * u, axis=1, keepdims=True) * u

    noise = tangent(scaled_noise(state, r))
    if p.noise == "isotropic":
        corr = np.sum(r * r, axis=1, keepdims=True) * (X.shape[1] - 1) / nx
    else:
        corr = np.sum(r * r, axis=1, keepdims=True) - np.sum((r * u) ** 2, axis=1, keepdims=True)
    x = X - p.tau * tangent(r) + noise - p.tau * 0.5 * p.sigma ** 2 * corr * u
    x = x / np.linalg.norm(x, axis=1, keepdims=True)
    _set_primal(state, x)

    def renorm(z):
        return z / np.linalg.norm(z, axis=1, keepdims=True)
    return post_step(state, objective, E, m, _resample_primal(state, renorm))


def stiefel_tangent_projection(X, Z):
    """``P(X) Z = Z - (X Z^T X + X X^T Z) / 2`` for ``n x p`` matrices (batched)."""
    XZt = np.einsum("...ij,...kj->...ik", X, Z)
    XXt = np.einsum("...ij,...kj->...ik", X, X)
    return Z - 0.5 * (XZt @ X + XXt @ Z)


def hypersurface_stiefel_step(state, objective, manifold):
    """Hypersurface CBO on St(n, p) with isotropic noise, then SVD projection."""
    p = state.params
    if p.noise != "isotropic":
        raise ConfigurationError("the Stiefel hypersurface step supports isotropic noise only")
    E, m = begin_step(state, objective)
    r = state.primal - m
    X = manifold.unflatten(state.primal)
    R = manifold.unflatten(r)
    Z = manifold.unflatten(scaled_noise(state, r))  # sigma sqrt(tau) |r| z
    lap = (2 * manifold.n - manifold.p - 1) / 2.0
    r2 = np.sum(r * r, axis=1)[:, None, None]
    Y = (X - p.tau * stiefel_tangent_projection(X, R) + stiefel_tangent_projection(X, Z)
         - p.tau * 0.5 * p.sigma ** 2 * r2 * lap * X)
    _set_primal(state, manifold.project(manifold.flatten(Y)))
    return post_step(state, objective, E, m, _resample_primal(state, manifold.project))


# --------------------------------------------------------------------------
# dualized problem


def dualized_problem(A, b, lam):
    """Dual objective of ``min lam |x|_1 + |x|^2/2`` s.t. ``Ax = b`` (scaled by ``lam``).

    Returns ``(objective, recover)`` with objective
    ``v -> -<b, v> + lam/2 |A^T v - proj(A^T v)|^2`` (projection onto the
    unit cube) and ``recover(v) = lam * shrink(A^T v, 1)``.
    """
    if not lam > 0:
        raise ConfigurationError("lam must be > 0")
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    if A.shape[0] != b.shape[0]:
        raise DimensionError("A and b have inconsistent shapes")

    def batch(V):
        W = np.einsum("nm,md->nd", V, A)
        R = W - np.clip(W, -1.0, 1.0)
        return -np.einsum("nm,m->n", V, b) + 0.5 * lam * np.sum(R * R, axis=1)

    def grad(v):
        w = A.T @ np.asarray(v, dtype=np.float64)
        return -b + lam * (A @ (w - np.clip(w, -1.0, 1.0)))

    def recover(v):
        return lam * shrink(np.asarray(v, dtype=np.float64) @ A, 1.0)

    return Objective(batch, dim=A.shape[0], gradient=grad, name="dualized"), recover


# --------------------------------------------------------------------------
# uniform optimizer handle


OPTIMIZER_KINDS = (
    "mirrorcbo",
    "cbo",
    "projected",
    "penalized",
    "drift_constrained",
    "combination",
    "hypersurface_sphere",
    "hypersurface_stiefel",
)


@dataclass
class Optimizer:
    """A step function together with the map used to initialise its state."""

    kind: str
    step: Callable
    mirror_map: MirrorMap
    constraint: Optional[object] = None

    def init_state(self, x0, params, seed=0, run=0, dual0=None):
        x0 = np.asarray(x0, dtype=np.float64)
        if self.kind in ("projected", "hypersurface_sphere", "hypersurface_stiefel"):
            proj = self.constraint.project if self.constraint is not None else Sphere().project
            x0 = proj(x0 if dual0 is None else dual0)
            dual0 = None
        elif self.kind != "mirrorcbo" and dual0 is not None:
            x0, dual0 = dual0, None
        return initialize_state(x0, self.mirror_map, params, seed=seed, run=run, dual0=dual0)


def make_optimizer(kind, mirror_map=None, constraint=None):
    """Return an :class:`Optimizer` for one of :data:`OPTIMIZER_KINDS`."""
    if kind not in OPTIMIZER_KINDS:
        raise ConfigurationError(f"unknown optimizer kind {kind!r}")
    quad = QuadraticMap()
    if kind == "mirrorcbo":
        if mirror_map is None:
            raise ConfigurationError("mirrorcbo needs a mirror map")
        return Optimizer(kind, lambda s, J: mirrorcbo_step(s, mirror_map, J), mirror_map,
                         getattr(mirror_map, "constraint", None))
    if kind == "cbo":
        return Optimizer(kind, cbo_step, quad, constraint)
    if kind == "hypersurface_sphere":
        return Optimizer(kind, hypersurface_sphere_step, quad, constraint or Sphere())
    if constraint is None:
        raise ConfigurationError(f"{kind} needs a constraint set")
    if kind == "projected":
        return Optimizer(kind, lambda s, J: projected_cbo_step(s, J, constraint), quad, constraint)
    if kind == "penalized":
        return Optimizer(kind, lambda s, J: penalized_cbo_step(s, J, constraint), quad, constraint)
    if kind == "drift_constrained":
        return Optimizer(kind, lambda s, J: drift_constrained_step(s, J, constraint), quad, constraint)
    if kind == "combination":
        return Optimizer(kind, lambda s, J: combination_step(s, J, constraint), quad, constraint)
    if not isinstance(constraint, Stiefel):
        raise ConfigurationError("hypersurface_stiefel needs a Stiefel constraint")
    return Optimizer(kind, lambda s, J: hypersurface_stiefel_step(s, J, constraint), quad, constraint)

"""Distance generating functions, their inverse maps and Bregman distances.

Every map exposes ``inverse`` (the gradient of the convex conjugate, taking
dual points to primal points), ``forward`` (one element of the
subdifferential at a feasible primal point) and ``phi`` (the value, ``inf``
off the domain). All three act row-wise on ``(N, d)`` arrays and on single
vectors.
"""
from __future__ import annotations

import numpy as np

from .errors import (ConfigurationError, DegenerateConstraintError, DimensionError,
                     DomainError, ProjectionError)

__all__ = [
    "shrink",
    "simplex_inverse",
    "project_hyperplane",
    "project_sphere",
    "project_quadric",
    "project_linf_sphere",
    "project_stiefel",
    "project_ball",
    "Hyperplane",
    "Sphere",
    "Quadric",
    "LinfSphere",
    "Stiefel",
    "Ball",
    "MirrorMap",
    "QuadraticMap",
    "PreconditionedMap",
    "ElasticNetMap",
    "NegLogEntropyMap",
    "ProjectionMap",
    "BallMap",
    "map_inverse",
    "map_forward",
    "bregman_distance",
    "make_constraint",
    "make_mirror_map",
]


# --------------------------------------------------------------------------
# elementary maps


def shrink(y, lam):
    """Componentwise soft thresholding."""
    if lam < 0:
        raise DomainError("shrinkage parameter must be non-negative")
    y = np.asarray(y, dtype=np.float64)
    return np.sign(y) * np.maximum(np.abs(y) - lam, 0.0)


def simplex_inverse(y):
    """Softmax along the last axis, stabilised by subtracting the maximum."""
    y = np.asarray(y, dtype=np.float64)
    z = np.exp(y - np.max(y, axis=-1, keepdims=True))
    return z / np.sum(z, axis=-1, keepdims=True)


def project_hyperplane(z, n, d_H):
    """Orthogonal projection onto ``{x : <n, x> = d_H}``."""
    n = np.asarray(n, dtype=np.float64)
    nn = float(n @ n)
    if nn == 0.0:
        raise DegenerateConstraintError("hyperplane normal must be non-zero")
    z = np.asarray(z, dtype=np.float64)
    coef = (z @ n - d_H) / nn
    return z - np.multiply.outer(coef, n)


def project_sphere(z):
    """Radial projection onto the unit sphere; the origin maps to ``e_1``."""
    z = np.asarray(z, dtype=np.float64)
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    e1 = np.zeros(z.shape[-1])
    e1[0] = 1.0
    safe = np.where(norm > 0, norm, 1.0)
    return np.where(norm > 0, z / safe, e1)


def project_ball(z):
    """Projection onto the closed unit ball."""
    z = np.asarray(z, dtype=np.float64)
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    return np.where(norm > 1.0, z / np.where(norm > 1.0, norm, 1.0), z)


def project_linf_sphere(z):
    """Projection onto ``{x : |x|_inf = 1}`` as clipping followed by snapping.

    Every component attaining the largest magnitude after clipping is set to
    its sign; sign(0) counts as +1, so the origin maps to the all-ones corner.
    """
    z = np.asarray(z, dtype=np.float64)
    c = np.clip(z, -1.0, 1.0)
    a = np.abs(c)
    top = a == np.max(a, axis=-1, keepdims=True)
    sign = np.where(c < 0, -1.0, 1.0)
    return np.where(top, sign, c)


def project_stiefel(X):
    """Closest matrix with orthonormal columns, ``U V^T`` from the thin SVD."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError("project_stiefel expects an (n, p) matrix")
    n, p = X.shape
    if n < p:
        raise DimensionError("Stiefel projection needs n >= p")
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    if s[-1] < 1e-12 * s[0] or s[0] == 0.0:
        raise ProjectionError("matrix is rank deficient", residual=float(s[-1]))
    return U @ Vt


def _project_stiefel_batch(X):
    # X has shape (N, n, p)
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    bad = (s[:, -1] < 1e-12 * s[:, 0]) | (s[:, 0] == 0.0)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ProjectionError(f"matrix {i} is rank deficient", residual=float(s[i, -1]))
    return U @ Vt


def project_quadric(z, Q, n_Q, c_Q, tol=1e-8, max_iter=50):
    """Nearest point on ``{x : <x, Qx> + <n_Q, x> + c_Q = 0}``.

    The nearest point is ``p(t) = (I + 2tQ)^{-1}(z - t n_Q)`` for a Lagrange
    multiplier ``t`` in the interval around zero where ``I + 2tQ`` stays
    positive definite. On that interval ``t -> g(p(t))`` is decreasing, so a
    bracketed Newton iteration finds the root. When the root sits on a pole
    (the degenerate case, e.g. the centre of a sphere) the free components
    are filled in directly; a normal-direction correction is the last resort.
    """
    return Quadric(Q, n_Q, c_Q, tol=tol, max_iter=max_iter).project(z)


# --------------------------------------------------------------------------
# constraint sets


class _ConstraintSet:
    kind = "set"

    def project(self, z):
        raise NotImplementedError

    def distance(self, x):
        """Euclidean distance of each row to the set (via projection)."""
        x = np.asarray(x, dtype=np.float64)
        return np.linalg.norm(x - self.project(x), axis=-1)

    def contains(self, x, tol=1e-8):
        return bool(np.all(self.distance(x) <= tol * (1.0 + np.linalg.norm(x, axis=-1))))

    def __repr__(self):
        return f"{type(self).__name__}()"


class Hyperplane(_ConstraintSet):
    """Affine hyperplane ``<n, x> = d_H``; ``g(x) = (<n, x> - d_H) / |n|``."""

    kind = "hyperplane"

    def __init__(self, normal, offset=0.0):
        self.normal = np.asarray(normal, dtype=np.float64)
        self.norm = float(np.linalg.norm(self.normal))
        if self.norm == 0.0:
            raise DegenerateConstraintError("hyperplane normal must be non-zero")
        self.offset = float(offset)

    def project(self, z):
        return project_hyperplane(z, self.normal, self.offset)

    def g(self, x):
        return (np.asarray(x) @ self.normal - self.offset) / self.norm

    def grad_g(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.broadcast_to(self.normal / self.norm, x.shape).copy()

    def hess_g(self, x):
        x = np.asarray(x, dtype=np.float64)
        d = x.shape[-1]
        return np.zeros(x.shape[:-1] + (d, d))

    def __repr__(self):
        return f"Hyperplane(normal={self.normal.tolist()}, offset={self.offset})"


class Sphere(_ConstraintSet):
    """Unit sphere; ``g(x) = |x| - 1``."""

    kind = "sphere"

    def project(self, z):
        return project_sphere(z)

    def g(self, x):
        return np.linalg.norm(x, axis=-1) - 1.0

    def grad_g(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    def hess_g(self, x):
        x = np.asarray(x, dtype=np.float64)
        r = np.linalg.norm(x, axis=-1)[..., None, None]
        u = x[..., :, None] / r
        eye = np.eye(x.shape[-1])
        return (eye - u * np.swapaxes(u, -1, -2)) / r


class Ball(_ConstraintSet):
    """Closed unit ball."""

    kind = "ball"

    def project(self, z):
        return project_ball(z)


class LinfSphere(_ConstraintSet):
    """Boundary of the unit cube, ``|x|_inf = 1``."""

    kind = "linf_sphere"

    def project(self, z):
        return project_linf_sphere(z)


class Stiefel(_ConstraintSet):
    """``n x p`` matrices with orthonormal columns, stored column-major flat."""

    kind = "stiefel"

    def __init__(self, n, p):
        self.n, self.p = int(n), int(p)
        if self.n < self.p or self.p < 1:
            raise DimensionError("Stiefel manifold needs n >= p >= 1")

    def unflatten(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x.reshape(x.shape[:-1] + (self.p, self.n)).swapaxes(-1, -2)

    def flatten(self, X):
        X = np.asarray(X, dtype=np.float64)
        return X.swapaxes(-1, -2).reshape(X.shape[:-2] + (self.n * self.p,))

    def project(self, z):
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.n * self.p:
            raise DimensionError("flattened Stiefel points need length n*p")
        M = self.unflatten(z)
        if M.ndim == 2:
            return self.flatten(project_stiefel(M))
        return self.flatten(_project_stiefel_batch(M))

    def __repr__(self):
        return f"Stiefel(n={self.n}, p={self.p})"


class Quadric(_ConstraintSet):
    """Quadric surface ``g(x) = <x, Qx> + <n_Q, x> + c_Q = 0``."""

    kind = "quadric"

    def __init__(self, Q, n_Q=None, c_Q=0.0, tol=1e-8, max_iter=50):
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        if Q.shape[0] != Q.shape[1]:
            raise DimensionError("Q must be square")
        self.Q = 0.5 * (Q + Q.T)
        d = Q.shape[0]
        self.n_Q = np.zeros(d) if n_Q is None else np.asarray(n_Q, dtype=np.float64)
        if self.n_Q.shape != (d,):
            raise DimensionError("n_Q must have length d")
        self.c_Q = float(c_Q)
        if tol <= 0:
            raise ConfigurationError("tol must be > 0")
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self.eigvals, self.eigvecs = np.linalg.eigh(self.Q)

    def g(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.einsum("...i,ij,...j->...", x, self.Q, x) + x @ self.n_Q + self.c_Q

    def grad_g(self, x):
        return 2.0 * np.asarray(x, dtype=np.float64) @ self.Q + self.n_Q

    def hess_g(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.broadcast_to(2.0 * self.Q, x.shape[:-1] + self.Q.shape).copy()

    def project(self, z):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            return self._project_one(z)
        return np.stack([self._project_one(row) for row in z])

    # -- scalar multiplier machinery in the eigenbasis of Q
    def _project_one(self, z):
        lam = self.eigvals
        V = self.eigvecs
        zt = V.T @ z
        nt = V.T @ self.n_Q
        c = self.c_Q
        scale = 1.0 + float(np.linalg.norm(z))
        if abs(self.g(z)) <= self.tol:
            return z.copy()

        def point(t):
            return (zt - t * nt) / (1.0 + 2.0 * t * lam)

        def f(t):
            p = point(t)
            return float(np.sum(lam * p * p) + nt @ p + c)

        def fprime(t):
            den = 1.0 + 2.0 * t * lam
            p = (zt - t * nt) / den
            dp = (-nt * den - 2.0 * lam * (zt - t * nt)) / den ** 2
            return float(np.sum((2.0 * lam * p + nt) * dp))

        pos, neg = lam > 1e-14, lam < -1e-14
        lo = float(np.max(-0.5 / lam[pos])) if np.any(pos) else -np.inf
        hi = float(np.min(-0.5 / lam[neg])) if np.any(neg) else np.inf

        candidates = []
        t = self._bracketed_root(f, fprime, lo, hi)
        if t is not None:
            candidates.append(V @ point(t))
        for pole in (lo, hi):
            if np.isfinite(pole):
                cand = self._pole_candidate(pole, zt, nt, lam, c)
                if cand is not None:
                    candidates.append(V @ cand)
        good = [p for p in candidates if abs(self.g(p)) <= self.tol * scale]
        if good:
            dists = [np.linalg.norm(p - z) for p in good]
            return good[int(np.argmin(dists))]
        return self._normal_fallback(z, candidates)

    def _bracketed_root(self, f, fprime, lo, hi):
        # expand unbounded ends until the sign change is bracketed
        a = lo + 1e-12 * max(1.0, abs(lo)) if np.isfinite(lo) else -1.0
        b = hi - 1e-12 * max(1.0, abs(hi)) if np.isfinite(hi) else 1.0
        if not np.isfinite(lo):
            for _ in range(200):
                if f(a) > 0:
                    break
                a *= 2.0
        if not np.isfinite(hi):
            for _ in range(200):
                if f(b) < 0:
                    break
                b *= 2.0
        fa, fb = f(a), f(b)
        if not (np.isfinite(fa) and np.isfinite(fb)) or fa < 0 or fb > 0:
            return None
        t = 0.0 if a < 0.0 < b else 0.5 * (a + b)
        for _ in range(self.max_iter + 200):
            ft = f(t)
            if abs(ft) <= 0.1 * self.tol:
                return t
            if ft > 0:
                a = t
            else:
                b = t
            d = fprime(t)
            t_new = t - ft / d if d != 0 and np.isfinite(d) else 0.5 * (a + b)
            if not (a < t_new < b):
                t_new = 0.5 * (a + b)
            if b - a <= 1e-15 * max(1.0, abs(t_new)):
                return t_new
            t = t_new
        return t

    def _pole_candidate(self, pole, zt, nt, lam, c):
        # at t = pole, components of the singular eigenspace are free
        den = 1.0 + 2.0 * pole * lam
        free = np.abs(den) <= 1e-12
        if not np.any(free):
            return None
        if np.any(np.abs(zt[free] - pole * nt[free]) > 1e-10 * (1.0 + np.abs(zt[free]))):
            return None
        p = np.where(free, 0.0, (zt - pole * nt) / np.where(free, 1.0, den))
        rest = float(np.sum(lam * p * p) + nt @ p + c)
        lam_free = lam[free][0]
        s2 = -rest / lam_free
        if s2 < 0:
            return None
        idx = np.flatnonzero(free)[0]
        p[idx] = np.sqrt(s2)
        return p

    def _normal_fallback(self, z, candidates):
        best = None
        starts = candidates + [z.copy()]
        for p in starts:
            p = p.copy()
            for _ in range(self.max_iter):
                gv = self.g(p)
                if abs(gv) <= self.tol:
                    return p
                grad = self.grad_g(p)
                gg = float(grad @ grad)
                if gg == 0.0:
                    p = p + 1e-6 * np.eye(len(p))[0]
                    continue
                p = p - gv * grad / gg
            if best is None or abs(self.g(p)) < abs(self.g(best)):
                best = p
        raise ProjectionError("quadric projection did not converge", residual=float(abs(self.g(best))))

    def __repr__(self):
        return f"Quadric(d={self.Q.shape[0]}, c_Q={self.c_Q})"


def make_constraint(spec):
    """Build a constraint set from a ``{"kind": ...}`` dictionary."""
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "hyperplane":
        return Hyperplane(spec["normal"], spec.get("offset", 0.0))
    if kind == "sphere":
        return Sphere()
    if kind == "ball":
        return Ball()
    if kind == "linf_sphere":
        return LinfSphere()
    if kind == "stiefel":
        return Stiefel(spec["n"], spec["p"])
    if kind == "quadric":
        return Quadric(spec["Q"], spec.get("n_Q"), spec.get("c_Q", 0.0),
                       spec.get("tol", 1e-8), spec.get("max_iter", 50))
    raise ConfigurationError(f"unknown constraint kind {kind!r}")


# --------------------------------------------------------------------------
# mirror maps


class MirrorMap:
    """Base class; subclasses implement ``inverse``, ``forward`` and ``phi``."""

    kind = "abstract"

    def inverse(self, y):
        raise NotImplementedError

    def forward(self, x):
        raise NotImplementedError

    def phi(self, x):
        raise NotImplementedError

    def bregman(self, x_hat, y):
        """Bregman distance ``D^y(x_hat, inverse(y))``, row-wise over ``y``."""
        y = np.asarray(y, dtype=np.float64)
        x_hat = np.asarray(x_hat, dtype=np.float64)
        phi_hat = self.phi(x_hat)
        if not np.all(np.isfinite(phi_hat)):
            return np.full(y.shape[:-1], np.inf) if y.ndim > 1 else np.inf
        x = self.inverse(y)
        out = phi_hat - self.phi(x) - np.sum(y * (x_hat - x), axis=-1)
        return np.maximum(out, 0.0)

    def __repr__(self):
        return f"{type(self).__name__}()"


class QuadraticMap(MirrorMap):
    """``phi = |x|^2 / 2``; recovers standard CBO."""

    kind = "quadratic"

    def inverse(self, y):
        return np.array(y, dtype=np.float64, copy=True)

    def forward(self, x):
        return np.array(x, dtype=np.float64, copy=True)

    def phi(self, x):
        return 0.5 * np.sum(np.asarray(x) ** 2, axis=-1)

    def bregman(self, x_hat, y):
        return 0.5 * np.sum((np.asarray(y) - np.asarray(x_hat)) ** 2, axis=-1)


class PreconditionedMap(MirrorMap):
    """``phi = <x, Hx> / 2`` for symmetric positive definite ``H``."""

    kind = "preconditioned"

    def __init__(self, H):
        H = np.atleast_2d(np.asarray(H, dtype=np.float64))
        self.H = 0.5 * (H + H.T)
        self._chol = np.linalg.cholesky(self.H)

    def inverse(self, y):
        y = np.asarray(y, dtype=np.float64)
        # solve H x = y row-wise via the Cholesky factor
        L = self._chol
        sol = np.linalg.solve(L.T, np.linalg.solve(L, y.T if y.ndim > 1 else y))
        return sol.T if y.ndim > 1 else sol

    def forward(self, x):
        return np.asarray(x, dtype=np.float64) @ self.H

    def phi(self, x):
        x = np.asarray(x, dtype=np.float64)
        return 0.5 * np.sum((x @ self.H) * x, axis=-1)


class ElasticNetMap(MirrorMap):
    """``phi = |x|^2 / 2 + lam |x|_1``; the inverse map is soft shrinkage."""

    kind = "elastic_net"

    def __init__(self, lam):
        if lam < 0:
            raise DomainError("elastic net parameter must be non-negative")
        self.lam = float(lam)

    def inverse(self, y):
        return shrink(y, self.lam)

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x + self.lam * np.sign(x)

    def phi(self, x):
        x = np.asarray(x, dtype=np.float64)
        return 0.5 * np.sum(x * x, axis=-1) + self.lam * np.sum(np.abs(x), axis=-1)

    def __repr__(self):
        return f"ElasticNetMap(lam={self.lam})"


class NegLogEntropyMap(MirrorMap):
    """Negative log-entropy restricted to the probability simplex."""

    kind = "neg_log_entropy"

    def __init__(self, tol=1e-8):
        self.tol = tol

    def inverse(self, y):
        return simplex_inverse(y)

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if np.any(x <= 0) or np.any(np.abs(np.sum(x, axis=-1) - 1.0) > self.tol):
            raise DomainError("point is not in the open probability simplex")
        return x

    def forward(self, x):
        return np.log(self._check(x)) + 1.0

    def phi(self, x):
        x = np.asarray(x, dtype=np.float64)
        on = (np.all(x >= 0, axis=-1)) & (np.abs(np.sum(x, axis=-1) - 1.0) <= self.tol)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.sum(np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0), axis=-1)
        return np.where(on, val, np.inf)


class ProjectionMap(MirrorMap):
    """``phi = |x|^2 / 2 + indicator(C)``; the inverse map projects onto ``C``."""

    kind = "projection"

    def __init__(self, constraint, tol=1e-8):
        self.constraint = constraint
        self.tol = tol

    def inverse(self, y):
        return self.constraint.project(y)

    def _feasible(self, x):
        x = np.asarray(x, dtype=np.float64)
        dist = self.constraint.distance(x)
        return dist <= self.tol * (1.0 + np.linalg.norm(x, axis=-1))

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if not np.all(self._feasible(x)):
            raise DomainError(f"point lies off the constraint set {self.constraint!r}")
        return x.copy()

    def phi(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.where(self._feasible(x), 0.5 * np.sum(x * x, axis=-1), np.inf)

    def __repr__(self):
        return f"ProjectionMap({self.constraint!r})"


class BallMap(ProjectionMap):
    """Indicator of the unit ball plus the squared norm.

    Its conjugate is ``|y|^2/2`` inside the ball and ``|y| - 1/2`` outside.
    """

    kind = "ball"

    def __init__(self, tol=1e-12):
        super().__init__(Ball(), tol=tol)

    def conjugate(self, y):
        r = np.linalg.norm(y, axis=-1)
        return np.where(r <= 1.0, 0.5 * r * r, r - 0.5)

    def bregman(self, x_hat, y):
        x_hat = np.asarray(x_hat, dtype=np.float64)
        if np.all(x_hat == 0):
            return self.conjugate(np.asarray(y, dtype=np.float64))
        return super().bregman(x_hat, y)


def make_mirror_map(spec):
    """Build a mirror map from a ``{"kind": ...}`` dictionary."""
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "quadratic":
        return QuadraticMap()
    if kind == "preconditioned":
        return PreconditionedMap(spec["H"])
    if kind == "elastic_net":
        return ElasticNetMap(spec["lam"])
    if kind == "neg_log_entropy":
        return NegLogEntropyMap()
    if kind == "ball":
        return BallMap()
    if kind == "projection":
        return ProjectionMap(make_constraint(spec["set"]))
    raise ConfigurationError(f"unknown mirror map kind {kind!r}")


def map_inverse(mirror_map, y):
    return mirror_map.inverse(y)


def map_forward(mirror_map, x):
    return mirror_map.forward(x)


def bregman_distance(mirror_map, x_hat, y):
    """Bregman distance between ``x_hat`` and ``inverse(y)`` w.r.t. ``y``.

    Returns ``inf`` when ``x_hat`` lies outside the domain of the map.
    """
    out = mirror_map.bregman(x_hat, y)
    return float(out) if np.ndim(out) == 0 else out

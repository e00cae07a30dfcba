"""Benchmark objectives and inverse-problem builders."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Objective
from .errors import ConfigurationError, DimensionError, DomainError

__all__ = [
    "ackley",
    "ackley_objective",
    "holder_table",
    "holder_table_objective",
    "quadratic_fidelity",
    "l1_residual",
    "quadratic_form",
    "half_norm_squared",
    "LinearInverseProblem",
    "make_deconvolution",
    "convolution_matrix",
    "make_simplex_regression",
    "PhaseRetrievalProblem",
    "make_phase_retrieval",
    "lift",
    "unlift",
    "lifted_objective",
    "phase_success",
    "sample_stiefel_uniform",
    "l0_norm",
    "sparsity",
]


def _rowwise_matvec(X, A):
    # (N, d) x (m, d) -> (N, m) without BLAS so every row is reduced identically
    return np.einsum("nd,md->nm", X, A)


def _ackley_batch(X, a, b, c, shift):
    Z = X - shift
    d = X.shape[1]
    r = np.sqrt(np.sum(Z * Z, axis=1))
    cs = np.sum(np.cos(2.0 * np.pi * c * Z), axis=1) / d
    return -a * np.exp(-(b / np.sqrt(d)) * r) - np.exp(cs) + np.e + a


def ackley(x, a=20.0, b=0.1, c=1.0, shift=0.0):
    """Ackley function with the decaying first exponential; ``ackley(shift) == 0``."""
    x = np.asarray(x, dtype=np.float64)
    shift = np.broadcast_to(np.asarray(shift, dtype=np.float64), x.shape[-1:])
    X = x[None, :] if x.ndim == 1 else x
    out = _ackley_batch(X, a, b, c, shift)
    return float(out[0]) if x.ndim == 1 else out


def ackley_objective(dim, a=20.0, b=0.1, c=1.0, shift=0.0):
    shift = np.broadcast_to(np.asarray(shift, dtype=np.float64), (dim,)).copy()
    return Objective(lambda X: _ackley_batch(X, a, b, c, shift), dim=dim,
                     known_minimizer=shift, name="ackley")


def _holder_batch(X, shift):
    Z = X - shift
    r = np.sqrt(np.sum(Z * Z, axis=1))
    return -(1.0 / np.pi) * np.abs(np.sin(Z[:, 0]) * np.cos(Z[:, 1])) * np.exp(1.0 - r)


def holder_table(x, shift=0.0):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 2:
        raise DimensionError("the Hoelder table function is defined for d = 2")
    shift = np.broadcast_to(np.asarray(shift, dtype=np.float64), (2,))
    X = x[None, :] if x.ndim == 1 else x
    out = _holder_batch(X, shift)
    return float(out[0]) if x.ndim == 1 else out


def holder_table_objective(shift=0.0):
    shift = np.broadcast_to(np.asarray(shift, dtype=np.float64), (2,)).copy()
    return Objective(lambda X: _holder_batch(X, shift), dim=2, name="holder_table")


def _check_system(A, b):
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    if A.shape[0] != b.shape[0]:
        raise DimensionError(f"A has {A.shape[0]} rows but b has length {b.shape[0]}")
    return A, b


def quadratic_fidelity(A, b, scale=0.5):
    """``J(x) = scale * |Ax - b|^2`` with gradient ``2 scale A^T(Ax - b)``."""
    A, b = _check_system(A, b)

    def batch(X):
        R = _rowwise_matvec(X, A) - b
        return scale * np.sum(R * R, axis=1)

    def grad(x):
        return 2.0 * scale * (A.T @ (A @ np.asarray(x, dtype=np.float64) - b))

    return Objective(batch, dim=A.shape[1], gradient=grad, name="quadratic_fidelity")


def l1_residual(A, b):
    """``J(x) = |Ax - b|_1``."""
    A, b = _check_system(A, b)

    def batch(X):
        return np.sum(np.abs(_rowwise_matvec(X, A) - b), axis=1)

    return Objective(batch, dim=A.shape[1], name="l1_residual")


def quadratic_form(A):
    """``J(x) = <x, Ax> / 2`` with gradient ``Ax``; minimiser at the origin."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    A = 0.5 * (A + A.T)
    d = A.shape[0]

    def batch(X):
        return 0.5 * np.sum(_rowwise_matvec(X, A) * X, axis=1)

    return Objective(batch, dim=d, gradient=lambda x: A @ np.asarray(x, float),
                     known_minimizer=np.zeros(d), name="quadratic_form")


def half_norm_squared(dim):
    """``J(x) = |x|^2 / 2``."""
    return Objective(lambda X: 0.5 * np.sum(X * X, axis=1), dim=dim,
                     gradient=lambda x: np.asarray(x, float).copy(),
                     known_minimizer=np.zeros(dim), name="half_norm_squared")


@dataclass
class LinearInverseProblem:
    """``b = A x_true + eps`` with ``|eps| = noise_level``."""

    A: np.ndarray
    b: np.ndarray
    noise_level: float = 0.0
    x_true: Optional[np.ndarray] = None

    def __post_init__(self):
        self.A, self.b = _check_system(self.A, self.b)
        if self.x_true is not None and self.x_true.shape != (self.A.shape[1],):
            raise DimensionError("x_true has the wrong length")

    @property
    def dim(self):
        return self.A.shape[1]


def convolution_matrix(kernel, d):
    """Lower-triangular banded matrix of ``x -> kernel * x`` with zero boundary."""
    kernel = np.asarray(kernel, dtype=np.float64)
    C = np.zeros((d, d))
    for j, kj in enumerate(kernel):
        if j >= d:
            break
        C += kj * np.eye(d, k=-j)
    return C


def make_deconvolution(d, K, sigma_kappa, n_peaks, noise_factor, rng):
    """Sparse deconvolution instance with Gaussian kernel ``exp(-j^2 / (2 sigma_kappa))``.

    The noise vector is Gaussian, rescaled so that ``|eps| = noise_factor * d``.
    """
    if K > d or K < 1:
        raise ConfigurationError("kernel size must satisfy 1 <= K <= d")
    if n_peaks > d or n_peaks < 0:
        raise ConfigurationError("n_peaks must lie in [0, d]")
    j = np.arange(K)
    kernel = np.exp(-(j ** 2) / (2.0 * sigma_kappa))
    A = convolution_matrix(kernel, d)
    x_true = np.zeros(d)
    pos = rng.choice(d, size=n_peaks, replace=False)
    x_true[pos] = rng.uniform(0.0, 1.0, size=n_peaks)
    delta = float(noise_factor) * d
    eps = rng.standard_normal(d)
    nrm = np.linalg.norm(eps)
    eps = eps * (delta / nrm) if nrm > 0 else eps * 0.0
    return LinearInverseProblem(A, A @ x_true + eps, noise_level=delta, x_true=x_true)


def make_simplex_regression(d, d_tilde, noise_factor, rng):
    """Robust regression on the simplex: Gaussian rows, ``|eps| = noise_factor * sqrt(d_tilde)``."""
    A = rng.standard_normal((d_tilde, d))
    z = rng.exponential(1.0, size=d)
    x_true = z / np.sum(z)
    eps = rng.standard_normal(d_tilde)
    delta = float(noise_factor) * np.sqrt(d_tilde)
    eps = eps * (delta / np.linalg.norm(eps))
    return LinearInverseProblem(A, A @ x_true + eps, noise_level=delta, x_true=x_true)


@dataclass
class PhaseRetrievalProblem:
    """Real phase retrieval ``y_m = <f_m, x>^2 (+ noise)`` with a lifting radius."""

    frames: np.ndarray
    y: np.ndarray
    x_true: Optional[np.ndarray] = None

    def __post_init__(self):
        self.frames = np.atleast_2d(np.asarray(self.frames, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.float64)
        S = self.frames.T @ self.frames
        self.frame_bound = float(np.linalg.eigvalsh(S)[0])
        if self.frame_bound <= 0:
            raise DomainError("frame vectors do not span R^d (lower frame bound <= 0)")
        self.radius = float(np.sqrt(np.sum(np.abs(self.y)) / self.frame_bound))

    @property
    def dim(self):
        return self.frames.shape[1]


def make_phase_retrieval(d, M, noise_factor, rng):
    """Frames uniform on the unit sphere, unit-norm ground truth, additive Gaussian noise."""
    if M < d:
        raise ConfigurationError("phase retrieval needs M >= d")
    F = rng.standard_normal((M, d))
    F /= np.linalg.norm(F, axis=1, keepdims=True)
    x = rng.standard_normal(d)
    x /= np.linalg.norm(x)
    y = (F @ x) ** 2
    if noise_factor > 0:
        eps = rng.standard_normal(M)
        y = y + eps * (noise_factor * np.sqrt(d) / np.linalg.norm(eps))
    return PhaseRetrievalProblem(F, y, x_true=x)


def lift(problem, x):
    """Map ``x`` with ``|x| <= R`` to a unit vector in R^{d+1}."""
    x = np.asarray(x, dtype=np.float64)
    R = problem.radius
    r2 = float(x @ x)
    if r2 > R * R * (1 + 1e-12):
        raise DomainError("cannot lift a point outside the ball of radius R")
    return np.concatenate([x, [np.sqrt(max(R * R - r2, 0.0))]]) / R


def unlift(problem, z):
    return problem.radius * np.asarray(z, dtype=np.float64)[..., :-1]


def lifted_objective(problem):
    """Sum of squared misfits of ``<(f|0), z>^2`` against ``y / R^2`` on R^{d+1}."""
    F = problem.frames
    target = problem.y / problem.radius ** 2
    d = problem.dim

    def batch(Z):
        P = _rowwise_matvec(Z[:, :d], F)
        R = P * P - target
        return np.sum(R * R, axis=1)

    return Objective(batch, dim=d + 1, name="lifted_phase_retrieval")


def phase_success(problem, x_approx, tol, lifted=True):
    """Success up to the global sign, after unlifting when ``lifted``."""
    x = unlift(problem, x_approx) if lifted else np.asarray(x_approx, dtype=np.float64)
    err = min(np.linalg.norm(x - problem.x_true), np.linalg.norm(x + problem.x_true))
    return bool(err <= tol)


def sample_stiefel_uniform(n, p, rng):
    """Uniform sample on St(n, p) as ``Z (Z^T Z)^{-1/2}`` with Gaussian ``Z``."""
    if n < p:
        raise DimensionError("need n >= p")
    for _ in range(2):
        Z = rng.standard_normal((n, p))
        w, V = np.linalg.eigh(Z.T @ Z)
        if w[0] > 1e-12 * w[-1]:
            return Z @ (V / np.sqrt(w)) @ V.T
    raise DomainError("Z^T Z is singular")


def l0_norm(x, zero_tol=0.0):
    x = np.asarray(x, dtype=np.float64)
    return int(np.count_nonzero(np.abs(x) > zero_tol))


def sparsity(x, zero_tol=0.0):
    x = np.asarray(x, dtype=np.float64)
    return 1.0 - l0_norm(x, zero_tol) / x.size

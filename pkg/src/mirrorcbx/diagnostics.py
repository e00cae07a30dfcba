"""Lyapunov functional, mass fractions, success metrics and run aggregation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError
from .objectives import l0_norm

__all__ = [
    "lyapunov_V",
    "mass_fraction",
    "SuccessCriterion",
    "success_rate",
    "aggregate",
]


def lyapunov_V(dual, mirror_map, x_hat):
    """Mean Bregman distance ``(1/N) sum_n D^{y_n}(x_hat, inverse(y_n))``.

    Returns ``inf`` if any term is infinite.
    """
    Y = np.atleast_2d(np.asarray(dual, dtype=np.float64))
    x_hat = np.asarray(x_hat, dtype=np.float64)
    D = np.asarray(mirror_map.bregman(x_hat, Y), dtype=np.float64)
    if np.any(np.isinf(D)):
        return math.inf
    return float(np.mean(D))


def mass_fraction(dual, predicate):
    """Fraction of rows of ``dual`` for which ``predicate(row)`` holds."""
    Y = np.atleast_2d(np.asarray(dual, dtype=np.float64))
    return float(np.mean([bool(predicate(y)) for y in Y]))


@dataclass(frozen=True)
class SuccessCriterion:
    """``|final - target| <= tol`` in the ``l2``, ``linf`` or ``l1`` norm."""

    target: np.ndarray
    tol: float = 0.1
    norm: str = "l2"

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigurationError("tol must be > 0")
        if self.norm not in ("l2", "linf", "l1"):
            raise ConfigurationError(f"unknown norm {self.norm!r}")

    def error(self, x):
        diff = np.asarray(x, dtype=np.float64) - np.asarray(self.target, dtype=np.float64)
        if self.norm == "linf":
            return float(np.max(np.abs(diff)))
        if self.norm == "l1":
            return float(np.sum(np.abs(diff)))
        return float(np.linalg.norm(diff))

    def __call__(self, x):
        return self.error(x) <= self.tol


def success_rate(final_points: Sequence, criterion):
    """Fraction of runs whose final point satisfies ``criterion``.

    ``criterion`` may be a single :class:`SuccessCriterion` or one per run.
    """
    if len(final_points) < 1:
        raise ConfigurationError("need at least one run")
    crits = criterion if isinstance(criterion, (list, tuple)) else [criterion] * len(final_points)
    return float(np.mean([bool(c(x)) for c, x in zip(crits, final_points)]))


def aggregate(traces, criterion=None, zero_tol=0.0):
    """Summarise equally long traces.

    Returns a dict with the pointwise mean and median consensus-distance
    curves, the success rate (from ``trace.success`` or ``criterion``) and the
    mean l0 norm of the final consensus points.
    """
    if len(traces) < 1:
        raise ConfigurationError("need at least one trace")
    lengths = {len(t.rows) for t in traces}
    if len(lengths) != 1:
        raise DimensionError(f"traces have unequal lengths {sorted(lengths)}")
    dist = np.array([t.column("consensus_dist") for t in traces], dtype=np.float64)
    iters = [row["iter"] for row in traces[0].rows]
    if criterion is not None:
        rate = success_rate([t.final_consensus for t in traces], criterion)
    elif all(t.success is not None for t in traces):
        rate = float(np.mean([t.success for t in traces]))
    else:
        rate = None
    l0 = float(np.mean([l0_norm(t.final_consensus, zero_tol) for t in traces]))
    with np.errstate(all="ignore"):
        mean = np.mean(dist, axis=0) if dist.size else np.zeros(0)
        median = np.median(dist, axis=0) if dist.size else np.zeros(0)
    curve = [{"iter": it, "mean_consensus_dist": _num(mu), "median_consensus_dist": _num(md)}
             for it, mu, md in zip(iters, mean, median)]
    return {"n_runs": len(traces), "success_rate": rate, "mean_l0": l0, "curve": curve}


def _num(v):
    v = float(v)
    return None if math.isnan(v) else v

"""Baseline diagram representations: p-Wasserstein distance and Betti curves.

The Wasserstein matching is solved exactly as an (n+m) x (n+m) assignment
problem: each diagram is augmented with the other's orthogonal diagonal
projections, diagonal-to-diagonal cells cost zero, and the Hungarian solver
(scipy's linear_sum_assignment) finds the optimal matching. Ground distance
is Euclidean in the (birth, death) plane.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .diagram import PersistenceDiagram
from .errors import InvalidInputError


@dataclass
class MatchingResult:
    cost: float
    # pairings: (i, j) matches d1[i] to d2[j]; (i, None) sends d1[i] to the
    # diagonal; (None, j) sends d2[j] to the diagonal.
    assignment: list


@dataclass
class BettiCurve:
    samples: np.ndarray
    t_min: float
    t_max: float


def _coords(diagram):
    pts = []
    for p in diagram.points:
        if math.isinf(p.death):
            raise InvalidInputError(
                "diagram contains essential (infinite-death) points; "
                "filter them out before computing Wasserstein distance"
            )
        pts.append((p.birth, p.death))
    return np.array(pts, dtype=float).reshape(-1, 2)


def wasserstein(d1, d2, p=1.0):
    """Exact p-Wasserstein matching distance between two finite diagrams."""
    if p <= 0:
        raise InvalidInputError("p must be positive")
    a = _coords(d1)
    b = _coords(d2)
    n, m = a.shape[0], b.shape[0]
    if n == 0 and m == 0:
        return MatchingResult(cost=0.0, assignment=[])

    size = n + m
    cost = np.zeros((size, size), dtype=float)
    if n and m:
        diff = a[:, None, :] - b[None, :, :]
        cost[:n, :m] = np.hypot(diff[..., 0], diff[..., 1]) ** p
    diag_a = (np.abs(a[:, 1] - a[:, 0]) / math.sqrt(2.0)) ** p if n else np.zeros(0)
    diag_b = (np.abs(b[:, 1] - b[:, 0]) / math.sqrt(2.0)) ** p if m else np.zeros(0)
    # d1 point i -> any diagonal column; diagonal row -> d2 point j
    cost[:n, m:] = diag_a[:, None]
    cost[n:, :m] = diag_b[None, :]
    # diagonal-to-diagonal cells stay 0

    rows, cols = linear_sum_assignment(cost)
    total = float(cost[rows, cols].sum())
    assignment = []
    for i, j in zip(rows, cols):
        if i < n and j < m:
            assignment.append((int(i), int(j)))
        elif i < n:
            assignment.append((int(i), None))
        elif j < m:
            assignment.append((None, int(j)))
    return MatchingResult(cost=total ** (1.0 / p), assignment=assignment)


def betti_curve(diagram, dim, n_samples=40, t_min=None, t_max=None):
    """Betti curve: sample count of intervals with birth <= t < death.

    t values are n_samples uniform points over [t_min, t_max] (endpoints
    included; a single sample sits at t_min). Defaults span the diagram.
    """
    pts = [(p.birth, p.death) for p in diagram.points if p.dim == dim]
    if t_min is None:
        t_min = min((b for b, _ in pts), default=0.0)
    if t_max is None:
        finite = [d for _, d in pts if math.isfinite(d)]
        t_max = max(finite, default=t_min + 1.0)
        if t_max <= t_min:
            t_max = t_min + 1.0
    if n_samples < 1:
        raise InvalidInputError("n_samples must be >= 1")
    if not t_min < t_max:
        raise InvalidInputError("need t_min < t_max")
    ts = np.linspace(t_min, t_max, n_samples)
    samples = np.zeros(n_samples, dtype=np.int64)
    for b, d in pts:
        samples += (b <= ts) & (ts < d)
    return BettiCurve(samples=samples, t_min=float(t_min), t_max=float(t_max))

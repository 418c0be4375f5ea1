"""Empirical measures, Wasserstein-2 distances and conditional-mean estimators.

The 1-D distance is exact (order statistics / quantile coupling).  For joint
wealth-strategy measures the production metric is sliced Wasserstein-2 over
random unit directions; an exact assignment solver is available for small
atom counts and serves as the oracle in tests.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DomainError
from .rng import substream

EXACT_ATOM_LIMIT = 256
WEIGHT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted atoms over R^d.  Weights are nonnegative and sum to one."""

    points: np.ndarray   # (M, d)
    weights: np.ndarray  # (M,)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        if pts.shape[0] == 0:
            raise DomainError("empirical measure needs at least one atom")
        if not np.all(np.isfinite(pts)):
            raise DomainError("atom coordinates must be finite")
        if w.shape != (pts.shape[0],):
            raise DomainError("one weight per atom required")
        if np.any(w < 0.0):
            raise DomainError("weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > WEIGHT_TOL:
            raise DomainError("weights must sum to 1")

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def uniform(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.size, atol=WEIGHT_TOL, rtol=0.0))

    def integrate(self, f) -> float:
        """Weighted sum of f over atoms; f maps (M, d) -> (M,)."""
        vals = np.asarray(f(self.points), dtype=np.float64)
        return float(np.dot(self.weights, vals))

    def scaled(self, lam: float) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.points * lam, self.weights)


def empirical_measure(points, weights=None) -> EmpiricalMeasure:
    """Normalized empirical measure; uniform 1/M weights by default.

    A flat input array is read as M atoms in R^1; pass shape (M, d) for
    d-dimensional atoms.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts[:, None]
    m = pts.shape[0]
    if weights is None:
        w = np.full(m, 1.0 / m)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if np.any(w < 0.0):
            raise DomainError("negative weight")
        total = float(w.sum())
        if total <= 0.0:
            raise DomainError("weights must have positive mass")
        w = w / total
    return EmpiricalMeasure(pts, w)


# ---------------------------------------------------------------------------
# 1-D Wasserstein-2
# ---------------------------------------------------------------------------


def _quantile_function(values: np.ndarray, weights: np.ndarray, q: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    v = values[order]
    cum = np.cumsum(weights[order])
    idx = np.searchsorted(cum, q, side="left")
    return v[np.minimum(idx, v.size - 1)]


def wasserstein2_1d(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Exact W2 between 1-D measures.

    Equal atom counts with uniform weights reduce to sorted pairing; general
    weights use the quantile coupling on the merged cdf grid.
    """
    if a.d != 1 or b.d != 1:
        raise DomainError("wasserstein2_1d requires 1-D measures")
    xa = a.points[:, 0]
    xb = b.points[:, 0]
    if a.size == b.size and a.uniform and b.uniform:
        d2 = np.mean((np.sort(xa) - np.sort(xb)) ** 2)
        return float(np.sqrt(d2))
    cum = np.unique(np.concatenate([np.cumsum(a.weights), np.cumsum(b.weights)]))
    cum = cum[(cum > 0.0) & (cum <= 1.0 + WEIGHT_TOL)]
    cum = np.minimum(cum, 1.0)
    seg = np.diff(np.concatenate([[0.0], cum]))
    qa = _quantile_function(xa, a.weights, cum - 1e-15)
    qb = _quantile_function(xb, b.weights, cum - 1e-15)
    return float(np.sqrt(np.sum(seg * (qa - qb) ** 2)))


def wasserstein2_exact(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Exact W2 in any dimension by solving the assignment problem.

    Restricted to uniform weights, equal atom counts and at most
    EXACT_ATOM_LIMIT atoms; this is the test oracle, not the production
    metric.
    """
    if a.size != b.size or not (a.uniform and b.uniform):
        raise DomainError("exact transport requires equal atom counts with uniform weights")
    if a.size > EXACT_ATOM_LIMIT:
        raise DomainError(f"exact transport limited to {EXACT_ATOM_LIMIT} atoms")
    if a.d != b.d:
        raise DomainError("dimension mismatch")
    diff = a.points[:, None, :] - b.points[None, :, :]
    cost = np.sum(diff * diff, axis=-1)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def sliced_wasserstein2(a: EmpiricalMeasure, b: EmpiricalMeasure,
                        n_projections: int = 32, seed: int = 0) -> float:
    """Root-mean of squared 1-D W2 over random unit directions, scaled by sqrt(d).

    The dimension factor makes pure translations of isotropic clouds match
    the exact transport distance in expectation (a random direction carries
    1/d of a shift's squared length); in dimension 1 the value coincides with
    wasserstein2_1d.  Deterministic given the seed.
    """
    if a.size == 0 or b.size == 0:
        raise DomainError("empty measure")
    if a.d != b.d:
        raise DomainError("dimension mismatch")
    if n_projections < 1:
        raise DomainError("n_projections must be >= 1")
    rng = substream(seed, "sliced-projections")
    d = a.d
    total = 0.0
    for _ in range(n_projections):
        u = rng.standard_normal(d)
        norm = np.linalg.norm(u)
        if norm == 0.0:
            u = np.ones(d)
            norm = np.sqrt(d)
        u = u / norm
        pa = empirical_measure(a.points @ u, a.weights)
        pb = empirical_measure(b.points @ u, b.weights)
        total += wasserstein2_1d(pa, pb) ** 2
    return float(np.sqrt(d * total / n_projections))


def conditional_mean(inner_paths: np.ndarray, node: int) -> float:
    """Mean across inner sample paths at a grid node.

    inner_paths has shape (K_inner, steps+1); at least two inner samples are
    required for the value to be a meaningful conditional estimate.
    """
    arr = np.asarray(inner_paths, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise DomainError("conditional_mean needs >= 2 inner paths sharing a common noise")
    return float(arr[:, node].mean())

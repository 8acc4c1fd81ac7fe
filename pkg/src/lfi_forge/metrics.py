"""Distribution-comparison metrics: earth mover distance, squared MMD, MSE."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

MAX_ATOMS = 4096


class BandwidthDegenerateError(ValueError):
    pass


@dataclass
class WeightedPopulation:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.points.shape[0],):
            raise ValueError("one weight per point required")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        total = self.weights.sum()
        if not total > 0:
            raise ValueError("weights must have positive mass")
        if abs(total - 1.0) > 1e-12:
            self.weights = self.weights / total

    @classmethod
    def uniform(cls, points) -> "WeightedPopulation":
        points = np.asarray(points, dtype=np.float64)
        n = points.shape[0]
        return cls(points, np.full(n, 1.0 / n))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def to_csv(self, distances=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = [f"theta{d}" for d in range(self.dim)] + ["weight"]
        if distances is not None:
            header.append("distance")
        w.writerow(header)
        for i, row in enumerate(self.points):
            vals = [*row, self.weights[i]] + ([distances[i]] if distances is not None else [])
            w.writerow([f"{v:.17g}" for v in vals])
        return buf.getvalue()


def _pot():
    # keep POT from importing heavyweight tensor backends
    for name in ("TENSORFLOW", "PYTORCH", "JAX", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{name}", "1")
    import ot
    return ot


def transport_cost(xa, wa, xb, wb) -> float:
    """Exact optimal transport cost between two weighted atom sets (Euclidean ground cost)."""
    xa = np.atleast_2d(np.asarray(xa, dtype=np.float64))
    xb = np.atleast_2d(np.asarray(xb, dtype=np.float64))
    wa = np.asarray(wa, dtype=np.float64)
    wb = np.asarray(wb, dtype=np.float64)
    M = cdist(xa, xb)
    ot = _pot()
    plan = ot.emd(wa / wa.sum(), wb / wb.sum(), M, numItermax=10_000_000)
    return float(np.sum(plan * M))


def histogram(pop: WeightedPopulation, lo, hi, bins: int):
    """Weighted histogram on an equal-width grid; returns (centres, masses) of nonempty cells."""
    k = pop.dim
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    width = np.where(hi > lo, hi - lo, 1.0)
    idx = np.floor((pop.points - lo) / width * bins).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    flat = np.ravel_multi_index(idx.T, (bins,) * k)
    cells, inv = np.unique(flat, return_inverse=True)
    mass = np.bincount(inv, weights=pop.weights)
    cidx = np.stack(np.unravel_index(cells, (bins,) * k), axis=1)
    centres = lo + (cidx + 0.5) * width / bins
    return centres, mass


def emd(a: WeightedPopulation, b: WeightedPopulation, bins: int | None = 32) -> float:
    """Earth mover distance between two weighted populations.

    Both populations are histogrammed onto a shared ``bins``-per-dimension
    grid over their joint bounding box and the exact transportation problem
    is solved between occupied cell centres. ``bins=None`` skips the
    histogram and transports the raw atoms.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if bins is None:
        xa, wa, xb, wb = a.points, a.weights, b.points, b.weights
    else:
        allp = np.vstack([a.points, b.points])
        lo, hi = allp.min(axis=0), allp.max(axis=0)
        xa, wa = histogram(a, lo, hi, bins)
        xb, wb = histogram(b, lo, hi, bins)
    if len(wa) + len(wb) > MAX_ATOMS:
        raise ValueError(f"combined support {len(wa) + len(wb)} exceeds {MAX_ATOMS} atoms")
    return transport_cost(xa, wa, xb, wb)


def mmd2(a, b) -> float:
    """Biased (V-statistic) squared MMD with a Gaussian kernel.

    Bandwidth is the median pairwise distance of the pooled sample.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("both samples must be nonempty")
    if a.shape[1] != b.shape[1]:
        raise ValueError("dimension mismatch")
    h = float(np.median(pdist(np.vstack([a, b]))))
    if not h > 0:
        raise BandwidthDegenerateError("median pairwise distance is zero")
    gamma = 1.0 / (2.0 * h * h)

    def kmean(x, y):
        return float(np.exp(-gamma * cdist(x, y, "sqeuclidean")).mean())

    return max(kmean(a, a) + kmean(b, b) - 2.0 * kmean(a, b), 0.0)


def mse(pop: WeightedPopulation, truth) -> float:
    """Weighted mean squared error per dimension: sum_i w_i |theta_i - truth|^2 / k."""
    truth = np.asarray(truth, dtype=np.float64)
    if truth.shape != (pop.dim,):
        raise ValueError("truth dimension mismatch")
    sq = ((pop.points - truth) ** 2).sum(axis=1)
    return float(pop.weights @ sq) / pop.dim


def log_mean_emd(per_seed_emds) -> float:
    v = np.asarray(per_seed_emds, dtype=np.float64)
    if v.size == 0 or np.any(v <= 0):
        raise ValueError("log_mean_emd needs positive EMD values")
    return math.log(float(v.mean()))

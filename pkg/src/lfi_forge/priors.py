"""Box priors, equal-width bin grids, threshold exploitation and the
bin -> uniform back-transform used to turn categorical weights into
continuous parameter proposals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DegenerateSupportError(ValueError):
    pass


class OutOfSupportError(ValueError):
    pass


@dataclass
class BoxPrior:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=np.float64))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=np.float64))
        if self.lo.shape != self.hi.shape or np.any(self.lo >= self.hi):
            raise ValueError("prior bounds must satisfy lo < hi elementwise")

    @property
    def dim(self) -> int:
        return self.lo.size

    def contains(self, theta) -> np.ndarray:
        theta = np.asarray(theta)
        return np.all((theta >= self.lo) & (theta <= self.hi), axis=-1)


def ma2_prior() -> BoxPrior:
    return BoxPrior(lo=[-2.0, -1.0], hi=[2.0, 1.0])


def lv_prior() -> BoxPrior:
    """Per-dimension U(log 0.002, log 2) on log-rates."""
    return BoxPrior(lo=[math.log(0.002)] * 3, hi=[math.log(2.0)] * 3)


def sample_prior(prior: BoxPrior, n: int, rng: np.random.Generator) -> np.ndarray:
    if n <= 0:
        raise ValueError("n must be positive")
    return prior.lo + (prior.hi - prior.lo) * rng.random((n, prior.dim))


def fit_edges(values, B: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if B < 2:
        raise ValueError("need at least two bins")
    lo, hi = float(values.min()), float(values.max())
    if not hi > lo:
        raise DegenerateSupportError(f"degenerate support: all values equal {lo}")
    return np.linspace(lo, hi, B + 1)


@dataclass
class BinGrid:
    """Equal-width grid over one dimension or a pair of dimensions."""

    dims: tuple
    edges: tuple  # one edge vector (length B + 1) per entry of dims

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.edges = tuple(np.asarray(e, dtype=np.float64) for e in self.edges)
        if len(self.dims) not in (1, 2) or len(self.edges) != len(self.dims):
            raise ValueError("grid needs one or two dims with matching edges")
        if len(self.dims) == 2 and not self.dims[0] < self.dims[1]:
            raise ValueError("pair dims must be ordered i < j")
        sizes = {e.size for e in self.edges}
        if len(sizes) != 1 or sizes.pop() < 3:
            raise ValueError("all edge vectors need the same length B + 1 >= 3")
        for e in self.edges:
            if np.any(np.diff(e) <= 0):
                raise ValueError("edges must be strictly increasing")

    @property
    def B(self) -> int:
        return self.edges[0].size - 1

    @property
    def n_classes(self) -> int:
        return self.B ** len(self.dims)

    def bin_bounds(self, cls) -> tuple[np.ndarray, np.ndarray]:
        """Left and right bin boundaries for flat class indices ``cls``."""
        idx = self.unflatten(cls)
        left = np.stack([e[i] for e, i in zip(self.edges, idx)], axis=-1)
        right = np.stack([e[i + 1] for e, i in zip(self.edges, idx)], axis=-1)
        return left, right

    def unflatten(self, cls) -> list[np.ndarray]:
        cls = np.asarray(cls)
        if len(self.dims) == 1:
            return [cls]
        return [cls // self.B, cls % self.B]

    def centers(self) -> np.ndarray:
        """Bin centres for every flat class, shape (n_classes, len(dims))."""
        left, right = self.bin_bounds(np.arange(self.n_classes))
        return 0.5 * (left + right)

    def to_dict(self) -> dict:
        d = {"dims": list(self.dims), "edges_i": self.edges[0].tolist()}
        if len(self.dims) == 2:
            d["edges_j"] = self.edges[1].tolist()
        return d


def fit_grid(samples, dims, B: int) -> BinGrid:
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    dims = tuple(np.atleast_1d(dims).tolist())
    return BinGrid(dims=dims, edges=tuple(fit_edges(samples[:, d], B) for d in dims))


def _bin_index(values, edges) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if np.any(values < edges[0]) or np.any(values > edges[-1]) or np.any(np.isnan(values)):
        raise OutOfSupportError("value outside grid bounds")
    idx = np.searchsorted(edges, values, side="right") - 1
    return np.minimum(idx, edges.size - 2)


def discretize(theta, grid: BinGrid):
    """Flat class index of ``theta`` (full parameter vector(s)) on ``grid``.

    Bins are half-open ``[e_m, e_{m+1})`` except the last, which is closed.
    Accepts a single vector or an (n, k) matrix.
    """
    theta = np.asarray(theta, dtype=np.float64)
    single = theta.ndim == 1
    theta = np.atleast_2d(theta)
    idx = [_bin_index(theta[:, d], e) for d, e in zip(grid.dims, grid.edges)]
    flat = idx[0] if len(idx) == 1 else idx[0] * grid.B + idx[1]
    return int(flat[0]) if single else flat


def threshold_exploit(weights, delta: float) -> np.ndarray:
    """Zero out classes with weight below ``delta`` and renormalize.

    When every class falls below ``delta`` only the argmax survives.
    """
    w = np.asarray(weights, dtype=np.float64)
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must lie in [0, 1)")
    out = np.where(w < delta, 0.0, w)
    total = out.sum()
    if total <= 0.0:
        out = np.zeros_like(w)
        out[int(np.argmax(w))] = 1.0
        return out
    return out / total


@dataclass
class DeltaSchedule:
    kind: str = "constant"
    base: float = 0.05
    decay: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "exponential"):
            raise ValueError(f"unknown delta schedule {self.kind!r}")
        if not 0.0 <= self.base < 1.0 or self.decay < 0.0:
            raise ValueError("delta base must be in [0, 1) and decay >= 0")

    def value(self, g: int) -> float:
        """Threshold for round ``g`` (1-based)."""
        if self.kind == "constant":
            return self.base
        return self.base * math.exp(-self.decay * (g - 1))


@dataclass
class CategoricalProposal:
    grid: BinGrid
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.grid.n_classes,):
            raise ValueError("weights length does not match the grid class count")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a normalized nonnegative vector")

    def marginal(self, axis: int) -> np.ndarray:
        """Marginal weights onto ``grid.dims[axis]``."""
        if len(self.grid.dims) == 1:
            return self.weights.copy()
        w2 = self.weights.reshape(self.grid.B, self.grid.B)
        return w2.sum(axis=1 - axis)

    def mean(self) -> np.ndarray:
        return self.weights @ self.grid.centers()

    def to_dict(self) -> dict:
        d = self.grid.to_dict()
        d["weights"] = self.weights.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CategoricalProposal":
        edges = [d["edges_i"]] + ([d["edges_j"]] if "edges_j" in d else [])
        return cls(BinGrid(dims=tuple(d["dims"]), edges=tuple(edges)), np.array(d["weights"]))


def _uniform_in(left, right, rng):
    u = rng.random(left.shape)
    x = left + u * (right - left)
    # rounding can land exactly on the right edge; keep bins half-open
    return np.where(x >= right, np.nextafter(right, left), x)


def sample_from_proposal(prop: CategoricalProposal, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a class per sample, then a uniform point inside that class's bin.

    Returns an (n, len(grid.dims)) matrix over the grid's own dimensions.
    """
    cls = rng.choice(prop.grid.n_classes, size=n, p=prop.weights)
    left, right = prop.grid.bin_bounds(cls)
    return _uniform_in(left, right, rng)

"""Forward models: MA(q) process and the Lotka-Volterra Markov jump process."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from lfi_forge._backend import kernels


class SSAExplosionError(RuntimeError):
    """Raised when the SSA hits its event cap; ``trajectory`` holds the frozen path."""

    def __init__(self, trajectory: "TimeSeries", n_events: int):
        super().__init__(f"SSA event cap reached after {n_events} events")
        self.trajectory = trajectory
        self.n_events = n_events


@dataclass
class TimeSeries:
    times: np.ndarray
    values: np.ndarray  # (T, C)
    flagged: bool = False

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[0] != self.times.shape[0]:
            raise ValueError("times and values lengths differ")

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        header = ",".join(["t"] + [f"ch{c}" for c in range(self.channels)])
        buf.write(header + "\n")
        for t, row in zip(self.times, self.values):
            buf.write(",".join(f"{v:.17g}" for v in (t, *row)) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TimeSeries":
        lines = [ln for ln in text.strip().splitlines() if ln]
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        return cls(times=data[:, 0], values=data[:, 1:])


@dataclass
class SSAConfig:
    initial_state: tuple = (50, 100)
    t_end: float = 50.0
    grid: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 50.0, 51))
    max_events: int = 10_000_000

    def __post_init__(self):
        self.grid = np.ascontiguousarray(self.grid, dtype=np.float64)
        if len(self.initial_state) != 2 or min(self.initial_state) < 0:
            raise ValueError("initial_state must be two nonnegative counts")
        if self.grid.size == 0 or self.grid[0] < 0 or self.grid[-1] > self.t_end:
            raise ValueError("grid must lie within [0, t_end]")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")


def simulate_ma(coeffs, length: int, rng: np.random.Generator) -> TimeSeries:
    """Simulate X_j = Z_j + sum_i coeffs[i-1] Z_{j-i}, j = 1..length, Z ~ N(0, 1).

    The q pre-window noise values are drawn (not zero-padded), so the output
    is stationary from the first index.
    """
    coeffs = np.atleast_1d(np.asarray(coeffs, dtype=np.float64))
    q = coeffs.size
    if q < 1:
        raise ValueError("MA order must be >= 1")
    if length <= q:
        raise ValueError(f"length must exceed the MA order ({length} <= {q})")
    z = rng.standard_normal(length + q)
    x = z[q:].copy()
    for i in range(1, q + 1):
        x += coeffs[i - 1] * z[q - i:length + q - i]
    return TimeSeries(times=np.arange(1, length + 1, dtype=np.float64), values=x)


def simulate_lv(rates, config: SSAConfig, rng: np.random.Generator, strict: bool = True) -> TimeSeries:
    """Exact Gillespie direct-method trajectory of the predator-prey system.

    Reactions X1 -> 2 X1, X1 + X2 -> 2 X2, X2 -> 0 with mass-action rates
    ``rates`` (raw, not log). The path is reported on ``config.grid`` as the
    state after the last event before each grid time.

    With ``strict`` an event-cap hit raises :class:`SSAExplosionError`;
    otherwise the frozen trajectory is returned with ``flagged=True``.
    """
    c = np.asarray(rates, dtype=np.float64)
    if c.shape != (3,) or np.any(c < 0) or not np.all(np.isfinite(c)):
        raise ValueError("rates must be three finite nonnegative numbers")
    x1, x2 = (int(v) for v in config.initial_state)
    values, n_events, exploded = kernels.ssa_lv(
        float(c[0]), float(c[1]), float(c[2]), x1, x2,
        config.grid, int(config.max_events), rng.bit_generator,
    )
    ts = TimeSeries(times=config.grid.copy(), values=values, flagged=bool(exploded))
    if exploded and strict:
        raise SSAExplosionError(ts, n_events)
    return ts


def ma2_autocovariance(coeffs) -> np.ndarray:
    coeffs = np.atleast_1d(np.asarray(coeffs, dtype=np.float64))
    if coeffs.size != 2:
        raise ValueError("ma2_autocovariance needs exactly two coefficients")
    t1, t2 = coeffs
    return np.array([1.0 + t1 * t1 + t2 * t2, t1 * (1.0 + t2), t2])

"""Reference methods: ABC-SMC and random-walk Metropolis-Hastings for MA(2)
with the exact Gaussian likelihood."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import multivariate_normal

from lfi_forge._backend import kernels
from lfi_forge.metrics import WeightedPopulation
from lfi_forge.priors import BoxPrior, sample_prior
from lfi_forge.simulators import TimeSeries

log = logging.getLogger(__name__)


class StallError(RuntimeError):
    def __init__(self, message, populations, partial):
        super().__init__(message)
        self.populations = populations
        self.partial = partial


def _values(series) -> np.ndarray:
    return series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=np.float64)


@dataclass(frozen=True)
class SummarySpec:
    kind: str = "ma2-stats"  # or "raw-series"

    def __post_init__(self):
        if self.kind not in ("ma2-stats", "raw-series"):
            raise ValueError(f"unknown summary kind {self.kind!r}")


def summarize(series, spec: SummarySpec) -> np.ndarray:
    """ma2-stats: (lag-1 autocorrelation, lag-2 autocorrelation, sample variance).

    Autocorrelations of a constant series are defined as 0.
    """
    v = _values(series)
    if spec.kind == "raw-series":
        return v.ravel().astype(np.float64)
    x = v[:, 0] if v.ndim == 2 else v
    if x.size < 3:
        raise ValueError("ma2-stats needs at least 3 points")
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom == 0.0:
        return np.array([0.0, 0.0, 0.0])
    r1 = float(xc[:-1] @ xc[1:]) / denom
    r2 = float(xc[:-2] @ xc[2:]) / denom
    return np.array([r1, r2, denom / (x.size - 1)])


def nearest_rank_percentile(values, pct: float) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    rank = max(1, math.ceil(pct / 100.0 * v.size))
    return float(v[rank - 1])


@dataclass
class SMCPopulation:
    particles: np.ndarray
    weights: np.ndarray
    distances: np.ndarray
    epsilon: float
    round: int
    n_sims: int  # cumulative simulator calls, pilot included

    def as_weighted(self) -> WeightedPopulation:
        return WeightedPopulation(self.particles, self.weights)

    def to_csv(self) -> str:
        return self.as_weighted().to_csv(self.distances)


def abc_smc(simulator, observation, prior: BoxPrior, n_particles: int, rounds: int,
            spec: SummarySpec, rng: np.random.Generator, percentile: float = 20.0,
            first_epsilon: float | None = None, max_trials: int = 1_000_000) -> list[SMCPopulation]:
    """Population Monte Carlo ABC with a relative (percentile) tolerance schedule.

    ``simulator(theta, rng)`` returns a series. The first tolerance is the
    ``percentile`` of a pilot batch of prior-predictive distances (unless
    ``first_epsilon`` is given); each later tolerance is the same percentile
    of the previous round's accepted distances. Perturbation kernel is
    Gaussian with twice the weighted particle covariance.
    """
    if n_particles < 10:
        raise ValueError("n_particles must be >= 10")
    s_obs = summarize(observation, spec)
    k = prior.dim
    vol = float(np.prod(prior.hi - prior.lo))
    n_sims = 0

    def distance(theta):
        return float(np.linalg.norm(summarize(simulator(theta, rng), spec) - s_obs))

    if first_epsilon is None:
        pilot = sample_prior(prior, n_particles, rng)
        pilot_d = np.array([distance(t) for t in pilot])
        n_sims += n_particles
        eps = nearest_rank_percentile(pilot_d, percentile)
    else:
        eps = float(first_epsilon)

    pops: list[SMCPopulation] = []
    for r in range(1, rounds + 1):
        if pops:
            prev = pops[-1]
            eps = min(nearest_rank_percentile(prev.distances, percentile), prev.epsilon)
            cov = 2.0 * np.atleast_2d(np.cov(prev.particles.T, aweights=prev.weights))
            cov += 1e-12 * np.eye(k)
            chol = np.linalg.cholesky(cov)
        parts, dists, trials = [], [], 0
        while len(parts) < n_particles:
            if trials >= max_trials:
                partial = (np.array(parts).reshape(-1, k), np.array(dists))
                raise StallError(f"round {r}: {len(parts)}/{n_particles} accepted after "
                                 f"{trials} trials", pops, partial)
            trials += 1
            if not pops:
                theta = sample_prior(prior, 1, rng)[0]
            else:
                j = rng.choice(prev.particles.shape[0], p=prev.weights)
                theta = prev.particles[j] + chol @ rng.standard_normal(k)
                if not prior.contains(theta):
                    continue
            d = distance(theta)
            n_sims += 1
            if d <= eps:
                parts.append(theta)
                dists.append(d)
        parts = np.array(parts)
        dists = np.array(dists)
        if not pops:
            w = np.full(n_particles, 1.0 / n_particles)
        else:
            kern = multivariate_normal(mean=np.zeros(k), cov=cov)
            dens = np.array([prev.weights @ kern.pdf(t - prev.particles) for t in parts])
            w = (1.0 / vol) / dens
            w /= w.sum()
        assert np.all(dists <= eps)
        pops.append(SMCPopulation(parts, w, dists, eps, r, n_sims))
        log.info("ABC-SMC round %d: eps=%.4g, cumulative sims %d", r, eps, n_sims)
    return pops


def ma2_loglik(theta, series) -> float:
    """Exact log-density of an MA(2) path under unit-variance Gaussian noise.

    Uses an O(p) Cholesky of the banded Toeplitz covariance; returns -inf if
    the factorization breaks down.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    if theta.size != 2:
        raise ValueError("ma2_loglik needs two coefficients")
    x = _values(series).ravel()
    return float(kernels.ma2_loglik_banded(float(theta[0]), float(theta[1]), x))


def _grid_start(prior, x, n=41):
    g1 = np.linspace(prior.lo[0], prior.hi[0], n)
    g2 = np.linspace(prior.lo[1], prior.hi[1], n)
    best, arg = -np.inf, np.array([0.5 * (prior.lo[0] + prior.hi[0]), 0.5 * (prior.lo[1] + prior.hi[1])])
    for a in g1:
        for b in g2:
            ll = kernels.ma2_loglik_banded(a, b, x)
            if ll > best:
                best, arg = ll, np.array([a, b])
    return arg


@dataclass
class MCMCResult:
    population: WeightedPopulation
    acceptance_rate: float
    chain: np.ndarray


def mh_mcmc_ma2(observation, prior: BoxPrior, steps: int, proposal_std, rng: np.random.Generator,
                start=None, burn_in: float = 0.2, thin: int = 10) -> MCMCResult:
    """Random-walk Metropolis-Hastings on the uniform box prior.

    Returns post-burn-in, thinned draws with unit weights plus the
    acceptance rate. Without ``start`` the chain starts at the best point of
    a coarse likelihood grid over the box, which keeps the chain out of the
    low-likelihood local modes outside the invertibility region.
    """
    if steps < 10_000:
        raise ValueError("steps must be >= 10^4")
    x = _values(observation).ravel()
    step = np.asarray(proposal_std, dtype=np.float64)
    cur = _grid_start(prior, x) if start is None else np.asarray(start, dtype=np.float64)
    ll = kernels.ma2_loglik_banded(cur[0], cur[1], x)
    chain = np.empty((steps, 2))
    accepted = 0
    noise = rng.standard_normal((steps, 2)) * step
    logu = np.log(rng.random(steps))
    lo, hi = prior.lo, prior.hi
    for i in range(steps):
        prop = cur + noise[i]
        if np.all(prop >= lo) and np.all(prop <= hi):
            ll_p = kernels.ma2_loglik_banded(prop[0], prop[1], x)
            if logu[i] < ll_p - ll:
                cur, ll = prop, ll_p
                accepted += 1
        chain[i] = cur
    kept = chain[int(burn_in * steps)::thin]
    return MCMCResult(WeightedPopulation.uniform(kept), accepted / steps, chain)

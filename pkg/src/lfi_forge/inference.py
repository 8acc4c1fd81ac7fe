"""Iterative BNN proposal-posterior estimation.

Each round samples parameters from the previous proposal, simulates, bins
the parameters on a freshly fitted equal-width grid, trains one classifier
per parameter pair, conditions the classifiers on the observation, prunes
low-weight classes and turns the result into the next proposal.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from lfi_forge import bnn, streams
from lfi_forge.priors import (BinGrid, BoxPrior, CategoricalProposal, DeltaSchedule,
                              _uniform_in, discretize, fit_edges, sample_from_proposal, sample_prior,
                              threshold_exploit)
from lfi_forge.simulators import TimeSeries

log = logging.getLogger(__name__)


class InvalidStateError(RuntimeError):
    pass


class RoundAbortedError(RuntimeError):
    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


@dataclass
class RunConfig:
    problem: object  # MA2Problem | LVProblem
    observation: TimeSeries
    G: int = 6
    N: int = 3000
    B: int = 4
    delta: DeltaSchedule = field(default_factory=DeltaSchedule)
    S: int = 100
    seed: int = 0
    train: bnn.TrainConfig = field(default_factory=bnn.TrainConfig)
    jobs: int = 1
    prior: BoxPrior | None = None

    def __post_init__(self):
        if self.prior is None:
            self.prior = self.problem.prior
        if self.G < 1 or self.B < 2 or self.S < 1:
            raise ValueError("need G >= 1, B >= 2, S >= 1")
        if self.N < self.B ** 2:
            raise ValueError(f"N={self.N} cannot populate {self.B ** 2} classes")


class BNNClassifier:
    """Default per-pair classifier: Bayesian CNN with MC predictive."""

    def __init__(self, problem, train_cfg: bnn.TrainConfig):
        self.problem = problem
        self.train_cfg = train_cfg

    def fit(self, series, labels, grid: BinGrid, rng):
        spec = self.problem.network_spec(grid.n_classes)
        net = bnn.train(spec, series, labels, self.train_cfg, rng)
        return lambda y0, S, r: bnn.predict_mc(net, y0, S, r)


def pair_set(k: int) -> list[tuple]:
    if k == 1:
        return [(0,)]
    return list(itertools.combinations(range(k), 2))


class ProposalSampler:
    """Continuous sampler built from categorical bin weights.

    With a single unit (k = 1 or k = 2) the joint categorical is sampled
    directly; otherwise each dimension is sampled independently from its
    marginal. Either way a class is drawn first, then a uniform point
    inside the bin.
    """

    def __init__(self, k: int, edges: list, marginals: list, joint: CategoricalProposal | None = None):
        self.k = k
        self.edges = [np.asarray(e) for e in edges]
        self.marginals = [np.asarray(m) for m in marginals]
        self.joint = joint

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.joint is not None:
            out = np.empty((n, self.k))
            out[:, list(self.joint.grid.dims)] = sample_from_proposal(self.joint, n, rng)
            return out
        cols = []
        for e, m in zip(self.edges, self.marginals):
            cls = rng.choice(m.size, size=n, p=m)
            cols.append(_uniform_in(e[cls], e[cls + 1], rng))
        return np.stack(cols, axis=1)

    def support(self) -> list[tuple]:
        """Per-dimension (low, high) hull of the bins with nonzero weight."""
        out = []
        for e, m in zip(self.edges, self.marginals):
            nz = np.flatnonzero(m > 0)
            out.append((float(e[nz[0]]), float(e[nz[-1] + 1])))
        return out

    def mean(self) -> np.ndarray:
        if self.joint is not None:
            mu = np.empty(self.k)
            mu[list(self.joint.grid.dims)] = self.joint.mean()
            return mu
        return np.array([m @ (0.5 * (e[:-1] + e[1:])) for e, m in zip(self.edges, self.marginals)])


class PriorSampler:
    def __init__(self, prior: BoxPrior):
        self.prior = prior

    def sample(self, n, rng):
        return sample_prior(self.prior, n, rng)

    def support(self):
        return list(zip(self.prior.lo.tolist(), self.prior.hi.tolist()))


def marginalize_pairs(proposals: list[CategoricalProposal], k: int) -> list[np.ndarray]:
    """Average, over every pair containing dimension d, that pair's marginal on d."""
    acc = [None] * k
    edges = [None] * k
    count = [0] * k
    for prop in proposals:
        for axis, d in enumerate(prop.grid.dims):
            e = prop.grid.edges[axis]
            if edges[d] is None:
                edges[d] = e
                acc[d] = np.zeros(e.size - 1)
            elif not np.array_equal(edges[d], e):
                raise InvalidStateError(f"pairs disagree on the edges of dimension {d}")
            acc[d] += prop.marginal(axis)
            count[d] += 1
    if min(count) == 0:
        raise InvalidStateError("some dimension is not covered by any pair")
    out = []
    for a, c in zip(acc, count):
        m = a / c
        out.append(m / m.sum())
    return out


def next_proposal_sampler(marginals, edges, joint=None) -> ProposalSampler:
    return ProposalSampler(len(edges), edges, marginals, joint)


@dataclass
class PairResult:
    proposal_raw: CategoricalProposal
    proposal: CategoricalProposal
    uncertainty: np.ndarray


@dataclass
class RoundRecord:
    g: int
    delta: float
    theta: np.ndarray
    flagged: np.ndarray
    edges: list
    pairs: list  # PairResult per pair
    marginals: list
    sampler: ProposalSampler
    n_sims: int
    series: np.ndarray | None = None
    metrics: dict = field(default_factory=dict)

    @property
    def n_flagged(self) -> int:
        return int(self.flagged.sum())

    def to_dict(self) -> dict:
        return {
            "round": self.g,
            "delta": self.delta,
            "n_sims": self.n_sims,
            "n_flagged": self.n_flagged,
            "edges": [e.tolist() for e in self.edges],
            "pairs": [
                {**p.proposal.to_dict(), "weights_raw": p.proposal_raw.weights.tolist(),
                 "uncertainty": p.uncertainty.tolist()}
                for p in self.pairs
            ],
            "marginals": [m.tolist() for m in self.marginals],
            "proposal_mean": self.sampler.mean().tolist(),
            "metrics": self.metrics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def samples_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        k = self.theta.shape[1]
        w.writerow([f"theta{d}" for d in range(k)] + ["flagged"])
        for row, f in zip(self.theta, self.flagged):
            w.writerow([f"{v:.17g}" for v in row] + [int(f)])
        return buf.getvalue()


@dataclass
class RunState:
    sampler: object
    sim_calls: int = 0


def _simulate_all(problem, theta, seed, g, jobs):
    def one(i):
        return problem.simulate(theta[i], streams.substream(seed, g, streams.SIMULATE, i))

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            out = list(ex.map(one, range(len(theta))))
    else:
        out = [one(i) for i in range(len(theta))]
    values = np.stack([ts.values for ts in out])
    flagged = np.array([ts.flagged for ts in out], dtype=bool)
    return values, flagged


def run_round(state: RunState, cfg: RunConfig, g: int, classifier=None) -> RoundRecord:
    """One adaptive round; ``g`` is 1-based. Updates ``state`` in place."""
    classifier = classifier or BNNClassifier(cfg.problem, cfg.train)
    k = cfg.prior.dim
    theta = state.sampler.sample(cfg.N, streams.substream(cfg.seed, g, streams.PROPOSAL))
    series, flagged = _simulate_all(cfg.problem, theta, cfg.seed, g, cfg.jobs)
    state.sim_calls += len(theta)

    edges = [fit_edges(theta[:, d], cfg.B) for d in range(k)]
    delta = cfg.delta.value(g)
    y0 = cfg.observation.values
    pairs = pair_set(k)

    def do_pair(p_idx):
        dims = pairs[p_idx]
        grid = BinGrid(dims=dims, edges=tuple(edges[d] for d in dims))
        labels = discretize(theta, grid)
        predict = classifier.fit(series, labels, grid, streams.substream(cfg.seed, g, streams.TRAIN, p_idx))
        raw, std = predict(y0, cfg.S, streams.substream(cfg.seed, g, streams.PREDICT, p_idx))
        raw = raw / raw.sum()
        thr = threshold_exploit(raw, delta)
        return PairResult(CategoricalProposal(grid, raw), CategoricalProposal(grid, thr), std)

    if cfg.jobs > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(min(cfg.jobs, len(pairs))) as ex:
            results = list(ex.map(do_pair, range(len(pairs))))
    else:
        results = [do_pair(i) for i in range(len(pairs))]

    proposals = [r.proposal for r in results]
    marginals = marginalize_pairs(proposals, k)
    joint = proposals[0] if len(proposals) == 1 else None
    sampler = next_proposal_sampler(marginals, edges, joint)
    state.sampler = sampler
    log.info("round %d: %d sims (%d flagged), proposal mean %s", g, len(theta),
             int(flagged.sum()), np.round(sampler.mean(), 4))
    return RoundRecord(g=g, delta=delta, theta=theta, flagged=flagged, edges=edges,
                       pairs=results, marginals=marginals, sampler=sampler,
                       n_sims=len(theta), series=series)


def run_inference(cfg: RunConfig, classifier=None, on_round=None, keep_series=False) -> list[RoundRecord]:
    """Run all G rounds; the last record's sampler is the proposal-posterior estimate.

    ``on_round(record)`` is called after each round (for persistence or
    metrics). A failing round raises :class:`RoundAbortedError` carrying the
    records completed so far.
    """
    state = RunState(sampler=PriorSampler(cfg.prior))
    records = []
    for g in range(1, cfg.G + 1):
        try:
            rec = run_round(state, cfg, g, classifier)
        except Exception as exc:
            raise RoundAbortedError(f"round {g} failed: {exc}", records) from exc
        if not keep_series:
            rec.series = None
        if on_round is not None:
            on_round(rec)
        records.append(rec)
    return records

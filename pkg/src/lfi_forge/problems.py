"""Benchmark problem definitions tying a simulator to its prior and network."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from lfi_forge.bnn import NetworkSpec, lv_network_spec, ma2_network_spec
from lfi_forge.priors import BoxPrior, lv_prior, ma2_prior
from lfi_forge.simulators import SSAConfig, TimeSeries, simulate_lv, simulate_ma


@dataclass
class MA2Problem:
    length: int = 100
    name: str = "ma2"
    prior: BoxPrior = field(default_factory=ma2_prior)
    default_truth: tuple = (0.6, 0.2)

    @property
    def dim(self) -> int:
        return 2

    def simulate(self, theta, rng: np.random.Generator) -> TimeSeries:
        return simulate_ma(theta, self.length, rng)

    def network_spec(self, n_classes: int) -> NetworkSpec:
        spec = ma2_network_spec(n_classes)
        if self.length != spec.length:
            spec = NetworkSpec(self.length, 1, spec.filters, spec.kernel, spec.pool, n_classes)
        return spec


@dataclass
class LVProblem:
    """Parameters are log-rates; the simulator receives exp(theta)."""

    ssa: SSAConfig = field(default_factory=SSAConfig)
    name: str = "lv"
    prior: BoxPrior = field(default_factory=lv_prior)
    default_truth: tuple = (math.log(1.0), math.log(0.005), math.log(1.0))

    @property
    def dim(self) -> int:
        return 3

    def simulate(self, theta, rng: np.random.Generator) -> TimeSeries:
        return simulate_lv(np.exp(np.asarray(theta, dtype=np.float64)), self.ssa, rng, strict=False)

    def network_spec(self, n_classes: int) -> NetworkSpec:
        spec = lv_network_spec(n_classes)
        if self.ssa.grid.size != spec.length:
            spec = NetworkSpec(self.ssa.grid.size, 2, spec.filters, spec.kernel, spec.pool,
                               n_classes, spec.input_transform)
        return spec


def make_problem(name: str, **kwargs):
    if name == "ma2":
        return MA2Problem(**kwargs)
    if name == "lv":
        return LVProblem(**kwargs)
    raise ValueError(f"unknown problem {name!r}")

"""Independent reference computations used to check the fast paths.

Each check returns an :class:`OracleResult`; ``run_all`` is what the
``oracle`` CLI subcommand prints.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, toeplitz
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from lfi_forge import bnn
from lfi_forge.baselines import ma2_loglik
from lfi_forge.metrics import WeightedPopulation, emd
from lfi_forge.simulators import SSAConfig, ma2_autocovariance, simulate_lv, simulate_ma


@dataclass
class OracleResult:
    name: str
    value: float
    expected: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: value={self.value:.10g} expected={self.expected:.10g} "
                f"tol={self.tolerance:.3g} {self.detail}")


def ma2_loglik_dense(theta, x) -> float:
    """Dense-matrix Cholesky evaluation of the MA(2) Gaussian log-likelihood."""
    x = np.asarray(x, dtype=np.float64).ravel()
    p = x.size
    col = np.zeros(p)
    col[:3] = ma2_autocovariance(theta)[: min(3, p)]
    L = cholesky(toeplitz(col), lower=True)
    z = np.linalg.solve(L, x)
    return float(-0.5 * p * math.log(2 * math.pi) - np.log(np.diag(L)).sum() - 0.5 * z @ z)


def transport_lp(xa, wa, xb, wb) -> float:
    """Brute-force transportation LP (scipy HiGHS simplex) for small instances."""
    xa = np.atleast_2d(xa)
    xb = np.atleast_2d(xb)
    wa = np.asarray(wa, dtype=np.float64) / np.sum(wa)
    wb = np.asarray(wb, dtype=np.float64) / np.sum(wb)
    m, n = len(wa), len(wb)
    M = cdist(xa, xb)
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        A[m + j, j::n] = 1.0
    res = linprog(M.ravel(), A_eq=A, b_eq=np.concatenate([wa, wb]), bounds=(0, None),
                  method="highs-ds")
    if not res.success:
        raise RuntimeError(res.message)
    return float(res.fun)


def random_transport_instance(rng, max_atoms=6, k=2):
    m = int(rng.integers(1, max_atoms + 1))
    n = int(rng.integers(1, max_atoms + 1))
    return (rng.normal(size=(m, k)), rng.random(m) + 0.05,
            rng.normal(size=(n, k)), rng.random(n) + 0.05)


def finite_difference_grad(net, x, labels, noise, kl_scale, step=1e-5) -> dict:
    out = {}
    for k, v in net.params.items():
        g = np.zeros_like(v)
        for idx in np.ndindex(v.shape):
            old = v[idx]
            v[idx] = old + step
            lp, _ = bnn.elbo_loss(net, x, labels, noise, kl_scale)
            v[idx] = old - step
            lm, _ = bnn.elbo_loss(net, x, labels, noise, kl_scale)
            v[idx] = old
            g[idx] = (lp - lm) / (2 * step)
        out[k] = g
    return out


def toy_network(rng) -> tuple:
    """A 10-weight net (6 conv + 4 dense weights) with a small batch and frozen noise."""
    spec = bnn.NetworkSpec(length=6, channels=1, filters=2, kernel=3, pool=6, n_classes=2)
    net = bnn.BayesianCNN.init(spec, rng, init_sigma=0.3)
    for k in net.params:
        net.params[k] = net.params[k] + 0.1 * rng.standard_normal(net.params[k].shape)
    x = rng.standard_normal((8, 6, 1))
    labels = rng.integers(0, 2, 8)
    labels[:2] = [0, 1]
    noise = net.draw_noise(8, rng)
    return net, x, labels, noise


# individual checks


def check_ma2_autocovariance(n=100_000, seed=0, n_batches=100) -> list[OracleResult]:
    theta = (0.6, 0.2)
    x = simulate_ma(theta, n, np.random.default_rng(seed)).values[:, 0]
    g = ma2_autocovariance(theta)
    expected = [g[0], g[1] / g[0], g[2] / g[0]]

    def stats(v):
        vc = v - v.mean()
        d = vc @ vc
        return np.array([d / (v.size - 1), (vc[:-1] @ vc[1:]) / d, (vc[:-2] @ vc[2:]) / d])

    full = stats(x)
    batch = np.array([stats(b) for b in np.array_split(x, n_batches)])
    se = batch.std(axis=0, ddof=1) / math.sqrt(n_batches)
    names = ["variance", "lag-1 autocorrelation", "lag-2 autocorrelation"]
    return [OracleResult(f"MA(2) {nm}", full[i], expected[i], 3 * se[i],
                         abs(full[i] - expected[i]) <= 3 * se[i], "(3 SE, batch means)")
            for i, nm in enumerate(names)]


def _ssa_mean(rates, init, t, n, seed, channel):
    cfg = SSAConfig(initial_state=init, t_end=t, grid=np.array([t]))
    rng = np.random.default_rng(seed)
    vals = np.array([simulate_lv(rates, cfg, rng).values[0, channel] for _ in range(n)])
    return vals.mean(), vals.std(ddof=1) / math.sqrt(n)


def check_ssa_pure_death(n=10_000, seed=0) -> OracleResult:
    mean, se = _ssa_mean((0.0, 0.0, 1.0), (50, 100), 1.0, n, seed, 1)
    expected = 100 * math.exp(-1.0)
    return OracleResult("SSA pure-death mean X2(1)", mean, expected, 3 * se,
                        abs(mean - expected) <= 3 * se, "(3 SE)")


def check_ssa_yule(n=10_000, seed=1) -> OracleResult:
    mean, se = _ssa_mean((1.0, 0.0, 0.0), (50, 100), 0.5, n, seed, 0)
    expected = 50 * math.exp(0.5)
    return OracleResult("SSA Yule mean X1(0.5)", mean, expected, 3 * se,
                        abs(mean - expected) <= 3 * se, "(3 SE)")


def check_emd_vs_lp(n_instances=100, seed=0, tol=1e-9) -> OracleResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        xa, wa, xb, wb = random_transport_instance(rng)
        fast = emd(WeightedPopulation(xa, wa), WeightedPopulation(xb, wb), bins=None)
        worst = max(worst, abs(fast - transport_lp(xa, wa, xb, wb)))
    return OracleResult(f"EMD vs transportation LP ({n_instances} instances)", worst, 0.0, tol,
                        worst <= tol, "(max abs diff)")


def random_triangle_theta(rng) -> np.ndarray:
    while True:
        t1, t2 = rng.uniform(-2, 2), rng.uniform(-1, 1)
        if t2 + t1 >= -1 and t2 - t1 >= -1:
            return np.array([t1, t2])


def check_loglik_banded_vs_dense(n_theta=100, p=100, seed=0, tol=1e-8) -> OracleResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_theta):
        theta = random_triangle_theta(rng)
        x = simulate_ma(theta, p, rng).values[:, 0]
        worst = max(worst, abs(ma2_loglik(theta, x) - ma2_loglik_dense(theta, x)))
    return OracleResult(f"MA(2) loglik banded vs dense ({n_theta} thetas, p={p})", worst, 0.0, tol,
                        worst <= tol, "(max abs diff)")


def check_elbo_gradient(seed=0, tol=1e-3) -> OracleResult:
    net, x, labels, noise = toy_network(np.random.default_rng(seed))
    _, g = bnn.elbo_loss(net, x, labels, noise, 0.1)
    fd = finite_difference_grad(net, x, labels, noise, 0.1)
    a = np.concatenate([g[k].ravel() for k in bnn.PARAM_NAMES])
    b = np.concatenate([fd[k].ravel() for k in bnn.PARAM_NAMES])
    rel = float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))
    return OracleResult("ELBO gradient vs central differences (10-weight net)", rel, 0.0, tol,
                        rel < tol, "(relative L2 error)")


def check_weight_counts() -> list[OracleResult]:
    out = []
    for name, spec, want in (("MA2", bnn.ma2_network_spec(16), 2002), ("LV", bnn.lv_network_spec(25), 10285)):
        net = bnn.BayesianCNN.init(spec, np.random.default_rng(0))
        n = net.n_params()
        out.append(OracleResult(f"{name} network trainable scalars", n, want, 0, n == want))
    return out


def run_all() -> list[OracleResult]:
    results = []
    results += check_ma2_autocovariance()
    results.append(check_ssa_pure_death())
    results.append(check_ssa_yule())
    results.append(check_emd_vs_lp())
    results.append(check_loglik_banded_vs_dense())
    results.append(check_elbo_gradient())
    results += check_weight_counts()
    return results


def main_report(stream=None) -> bool:
    t0 = time.time()
    results = run_all()
    for r in results:
        print(r.line(), file=stream)
    print(f"{sum(r.passed for r in results)}/{len(results)} oracle checks passed "
          f"in {time.time() - t0:.1f} s", file=stream)
    return all(r.passed for r in results)

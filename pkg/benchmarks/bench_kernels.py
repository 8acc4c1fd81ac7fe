"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--trajectories N] [--evals N]

Both backends are fed identical bit-generator states, so the script also
confirms their outputs match before reporting timings.
"""

import argparse
import time

import numpy as np

from lfi_forge._backend import get_kernels


def bench_ssa(kern, n_traj):
    grid = np.linspace(0.0, 50.0, 51)
    events = 0
    outs = []
    t0 = time.perf_counter()
    for i in range(n_traj):
        vals, ev, _ = kern.ssa_lv(1.0, 0.005, 1.0, 50, 100, grid, 10_000_000, np.random.PCG64(i))
        events += ev
        outs.append(np.asarray(vals))
    return time.perf_counter() - t0, events, outs


def bench_loglik(kern, n_evals):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(100)
    thetas = np.column_stack([rng.uniform(-2, 2, n_evals), rng.uniform(-1, 1, n_evals)])
    t0 = time.perf_counter()
    out = [kern.ma2_loglik_banded(a, b, x) for a, b in thetas]
    return time.perf_counter() - t0, np.array(out)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trajectories", type=int, default=20)
    ap.add_argument("--evals", type=int, default=5000)
    args = ap.parse_args()

    fast, slow = get_kernels("cython"), get_kernels("python")

    t_c, ev, out_c = bench_ssa(fast, args.trajectories)
    t_p, _, out_p = bench_ssa(slow, args.trajectories)
    assert all(np.array_equal(a, b) for a, b in zip(out_c, out_p)), "SSA backends disagree"
    print(f"SSA, {args.trajectories} LV trajectories ({ev} events)")
    print(f"  cython {t_c * 1e3:9.1f} ms   python {t_p * 1e3:9.1f} ms   speedup {t_p / t_c:6.1f}x")

    l_c, v_c = bench_loglik(fast, args.evals)
    l_p, v_p = bench_loglik(slow, args.evals)
    assert np.array_equal(v_c, v_p), "loglik backends disagree"
    print(f"MA(2) banded log-likelihood, {args.evals} evaluations at p=100")
    print(f"  cython {l_c * 1e3:9.1f} ms   python {l_p * 1e3:9.1f} ms   speedup {l_p / l_c:6.1f}x")


if __name__ == "__main__":
    main()

"""Numba vs numpy backends for the trajectory and Frank-Wolfe kernels.

Usage: python benchmarks/bench_kernels.py [--slots N] [--repeat R]

The first numba call is timed separately (compile or cache load); the
remaining rows are steady-state best-of-R wall times.  Trajectories from the
two backends must be identical and Frank-Wolfe objectives must agree before
timing is reported.
"""
import argparse
import time

import numpy as np

from gpdsched._accel import HAVE_NUMBA
from gpdsched.harness import canonical_network
from gpdsched.kernels import run_frank_wolfe, run_trajectory
from gpdsched.network import pack
from gpdsched.objective import PenaltyConfig, ProblemSpec
from gpdsched.solver import max_throughput_scale
from gpdsched.stochastic import ArrivalModel, arrival_trace, make_streams


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--slots", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    net = canonical_network()
    packed = pack(net)
    problem = ProblemSpec(penalty=PenaltyConfig(2.0, 5e3, 1e-3)).resolved(net)
    rates = 0.7 * max_throughput_scale(net, np.ones(net.n)) * np.ones(net.n)
    _, a_rng = make_streams(1)
    arrivals = arrival_trace(ArrivalModel("iid-bernoulli-batch", rates), a_rng, args.slots)
    states = np.zeros(args.slots, dtype=np.int64)

    cases = {
        "trajectory": lambda b: run_trajectory(packed, states, arrivals, problem, backend=b),
        "frank-wolfe": lambda b: run_frank_wolfe(packed, np.ones(1), rates, problem, 100_000, 1e-6, b),
    }
    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    print(f"canonical network: {net.n} links, {net.mode_counts[0]} modes; slots={args.slots}")
    print(f"{'kernel':<12} {'backend':<7} {'first call':>11} {'best':>9} {'speedup':>8}")
    for name, fn in cases.items():
        results = {}
        for b in backends:
            t0 = time.perf_counter()
            fn(b)
            first_t = time.perf_counter() - t0
            best, out = best_of(lambda: fn(b), args.repeat)
            results[b] = (first_t, best, out)
        if "numba" in results:
            x, y = results["numba"][2], results["numpy"][2]
            if name == "trajectory":
                assert all(np.array_equal(u, v) for u, v in zip(x, y)), "backends disagree"
            else:
                # summation order differs, so iterates may drift along a face of optima;
                # the objective reached must agree
                assert np.isclose(x[4][-1], y[4][-1], rtol=1e-9), "backends disagree"
        base = results["numpy"][1]
        for b, (first_t, best, _) in results.items():
            print(f"{name:<12} {b:<7} {first_t:>10.3f}s {best:>8.3f}s {base / best:>7.1f}x")


if __name__ == "__main__":
    main()

"""Time the compiled and pure-Python kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--events 20000] [--nodes 150] [--repeat 3]
"""
import argparse
import time

import numpy as np

from graphsurv import _backend
from graphsurv.features import DecayConfig
from graphsurv.intensity import init_model
from graphsurv.simulation import SimConfig, simulate_run


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads(n_events, n_nodes, seed=0):
    rng = np.random.default_rng(seed)
    src = rng.integers(n_nodes, size=n_events)
    dst = (src + 1 + rng.integers(n_nodes - 1, size=n_events)) % n_nodes
    times = np.cumsum(rng.exponential(1.0, n_events))
    keys = (src * n_nodes + dst).astype(np.int64)
    sl = np.sort(rng.integers(0, n_events, n_events)).astype(np.int64)
    dy = rng.choice(keys, n_events).astype(np.int64)
    theta = rng.normal(scale=0.2, size=(10, 5))
    cuts = np.sort(rng.uniform(0.1, 20.0, 9))
    X = rng.normal(size=(n_events, 5))
    rows = np.arange(n_events, dtype=np.int64)
    a = rng.uniform(0, 5, n_events)
    b = a + rng.uniform(0, 10, n_events)
    w = np.ones(n_events)

    m = init_model(n_nodes, 4, cuts=[0.5, 2.0], decay=DecayConfig(0.5, 0.5, 0.5), seed=seed, base_rate=1e-3)
    m.hazard.theta[:, -1] = np.log([0.3, 0.05, 0.005])

    def run(k, name):
        return {
            "event_features": lambda: k.event_features(k.FeatureCore(n_nodes, 0.5, 0.5, 0.5), src, dst, times),
            "resolve_last": lambda: k.resolve_last(keys, sl, dy),
            "pwc_integrals": lambda: k.pwc_integrals(theta, cuts, X, rows, a, b, w, np.zeros_like(theta)),
            "thinning": lambda: simulate_run(m, SimConfig(T=1e12, N=n_events // 4, seed=seed), name),
        }
    return run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=20000)
    ap.add_argument("--nodes", type=int, default=150)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    names = _backend.available()
    run = workloads(args.events, args.nodes)
    results = {n: {k: best_of(f, args.repeat) for k, f in run(_backend.get(n), n).items()} for n in names}
    print(f"events={args.events} nodes={args.nodes} best of {args.repeat}")
    print(f"{'kernel':<16}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for k in results[names[0]]:
        row = f"{k:<16}" + "".join(f"{results[n][k]:>11.4f}s" for n in names)
        if len(names) > 1:
            row += f"{results['python'][k] / results['cython'][k]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()

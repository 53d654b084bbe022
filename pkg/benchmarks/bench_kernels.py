"""Timing comparison of the jitted kernels against the numpy fallback.

Run:
    python benchmarks/bench_kernels.py [--quick]

Each kernel is timed on a representative workload with both backends;
the jitted path is warmed once so compilation is not billed.
"""

import argparse
import os
import time

import numpy as np

os.environ.setdefault("MVHEDGE_NO_NUMBA", "0")

from mvhedge import _kernels as kernels  # noqa: E402
from mvhedge import levy  # noqa: E402


def time_call(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_simulate(n_paths, n_steps, rng):
    dw = rng.standard_normal((n_paths, n_steps)) * np.sqrt(0.01)
    counts = rng.poisson(0.1 * n_steps, n_paths)
    j_off = np.zeros(n_paths + 1, dtype=np.int64)
    j_off[1:] = np.cumsum(counts)
    total = int(j_off[-1])
    t_rel = np.sort(rng.random(total).reshape(-1)) if total else np.empty(0)
    j_step = np.empty(total, dtype=np.int64)
    j_u = np.empty(total)
    for p in range(n_paths):
        sl = slice(j_off[p], j_off[p + 1])
        t = np.sort(rng.random(counts[p])) * n_steps * 0.01
        j_step[sl] = np.minimum((t / 0.01).astype(np.int64), n_steps - 1)
        j_u[sl] = t - j_step[sl] * 0.01
    j_size = rng.exponential(0.125, total)

    def call(backend):
        out = [np.empty((n_paths, n_steps + 1)), np.empty((n_paths, n_steps + 1)),
               np.empty((n_paths, n_steps)), np.empty((n_paths, n_steps)), np.empty((n_paths, n_steps))]
        backend(kernels.MODEL_BNS, 0.5, 0.02, 0.0, 10.0, 1.0, 0.01, 100.0, dw,
                j_off, j_step, j_u, j_size, kernels.SEG_NODES, kernels.SEG_WEIGHTS, *out)

    return call


def bench_hedge(n_paths, n_steps, rng):
    d_path = 100.0 * np.exp(np.cumsum(rng.standard_normal((n_paths, n_steps + 1)) * 0.03, axis=1))
    value = np.full((n_paths, n_steps), 30000.0)
    xi = np.zeros((n_paths, n_steps))
    adj = 0.02 / d_path[:, :-1]

    def call(backend):
        out = np.empty(n_paths)
        backend(d_path, value, xi, adj, 10000.0, out)

    return call


def bench_opportunity(n_inner, rng):
    spec = levy.CompoundPoissonExp(10.0, 8.0)
    paths = [levy.sample_jump_path([spec], 1.0, (3, i)) for i in range(n_inner)]
    offsets = np.zeros(n_inner + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(p) for p in paths])
    times = np.concatenate([p.times for p in paths])
    sizes = np.concatenate([p.sizes for p in paths])

    def call(backend):
        out = np.empty(n_inner)
        backend(kernels.MODEL_BNS, 0.5, 0.02, 0.0, 1.0, 10.0, 0.0, 1.0,
                offsets, times, sizes, kernels.SEG_NODES, kernels.SEG_WEIGHTS, out)

    return call


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    scale = 0.2 if args.quick else 1.0
    rng = np.random.default_rng(0)

    rows = []
    cases = [
        ("path simulation", bench_simulate(int(20000 * scale), 1000, rng),
         kernels.simulate_d1h1_numba, kernels.simulate_d1h1_numpy),
        ("hedge sweep", bench_hedge(int(50000 * scale), 1000, rng),
         kernels.hedge_sweep_numba, kernels.hedge_sweep_numpy),
        ("surface inner MC", bench_opportunity(int(20000 * scale), rng),
         kernels.opportunity_mc_numba, kernels.opportunity_mc_numpy),
    ]
    if not kernels.HAVE_NUMBA:
        print("numba unavailable; only the numpy path can be timed")
    for name, call, jitted, plain in cases:
        t_np = time_call(lambda: call(plain))
        if kernels.HAVE_NUMBA:
            call(jitted)  # warm/compile
            t_nb = time_call(lambda: call(jitted))
            rows.append((name, t_nb, t_np, t_np / t_nb))
        else:
            rows.append((name, float("nan"), t_np, float("nan")))

    print(f"{'kernel':24s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s}")
    for name, t_nb, t_np, sp in rows:
        print(f"{name:24s} {t_nb:10.4f} {t_np:10.4f} {sp:8.2f}")


if __name__ == "__main__":
    main()

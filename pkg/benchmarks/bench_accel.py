"""Head-to-head timing of the jitted kernels against their numpy twins.

Run:  python benchmarks/bench_accel.py
Disable the jitted path for the whole process with  KOHBED_NUMBA=0.
"""

import argparse
import time

import numpy as np

from kohbed import _accel
from kohbed.criteria import NmcConfig, mi_scores_shared
from kohbed.metrics import crps
from kohbed.mixture import GaussianMixture


def random_mixture(k, d, rng):
    means = rng.normal(size=(k, d))
    covs = np.empty((k, d, d))
    for i in range(k):
        a = rng.normal(size=(d, d + 3))
        covs[i] = a @ a.T / (d + 3) + 0.2 * np.eye(d)
    return GaussianMixture(np.full(k, 1.0 / k), means, covs)


def timed(fn, repeats=3):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_mi_scoring(rng):
    mix = random_mixture(400, 64, rng)
    cols = list(range(40, 64))
    cfg = NmcConfig(outer_s=3000, seed=0)
    mi_scores_shared(mix, 40, cols, cfg)  # warm both jit and BLAS
    return timed(lambda: mi_scores_shared(mix, 40, cols, cfg))


def bench_crps_double_sum(rng):
    samples = rng.normal(size=(1500, 8))
    _accel.crps_double_sum(samples[:50])  # warm
    return timed(lambda: _accel.crps_double_sum(samples))


def bench_crps_full(rng):
    samples = rng.normal(size=(20000, 50))
    truth = rng.normal(size=50)
    return timed(lambda: crps(samples, truth))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.parse_args()
    rng = np.random.default_rng(0)
    benches = [
        ("mixture MI scoring (400 comps, S=3000, 24 cands)",
         bench_mi_scoring),
        ("CRPS pairwise double sum (S=1500, 8 coords)",
         bench_crps_double_sum),
        ("CRPS sorted estimator (S=20000, 50 coords)", bench_crps_full),
    ]
    jit_available = _accel.NUMBA_ENABLED
    rows = []
    for label, fn in benches:
        _accel.NUMBA_ENABLED = jit_available
        t_jit = fn(rng) if jit_available else float("nan")
        _accel.NUMBA_ENABLED = False
        t_np = fn(rng)
        rows.append((label, t_jit, t_np))
    _accel.NUMBA_ENABLED = jit_available

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numba [s]':>10}  {'numpy [s]':>10}  speedup")
    for label, t_jit, t_np in rows:
        speed = t_np / t_jit if t_jit == t_jit else float("nan")
        print(f"{label:<{width}}  {t_jit:>10.4f}  {t_np:>10.4f}  "
              f"{speed:>6.2f}x")


if __name__ == "__main__":
    main()

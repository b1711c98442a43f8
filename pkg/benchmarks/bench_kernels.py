"""Compiled vs pure-Python kernels on a 5-hour recording.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import timeit

import numpy as np

from cogpsg import _kernels_py, kernels

try:
    from cogpsg import _kernels as compiled
except ImportError:
    compiled = None


def inputs(seconds=18000.0, rate=70.0, seed=0):
    rng = np.random.default_rng(seed)
    n_beats = int(seconds)
    idx = np.sort(rng.choice(int(seconds * rate), size=3 * n_beats, replace=False)).astype(np.int64)
    val = rng.exponential(1.0, len(idx)) * rng.choice([0.2, 3.0], len(idx))
    x = rng.standard_normal(int(seconds * rate)) * 20.0
    return idx, val, x


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    idx, val, x = inputs()
    cases = {
        "threshold_peaks": lambda impl: impl.threshold_peaks(idx, val, 14, 3.0, 0.5, 1.66),
        "epoch_stats": lambda impl: impl.epoch_stats(x, 350),
    }
    print(f"default backend: {kernels.BACKEND}")
    print(f"{'kernel':<18}{'python (ms)':>14}{'cython (ms)':>14}{'speedup':>10}")
    for name, call in cases.items():
        py = min(timeit.repeat(lambda: call(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if compiled is None:
            print(f"{name:<18}{py:>14.2f}{'n/a':>14}{'n/a':>10}")
            continue
        cy = min(timeit.repeat(lambda: call(compiled), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<18}{py:>14.2f}{cy:>14.2f}{py / cy:>9.1f}x")


if __name__ == "__main__":
    main()

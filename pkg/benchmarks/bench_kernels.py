"""Compiled vs pure-Python kernels, plus an end-to-end shadow under each backend.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--units 2000]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np
from scipy import stats

from bellshadow import _fallback

try:
    from bellshadow import _kernels
except ImportError:  # extension not built
    _kernels = None

SHADOW = """
import math, time
from bellshadow.belltest import BellTestConfig
from bellshadow.geodyn import EarthModel, orbit_over
from bellshadow.kernels import BACKEND
from bellshadow.shadows import GeoGrid, SimParams, bell_shadow_single_downlink
orbit = orbit_over(0.0, 0.0, 0.0, 500e3, EarthModel())
start = time.perf_counter()
m = bell_shadow_single_downlink(orbit, GeoGrid(1.0, 1.0), SimParams(), BellTestConfig(t_acq=1e-3), 0.0, seed=1)
print(BACKEND, len(m), time.perf_counter() - start)
"""


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def row(name, compiled, python):
    speedup = python / compiled if compiled else float("nan")
    print(f"{name:<34} {compiled * 1e3:10.2f} ms {python * 1e3:10.2f} ms {speedup:8.1f}x")


def end_to_end(pure: bool):
    env = dict(os.environ)
    env.pop("BELLSHADOW_PURE_PYTHON", None)
    if pure:
        env["BELLSHADOW_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", SHADOW], env=env, capture_output=True, text=True, check=True)
    backend, cells, seconds = out.stdout.split()
    return backend, int(cells), float(seconds)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--units", type=int, default=2000)
    args = ap.parse_args(argv)
    if _kernels is None:
        sys.exit("compiled extension not built; run `python3 setup.py build_ext --inplace`")

    rng = np.random.default_rng(0)
    ids = np.arange(args.units, dtype=np.int64)
    u = rng.random(args.units * 30)
    n = rng.integers(10_000, 10_000_000, u.size)
    p = 10 ** rng.uniform(-7, -3, u.size)
    assert np.array_equal(_kernels.binom_ppf(u, n, p), _fallback.binom_ppf(u, n, p))
    assert np.array_equal(_kernels.counter_uniforms(7, ids, 30, 34), _fallback.counter_uniforms(7, ids, 30, 34))

    print(f"{'kernel':<34} {'compiled':>13} {'python':>13} {'speedup':>9}")
    row(f"counter_uniforms ({args.units}x30x34)",
        best(lambda: _kernels.counter_uniforms(7, ids, 30, 34), args.repeat),
        best(lambda: _fallback.counter_uniforms(7, ids, 30, 34), args.repeat))
    row(f"binom_ppf ({u.size} draws)",
        best(lambda: _kernels.binom_ppf(u, n, p), args.repeat),
        best(lambda: _fallback.binom_ppf(u, n, p), args.repeat))
    scipy_t = best(lambda: stats.binom.ppf(u, n, p), args.repeat)
    print(f"{'scipy.stats.binom.ppf (reference)':<34} {scipy_t * 1e3:10.2f} ms")

    fast, slow = end_to_end(False), end_to_end(True)
    assert fast[1] == slow[1]
    print(f"{'single-downlink shadow, 1 deg grid':<34} {fast[2] * 1e3:10.2f} ms {slow[2] * 1e3:10.2f} ms "
          f"{slow[2] / fast[2]:8.1f}x   ({fast[1]} cells, backends {fast[0]}/{slow[0]})")


if __name__ == "__main__":
    main()

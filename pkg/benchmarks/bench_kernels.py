"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py            # kernel timings
    python3 benchmarks/bench_kernels.py --e2e      # plus a 5-repeat experiment per backend

Every kernel is also checked for agreement between the backends on the
benchmark inputs before it is timed.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from cdrlr import kernels


def cases(rng: np.random.Generator):
    n = 200_000
    lat1, lat2 = rng.uniform(51, 53, (2, n))
    lon1, lon2 = rng.uniform(4, 6, (2, n))
    yield "haversine_many", (lat1, lon1, lat2, lon2), {}, n

    ta = np.sort(rng.integers(1, 10**6, 50_000))
    tb = np.sort(rng.integers(1, 10**6, 50_000))
    yield "merge_switches", (ta, tb, True), {}, len(ta) + len(tb)

    y = (rng.random(100_000) < np.linspace(0, 1, 100_000)).astype(float)
    yield "pav", (y,), {}, len(y)

    samples = rng.normal(size=3_000)
    x = rng.normal(size=3_000)
    yield "kde_logpdf", (samples, 0.05, x), {}, len(samples) * len(x)

    grid_lat, grid_lon = 52.1 + rng.normal(0, 0.2, n), 5.1 + rng.normal(0, 0.3, n)
    yield "nearest_lattice", (grid_lat, grid_lon, 52.1, 5.1, 0.018, 0.029), {}, n


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(u, v) for u, v in zip(a, b))
    a, b = np.asarray(a), np.asarray(b)
    if a.dtype.kind == "f":
        return np.allclose(a, b, rtol=1e-12, atol=1e-12)
    return np.array_equal(a, b)


def bench_kernels(repeat: int) -> int:
    backends = kernels.available_backends()
    names = sorted(backends, reverse=True)
    print(f"backends: {', '.join(names)} (default: {kernels.BACKEND})")
    print(f"{'kernel':<18}{'size':>12}" + "".join(f"{n + ' [ms]':>16}" for n in names) + f"{'speed-up':>10}")
    status = 0
    for name, args, kw, size in cases(np.random.default_rng(0)):
        fn = getattr(kernels, name)
        results = {b: fn(*args, impl=backends[b], **kw) for b in names}
        if len(names) > 1 and not _same(results[names[0]], results[names[1]]):
            print(f"{name}: backends disagree", file=sys.stderr)
            status = 1
        times = {b: min(timeit.repeat(lambda b=b: fn(*args, impl=backends[b], **kw),
                                      number=1, repeat=repeat)) * 1e3 for b in names}
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:<18}{size:>12}" + "".join(f"{times[b]:>16.2f}" for b in names) + f"{speed:>10.1f}")
    return status


E2E = """
import time
from cdrlr.kernels import BACKEND
from cdrlr.population_sim import SimConfig, simulate_population
from cdrlr.corpus import LogCorpus
from cdrlr.evaluation import ExperimentConfig, run_experiment
t0 = time.perf_counter()
pop = simulate_population(SimConfig())
t1 = time.perf_counter()
corpus = LogCorpus(pop.logs, pop.users)
corpus.pairs()
t2 = time.perf_counter()
run_experiment(corpus, ExperimentConfig(n_repeats=5))
t3 = time.perf_counter()
print(f"{BACKEND:<8} simulate {t1 - t0:6.2f}s  pairs {t2 - t1:6.2f}s  5 repeats {t3 - t2:6.2f}s")
"""


def bench_e2e():
    for pure in ("0", "1"):
        env = dict(os.environ, CDRLR_PURE_PYTHON=pure)
        subprocess.run([sys.executable, "-c", E2E], env=env, check=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--e2e", action="store_true", help="also time an end-to-end experiment per backend")
    args = ap.parse_args()
    status = bench_kernels(args.repeat)
    if args.e2e:
        sys.stdout.flush()
        bench_e2e()
    sys.exit(status)


if __name__ == "__main__":
    main()

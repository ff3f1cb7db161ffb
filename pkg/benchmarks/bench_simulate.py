"""Time the Euler simulation kernels: numba against the pure-numpy fallback.

Usage::

    python3 benchmarks/bench_simulate.py [--paths 20000] [--steps 200] [--repeat 3]

Both backends produce bitwise identical paths; the script checks that too.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from polymeasure._accel import HAVE_NUMBA
from polymeasure.continuum import preset
from polymeasure.generator import OperatorSpec, random_spec
from polymeasure.measures import Grid, MeasureVec
from polymeasure.simulate import simulate


def cases():
    yield "CIR m=1 (diagonal)", OperatorSpec.from_arrays(1, b=0.1, B1=-0.5, alpha=1.0), \
        MeasureVec(Grid.of_size(1), [1.0])
    spec, _, nu0 = preset("fisher_snedecor", m=5)
    yield "fisher_snedecor m=5 (dense)", spec, nu0
    rng = np.random.default_rng(0)
    spec = random_spec(8, rng, n_loadings=2)
    yield "random m=8 (dense)", spec, MeasureVec(Grid.of_size(8), np.ones(8))


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=20000)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        raise SystemExit("numba unavailable or disabled; nothing to compare")
    print(f"{'case':30s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s} {'ns/path-step':>13s}")
    for name, spec, nu0 in cases():
        def run(backend):
            return simulate(spec, nu0, 1.0, args.steps, args.paths, seed=1,
                            record_every=args.steps, backend=backend)
        run("numba")  # compile outside the timed region
        t_nb, a = best_time(lambda: run("numba"), args.repeat)
        t_np, b = best_time(lambda: run("numpy"), args.repeat)
        assert np.array_equal(a.paths, b.paths), "backends disagree"
        per = 1e9 * t_nb / (args.paths * args.steps)
        print(f"{name:30s} {t_nb:10.3f} {t_np:10.3f} {t_np / t_nb:8.1f} {per:13.1f}")


if __name__ == "__main__":
    main()

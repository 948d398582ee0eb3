"""Time the numba kernels against their numpy fallbacks.

Kernel timings call both implementations in-process. The end-to-end timing
runs a pruned classification in a subprocess per backend, selected with the
``DIFFCLS_NUMBA`` environment variable.

    python3 benchmarks/bench_kernels.py --repeat 5 --classes 100
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from diffcls import _accel, kernels

END_TO_END = """
import time, numpy as np
from diffcls.classifier import ClassifierConfig, classify_dataset
from diffcls.diffusion import GaussianDenoiser, generate_world_sample, make_world
rng = np.random.default_rng(0)
w = make_world({k}, {d}, 1.0, 1.0, rng)
X = np.stack([generate_world_sample(w, int(c), rng) for c in rng.integers(0, {k}, {n})])
m = GaussianDenoiser(w)
classify_dataset(X[:2], w.conditions(), m, ClassifierConfig())
t0 = time.perf_counter()
classify_dataset(X, w.conditions(), m, ClassifierConfig())
print(time.perf_counter() - t0)
"""


def _best(fn, repeat):
    fn()  # warm-up, includes compilation for numba
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(k, d, rounds, rng):
    means = rng.normal(size=(k, d))
    x0 = rng.normal(size=d)
    xts = rng.normal(size=(rounds, d))
    a, b = rng.random(rounds), rng.random(rounds)
    n = np.full(k, 50.0)
    mean = rng.normal(size=k)
    m2 = rng.random(k) * 50
    W = rng.gamma(2.0, 1.0, (rounds, k)) + np.linspace(0, 0.3, k)[None, :]

    def prune(fn):
        def run():
            alive = np.ones(k, dtype=bool)
            state = [np.zeros(k) for _ in range(4)]
            fn(W, 0, rounds, alive, *state, 0, 20, rounds, 2e-3, False, np.zeros(k, dtype=np.int64))
        return run

    return {
        "gauss_errors_rounds": {impl: (lambda f=getattr(kernels, f"gauss_errors_rounds_{impl}"):
                                       f(x0, xts, a, b, means)) for impl in ("nb", "np")},
        "paired_pvalues": {impl: (lambda f=getattr(kernels, f"paired_pvalues_{impl}"):
                                  f(n, mean, m2, False)) for impl in ("nb", "np")},
        "welford_build": {impl: (lambda f=getattr(kernels, f"welford_build_{impl}"): f(W))
                          for impl in ("nb", "np")},
        "prune_rounds": {impl: prune(getattr(kernels, f"prune_rounds_{impl}")) for impl in ("nb", "np")},
    }


def end_to_end(flag, k, d, n):
    env = dict(os.environ, DIFFCLS_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", END_TO_END.format(k=k, d=d, n=n)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--classes", type=int, default=100)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--rounds", type=int, default=512)
    p.add_argument("--examples", type=int, default=50, help="examples in the end-to-end run")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", action="store_true", help="print machine-readable results")
    args = p.parse_args(argv)
    if not _accel.HAS_NUMBA:
        p.exit(1, "numba is not installed; nothing to compare\n")

    rng = np.random.default_rng(0)
    results = {}
    for name, impls in kernel_cases(args.classes, args.dim, args.rounds, rng).items():
        results[name] = {impl: _best(fn, args.repeat) for impl, fn in impls.items()}
    results["classify_pruned (end to end)"] = {
        "nb": end_to_end("1", args.classes, args.dim, args.examples),
        "np": end_to_end("0", args.classes, args.dim, args.examples),
    }
    if args.json:
        print(json.dumps(results, indent=2))
        return 0
    print(f"K={args.classes} d={args.dim} rounds={args.rounds}")
    print(f"{'kernel':32s} {'numba s':>12s} {'numpy s':>12s} {'speedup':>8s}")
    for name, r in results.items():
        print(f"{name:32s} {r['nb']:12.6f} {r['np']:12.6f} {r['np'] / r['nb']:8.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Time the compiled and numpy kernel backends on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per (kernel, backend) with the best-of-N wall time and the
speedup of the compiled backend over the numpy one.
"""

import argparse
import time

import numpy as np

from corrhash import kernels
from corrhash.boltzmann import state_matrix
from corrhash.retrieval import pack_bits


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    db = pack_bits(rng.integers(0, 2, (100_000, 128)))
    queries = pack_bits(rng.integers(0, 2, (200, 128)))
    excl = np.full(len(queries), -1, dtype=np.int64)
    mu = rng.normal(size=16)
    a = rng.normal(size=(16, 16))
    sigma = a @ a.T / 16 + 0.1 * np.eye(16)
    states = state_matrix(4)
    R = rng.normal(size=(20_000, 8, 4))
    return {
        "hamming_to_all 100k x 128b": lambda k: k.hamming_to_all(db, queries[0]),
        "topk_hamming k=100": lambda k: k.topk_hamming(db, queries[0], 100, -1),
        "topk_hamming_batch 200 queries": lambda k: k.topk_hamming_batch(db, queries, 100, excl),
        "enumerate_log_mass m=16": lambda k: k.enumerate_log_mass(mu, sigma),
        "mixture_logpmf 20k x k=8, m=4": lambda k: k.mixture_logpmf(states, R),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend not built; timing the numpy backend only")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':34s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    for name, fn in cases(rng).items():
        times = {b: best_of(lambda: fn(mod), args.repeat) for b, mod in backends.items()}
        cells = "".join(f"{t * 1e3:10.2f}ms" for t in times.values())
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:34s}{cells}  {speed:8.1f}x")


if __name__ == "__main__":
    main()

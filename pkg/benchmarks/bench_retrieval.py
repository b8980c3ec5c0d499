"""Time the numba and numpy retrieval kernels on the same random store.

    python3 benchmarks/bench_retrieval.py --rows 20000 --dim 512 --repeat 20
"""

import argparse
import time

import numpy as np

from emocue import kernels


def bench(backend, matrix, queries, alpha, k, repeat):
    kernels.rank(kernels.score(matrix, *queries[0], alpha, backend)[2], k, backend)  # warm-up / JIT
    times = []
    for _ in range(repeat):
        for text, image in queries:
            start = time.perf_counter()
            kernels.rank(kernels.score(matrix, text, image, alpha, backend)[2], k, backend)
            times.append(time.perf_counter() - start)
    return np.median(times) * 1e3, np.percentile(times, 95) * 1e3


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=20_000)
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--queries", type=int, default=8)
    p.add_argument("--repeat", type=int, default=10)
    p.add_argument("--alpha", type=float, default=0.6)
    p.add_argument("-k", type=int, default=10)
    args = p.parse_args()

    rng = np.random.default_rng(0)
    matrix = rng.standard_normal((args.rows, args.dim))
    queries = [(rng.standard_normal(args.dim), rng.standard_normal(args.dim)) for _ in range(args.queries)]

    results = {}
    backends = ["numpy"] + (["numba"] if kernels.HAVE_NUMBA else [])
    for backend in backends:
        results[backend] = bench(backend, matrix, queries, args.alpha, args.k, args.repeat)
        median, p95 = results[backend]
        print(f"{backend:6s} median {median:8.3f} ms   p95 {p95:8.3f} ms")
    if len(results) == 2:
        print(f"numpy/numba median ratio: {results['numpy'][0] / results['numba'][0]:.2f}x")

    text, image = queries[0]
    ranked = [kernels.rank(kernels.score(matrix, text, image, args.alpha, b)[2], args.k, b) for b in backends]
    assert all(np.array_equal(ranked[0], r) for r in ranked), "backends disagree on top-k"


if __name__ == "__main__":
    main()

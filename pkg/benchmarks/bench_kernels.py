#!/usr/bin/env python3
"""Benchmark the compiled scoring kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Also verifies bit-identical outputs between the two implementations on the
benchmark inputs, since the test suite's determinism guarantees rely on it.
"""

from __future__ import annotations

import argparse
import random
import time

import numpy as np

from ttpmap import kernels


def make_bm25_workload(n_docs: int, n_terms: int, seed: int):
    rng = random.Random(seed)
    doc_lens = np.array([float(rng.randint(20, 400)) for _ in range(n_docs)])
    postings = []
    for _ in range(n_terms):
        df = rng.randint(n_docs // 20 + 1, n_docs // 2)
        docs = np.array(sorted(rng.sample(range(n_docs), df)), dtype=np.int32)
        tfs = np.array([float(rng.randint(1, 8)) for _ in range(df)])
        postings.append((rng.uniform(0.1, 4.0), docs, tfs))
    return n_docs, doc_lens, float(doc_lens.mean()), postings


def make_cosine_workload(n_vectors: int, dim: int, seed: int):
    rng = np.random.default_rng(seed)
    return rng.normal(size=dim), np.ascontiguousarray(rng.normal(size=(n_vectors, dim)))


def timed(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    impls = {"python": kernels.get_impl("python")}
    if kernels.BACKEND == "compiled":
        impls["compiled"] = kernels.get_impl("compiled")
    else:
        print("note: compiled kernels not built; benchmarking the fallback only")

    print(f"active backend at import: {kernels.BACKEND}\n")

    n_docs, doc_lens, avg, postings = make_bm25_workload(n_docs=20000, n_terms=24, seed=1)
    print(f"bm25_scores: {n_docs} docs, {len(postings)} query terms")
    results = {}
    for name, impl in impls.items():
        results[name] = impl.bm25_scores(n_docs, doc_lens, avg, 1.2, 0.75, postings)
        best = timed(lambda i=impl: i.bm25_scores(n_docs, doc_lens, avg, 1.2, 0.75, postings), args.repeats)
        print(f"  {name:9s} {best * 1e3:9.2f} ms")
    if len(results) == 2:
        identical = np.array_equal(results["python"], results["compiled"])
        print(f"  outputs bit-identical: {identical}")
        assert identical

    q, matrix = make_cosine_workload(n_vectors=4000, dim=256, seed=2)
    print(f"\ndots_and_norms: {matrix.shape[0]} vectors x dim {matrix.shape[1]}")
    results = {}
    for name, impl in impls.items():
        results[name] = impl.dots_and_norms(q, matrix)
        best = timed(lambda i=impl: i.dots_and_norms(q, matrix), args.repeats)
        print(f"  {name:9s} {best * 1e3:9.2f} ms")
    if len(results) == 2:
        identical = all(
            np.array_equal(a, b) for a, b in zip(results["python"][:2], results["compiled"][:2])
        ) and results["python"][2] == results["compiled"][2]
        print(f"  outputs bit-identical: {identical}")
        assert identical


if __name__ == "__main__":
    main()

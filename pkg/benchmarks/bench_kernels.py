"""Compare the numba and numpy kernel backends on realistic workloads.

Usage:
    python benchmarks/bench_kernels.py [--repeats N] [--scale small|medium|large]

Times the three hot kernels (mttkrp, CP reconstruction, pattern-occurrence
counting) on both implementations regardless of the FLEETMAINT_BACKEND
setting, after a JIT warmup, and prints per-kernel medians plus the speedup
of numba over numpy.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from fleetmaint import backend

SCALES = {
    "small": dict(dims=(60, 8, 48), rank=5, n_seqs=60, seq_len=80),
    "medium": dict(dims=(300, 40, 96), rank=15, n_seqs=400, seq_len=150),
    "large": dict(dims=(1087, 81, 96), rank=25, n_seqs=1087, seq_len=250),
}


def time_call(fn, repeats: int) -> float:
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--scale", choices=sorted(SCALES), default="medium")
    args = parser.parse_args()

    if "numba" not in backend.IMPLEMENTATIONS:
        raise SystemExit("numba is not importable; nothing to compare")

    cfg = SCALES[args.scale]
    dims, rank = cfg["dims"], cfg["rank"]
    rng = np.random.default_rng(7)
    # counts-like sparse-ish tensor: mostly zeros with Poisson bumps
    x = rng.poisson(0.05, size=dims).astype(np.float64)
    factors = [rng.random((d, rank)) for d in dims]
    weights = rng.random(rank)

    events = rng.integers(0, 30, size=cfg["n_seqs"] * cfg["seq_len"]).astype(np.int32)
    offsets = np.arange(0, cfg["n_seqs"] + 1, dtype=np.int64) * cfg["seq_len"]
    pattern = events[:3].copy()

    cases = []
    for mode, f1, f2 in ((1, factors[1], factors[2]), (2, factors[0], factors[2]), (3, factors[0], factors[1])):
        cases.append((f"mttkrp mode {mode}", "mttkrp", (x, f1, f2, mode)))
    cases.append(("cp reconstruction", "cp_compose", (weights, *factors)))
    cases.append(("pattern counting", "count_occurrences", (events, offsets, pattern)))

    print(f"scale={args.scale} dims={dims} rank={rank} "
          f"sequences={cfg['n_seqs']}x{cfg['seq_len']} repeats={args.repeats}")
    print(f"{'kernel':22s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for label, name, call_args in cases:
        results = {}
        for impl_name in ("numpy", "numba"):
            fn = backend.IMPLEMENTATIONS[impl_name][name]
            fn(*call_args)  # warmup / JIT compile
            results[impl_name] = time_call(lambda: fn(*call_args), args.repeats)
        ratio = results["numpy"] / results["numba"] if results["numba"] > 0 else float("inf")
        print(
            f"{label:22s} {results['numpy'] * 1e3:9.2f}ms {results['numba'] * 1e3:9.2f}ms "
            f"{ratio:7.1f}x"
        )


if __name__ == "__main__":
    main()

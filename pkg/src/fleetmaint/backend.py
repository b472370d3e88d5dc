"""Numeric kernel backends.

The hot inner loops (MTTKRP, CP reconstruction, pattern-occurrence counting)
exist twice: as numba ``@njit`` kernels and as pure-numpy fallbacks. The
active path is chosen once at import time from the ``FLEETMAINT_BACKEND``
environment variable:

    auto   (default) per-kernel best: numba for pattern counting (50-75x
           faster in benchmarks/bench_kernels.py), numpy for the dense
           tensor kernels where einsum's BLAS path wins; numpy everywhere
           when numba is not importable
    numba  force numba for every kernel, fail loudly if missing
    numpy  force the pure-numpy path for every kernel

Both paths are deterministic: every output cell is reduced in a fixed order,
so repeated runs on the same inputs are bitwise identical within a backend.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ENV_VAR = "FLEETMAINT_BACKEND"

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False


def _requested_backend() -> str:
    value = os.environ.get(ENV_VAR, "auto").strip().lower()
    if value not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"{ENV_VAR} must be one of auto/numba/numpy, got {value!r}"
        )
    if value == "numba" and not HAS_NUMBA:
        raise ImportError(f"{ENV_VAR}=numba but numba is not importable")
    if value == "auto":
        return "numba" if HAS_NUMBA else "numpy"
    return value


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------


def _mttkrp_numpy(x: np.ndarray, f1: np.ndarray, f2: np.ndarray, mode: int) -> np.ndarray:
    # einsum contracts without materializing the Khatri-Rao product
    if mode == 1:
        return np.einsum("ijk,jr,kr->ir", x, f1, f2, optimize=True)
    if mode == 2:
        return np.einsum("ijk,ir,kr->jr", x, f1, f2, optimize=True)
    return np.einsum("ijk,ir,jr->kr", x, f1, f2, optimize=True)


def _cp_compose_numpy(weights: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    return np.einsum("r,ir,jr,kr->ijk", weights, a, b, c, optimize=True)


def _count_occurrences_numpy(events: np.ndarray, offsets: np.ndarray, pattern: np.ndarray) -> int:
    total = 0
    width = pattern.shape[0]
    for s in range(offsets.shape[0] - 1):
        seq = events[offsets[s] : offsets[s + 1]]
        if seq.shape[0] < width:
            continue
        windows = sliding_window_view(seq, width)
        total += int(np.all(windows == pattern, axis=1).sum())
    return total


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _mttkrp_mode1_nb(x, f1, f2, out):
        dim_i, dim_j, dim_k = x.shape
        rank = f1.shape[1]
        for i in range(dim_i):
            for j in range(dim_j):
                for k in range(dim_k):
                    v = x[i, j, k]
                    if v != 0.0:
                        for r in range(rank):
                            out[i, r] += v * f1[j, r] * f2[k, r]
        return out

    @njit(cache=True)
    def _mttkrp_mode2_nb(x, f1, f2, out):
        dim_i, dim_j, dim_k = x.shape
        rank = f1.shape[1]
        for i in range(dim_i):
            for j in range(dim_j):
                for k in range(dim_k):
                    v = x[i, j, k]
                    if v != 0.0:
                        for r in range(rank):
                            out[j, r] += v * f1[i, r] * f2[k, r]
        return out

    @njit(cache=True)
    def _mttkrp_mode3_nb(x, f1, f2, out):
        dim_i, dim_j, dim_k = x.shape
        rank = f1.shape[1]
        for i in range(dim_i):
            for j in range(dim_j):
                for k in range(dim_k):
                    v = x[i, j, k]
                    if v != 0.0:
                        for r in range(rank):
                            out[k, r] += v * f1[i, r] * f2[j, r]
        return out

    @njit(cache=True)
    def _cp_compose_nb(weights, a, b, c, out):
        rank = weights.shape[0]
        dim_i, dim_j, dim_k = out.shape
        for r in range(rank):
            w = weights[r]
            for i in range(dim_i):
                wa = w * a[i, r]
                for j in range(dim_j):
                    wab = wa * b[j, r]
                    for k in range(dim_k):
                        out[i, j, k] += wab * c[k, r]
        return out

    @njit(cache=True)
    def _count_occurrences_nb(events, offsets, pattern):
        total = 0
        width = pattern.shape[0]
        for s in range(offsets.shape[0] - 1):
            start = offsets[s]
            stop = offsets[s + 1]
            for w in range(stop - start - width + 1):
                hit = True
                for t in range(width):
                    if events[start + w + t] != pattern[t]:
                        hit = False
                        break
                if hit:
                    total += 1
        return total

    def _mttkrp_numba(x, f1, f2, mode):
        out_rows = x.shape[mode - 1]
        out = np.zeros((out_rows, f1.shape[1]))
        if mode == 1:
            return _mttkrp_mode1_nb(x, f1, f2, out)
        if mode == 2:
            return _mttkrp_mode2_nb(x, f1, f2, out)
        return _mttkrp_mode3_nb(x, f1, f2, out)

    def _cp_compose_numba(weights, a, b, c):
        out = np.zeros((a.shape[0], b.shape[0], c.shape[0]))
        return _cp_compose_nb(weights, a, b, c, out)

    def _count_occurrences_numba(events, offsets, pattern):
        return int(_count_occurrences_nb(events, offsets, pattern))


IMPLEMENTATIONS: dict[str, dict[str, object]] = {
    "numpy": {
        "mttkrp": _mttkrp_numpy,
        "cp_compose": _cp_compose_numpy,
        "count_occurrences": _count_occurrences_numpy,
    }
}
if HAS_NUMBA:
    IMPLEMENTATIONS["numba"] = {
        "mttkrp": _mttkrp_numba,
        "cp_compose": _cp_compose_numba,
        "count_occurrences": _count_occurrences_numba,
    }

ACTIVE = _requested_backend()
if ACTIVE == "numba" and os.environ.get(ENV_VAR, "auto").strip().lower() == "auto":
    # benchmark-guided mix: BLAS-backed einsum wins the dense tensor kernels
    mttkrp_kernel = IMPLEMENTATIONS["numpy"]["mttkrp"]
    cp_compose_kernel = IMPLEMENTATIONS["numpy"]["cp_compose"]
    count_occurrences_kernel = IMPLEMENTATIONS["numba"]["count_occurrences"]
    ACTIVE = "auto(numpy tensor kernels, numba counting)"
else:
    _impl = IMPLEMENTATIONS[ACTIVE]
    mttkrp_kernel = _impl["mttkrp"]
    cp_compose_kernel = _impl["cp_compose"]
    count_occurrences_kernel = _impl["count_occurrences"]


def active_backend() -> str:
    """Name of the kernel path selected at import time."""
    return ACTIVE


def warm_up() -> None:
    """Trigger JIT compilation of all hot kernels on tiny inputs."""
    x = np.ones((2, 2, 2))
    f = np.ones((2, 2))
    for mode in (1, 2, 3):
        mttkrp_kernel(x, f, f, mode)
    cp_compose_kernel(np.ones(2), f, f, f)
    count_occurrences_kernel(
        np.zeros(4, dtype=np.int32),
        np.array([0, 4], dtype=np.int64),
        np.zeros(2, dtype=np.int32),
    )

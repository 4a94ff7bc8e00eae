"""Hot inner kernels, in numba and pure-numpy flavours.

The simulated device spends its time in three inner loops: compacting
kept elements out of a filter block, folding samples into a histogram
accumulator, and row-dot products for grouped matrix-vector work.
Each has an @njit implementation and a numpy fallback.

Selection: numba is used when it imports cleanly, unless the
environment variable PIMFLOW_PURE_NUMPY=1 forces the numpy paths.
``python -m pimflow.accel`` benchmarks one flavour against the other.

All arithmetic is modular in the element width.  Accumulations run in
uint64 where convenient; since 2**32 divides 2**64 the final cast back
to uint32 agrees with per-step wraparound.
"""

import os
import time

import numpy as np

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag instead
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("PIMFLOW_PURE_NUMPY", "") != "1"


# --- numpy flavours ---------------------------------------------------------

def _compact_masked_np(values, mask, out, base):
    kept = values[mask]
    out[base:base + len(kept)] = kept
    return len(kept)


def _hist_accumulate_np(acc, samples):
    counts = np.bincount(samples, minlength=len(acc))
    acc += counts[:len(acc)].astype(acc.dtype)


def _group_dot_u32_np(groups, vec, out):
    prod = groups.astype(np.uint64) * vec.astype(np.uint64)
    out[:] = prod.sum(axis=1, dtype=np.uint64).astype(np.uint32)


def _sum_u32_np(values):
    return np.uint32(values.sum(dtype=np.uint64) & 0xFFFFFFFF)


# --- numba flavours ---------------------------------------------------------

if HAS_NUMBA:

    @numba.njit(cache=True)
    def _compact_masked_nb(values, mask, out, base):
        k = 0
        for i in range(len(values)):
            if mask[i]:
                out[base + k] = values[i]
                k += 1
        return k

    @numba.njit(cache=True)
    def _hist_accumulate_nb(acc, samples):
        for i in range(len(samples)):
            acc[samples[i]] += 1

    @numba.njit(cache=True)
    def _group_dot_u32_nb(groups, vec, out):
        for r in range(groups.shape[0]):
            s = np.uint64(0)
            for c in range(groups.shape[1]):
                s += np.uint64(groups[r, c]) * np.uint64(vec[c])
            out[r] = np.uint32(s & np.uint64(0xFFFFFFFF))

    @numba.njit(cache=True)
    def _sum_u32_nb(values):
        s = np.uint64(0)
        for i in range(len(values)):
            s += np.uint64(values[i])
        return np.uint32(s & np.uint64(0xFFFFFFFF))


if USE_NUMBA:
    compact_masked = _compact_masked_nb
    hist_accumulate = _hist_accumulate_nb
    group_dot_u32 = _group_dot_u32_nb
    sum_u32 = _sum_u32_nb
else:
    compact_masked = _compact_masked_np
    hist_accumulate = _hist_accumulate_np
    group_dot_u32 = _group_dot_u32_np
    sum_u32 = _sum_u32_np


def _bench_one(label, np_fn, nb_fn, args_factory, repeats=5):
    args = args_factory()
    nb_fn(*args)  # warm the jit cache before timing
    best = {"numpy": float("inf"), "numba": float("inf")}
    for _ in range(repeats):
        args = args_factory()
        t0 = time.perf_counter()
        np_fn(*args)
        best["numpy"] = min(best["numpy"], time.perf_counter() - t0)
        args = args_factory()
        t0 = time.perf_counter()
        nb_fn(*args)
        best["numba"] = min(best["numba"], time.perf_counter() - t0)
    ratio = best["numpy"] / best["numba"] if best["numba"] > 0 else float("inf")
    print(f"{label:<18} numpy {best['numpy'] * 1e3:8.3f} ms   "
          f"numba {best['numba'] * 1e3:8.3f} ms   speedup {ratio:5.2f}x")


def main() -> None:
    if not HAS_NUMBA:
        print("numba not importable; nothing to compare")
        return
    rng = np.random.default_rng(0)
    n = 1 << 22

    def compact_args():
        vals = rng.integers(0, 1 << 32, n, dtype=np.uint32)
        mask = rng.random(n) < 0.5
        return vals, mask, np.empty(n, np.uint32), 0

    def hist_args():
        return (np.zeros(256, np.uint32),
                rng.integers(0, 256, n, dtype=np.uint32))

    def dot_args():
        g = rng.integers(0, 1 << 32, (n // 64, 64), dtype=np.uint32)
        v = rng.integers(0, 1 << 32, 64, dtype=np.uint32)
        return g, v, np.empty(n // 64, np.uint32)

    def sum_args():
        return (rng.integers(0, 1 << 32, n, dtype=np.uint32),)

    print(f"accel paths over {n} elements (best of 5):")
    _bench_one("compact_masked", _compact_masked_np, _compact_masked_nb, compact_args)
    _bench_one("hist_accumulate", _hist_accumulate_np, _hist_accumulate_nb, hist_args)
    _bench_one("group_dot_u32", _group_dot_u32_np, _group_dot_u32_nb, dot_args)
    _bench_one("sum_u32", _sum_u32_np, _sum_u32_nb, sum_args)


if __name__ == "__main__":
    main()

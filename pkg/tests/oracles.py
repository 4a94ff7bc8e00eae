"""Independent reference implementations used across the test suite.

Everything in this module is deliberately brute force — upward scans
and explicit Python loops — and shares no code with the package, so a
test comparing the two really compares two implementations.
"""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

U32_MASK = 0xFFFFFFFF


def pad_up(nbytes: int) -> int:
    """Round up to the 8-byte DMA grid (written differently on purpose
    from the package's divmod form)."""
    return nbytes + (-nbytes) % 8


def wram_count_upward(sizes: Sequence[int], budget: int,
                      heads: Sequence[int]) -> int:
    """Largest block element count whose padded per-argument slots fit
    the budget, found by scanning upward from one.  Zero when even a
    single element does not fit."""
    best = 0
    count = 1
    while True:
        need = sum(pad_up((count + h) * s) for h, s in zip(heads, sizes))
        if need > budget:
            return best
        best = count
        count += 1


def slot_layout(sizes: Sequence[int], heads: Sequence[int],
                count: int) -> Tuple[List[int], List[int]]:
    """Back-to-back offsets and padded slot sizes for a given count."""
    padded = [pad_up((count + h) * s) for h, s in zip(heads, sizes)]
    offsets, off = [], 0
    for p in padded:
        offsets.append(off)
        off += p
    return offsets, padded


def mram_capacity_upward(sizes: Sequence[int], budget: int,
                         header: int) -> int:
    """Largest per-round element count per buffer that fits the budget
    after the fixed header, found by upward scan."""
    avail = budget - header
    best = 0
    k = 1
    while True:
        if sum(pad_up(k * s) for s in sizes) > avail:
            return best
        best = k
        k += 1


# --- chain composition ---------------------------------------------------------
#
# One fixed kernel family over u32 used by the chain-equivalence tests:
# map adds one; window/group kinds (w=2, g=2) emit the wrapping sum of
# the slot; filter kinds keep even results; reduce folds a wrapping sum.
# Window+group kinds read two zeros past the end (their overlap vector).

class OracleInvalid(Exception):
    """The chain is ill-formed at this input length (window larger than
    the data, or a group that does not divide it)."""


def chain_step(name: str, x: np.ndarray) -> np.ndarray:
    n = len(x)
    xi = [int(v) for v in x]
    if name == "map":
        return np.array([(v + 1) & U32_MASK for v in xi], np.uint32)
    if name == "reduce":
        s = 0
        for v in xi:
            s = (s + v) & U32_MASK
        return np.array([s], np.uint32)
    if name == "filter":
        return np.array([v for v in xi if v % 2 == 0], np.uint32)
    if name in ("window", "window_filter"):
        if n < 2:
            raise OracleInvalid("window of 2 over fewer elements")
        ys = [(xi[i] + xi[i + 1]) & U32_MASK for i in range(n - 1)]
        if name == "window_filter":
            ys = [y for y in ys if y % 2 == 0]
        return np.array(ys, np.uint32)
    if name in ("group", "group_filter"):
        if n % 2:
            raise OracleInvalid("group of 2 does not divide the input")
        ys = [(xi[2 * i] + xi[2 * i + 1]) & U32_MASK for i in range(n // 2)]
        if name == "group_filter":
            ys = [y for y in ys if y % 2 == 0]
        return np.array(ys, np.uint32)
    if name in ("window_group", "window_group_filter"):
        if n % 2:
            raise OracleInvalid("group of 2 does not divide the input")
        ext = xi + [0, 0]
        ys = [sum(ext[2 * i:2 * i + 4]) & U32_MASK for i in range(n // 2)]
        if name == "window_group_filter":
            ys = [y for y in ys if y % 2 == 0]
        return np.array(ys, np.uint32)
    raise AssertionError(f"unknown kind {name!r}")


def chain_compose(names: Sequence[str], x: np.ndarray) -> np.ndarray:
    cur = np.asarray(x, np.uint32)
    for nm in names:
        cur = chain_step(nm, cur)
    return cur

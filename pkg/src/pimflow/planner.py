"""Memory layout planning for the simulated device.

Every DMA transfer between the DRAM bank (MRAM) and the scratchpad
(WRAM) must move a multiple of 8 bytes, 8 to 2048 bytes at a time, at
an 8-byte-aligned offset.  The planner therefore rounds every region to
8 bytes and sizes per-tasklet WRAM blocks by a downward search from the
unpadded optimum.

Three dial-in computations drive everything else:

* wram_element_count  -- elements per block each tasklet can stage.
* mram_capacity       -- elements per core per round across buffers.
* rounds_and_leftover -- round count plus the CPU leftover slice that
  cannot be placed without breaking alignment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import MramTooSmall, WramTooSmall
from .patterns import ElemType

ALIGN = 8


def pad8(nbytes: int) -> int:
    return (nbytes + ALIGN - 1) // ALIGN * ALIGN


def _sizes(args: Sequence) -> List[int]:
    out = []
    for a in args:
        if isinstance(a, ElemType):
            out.append(a.size_bytes)
        elif isinstance(a, int):
            out.append(a)
        else:
            out.append(a.elem.size_bytes)
    if not out:
        raise ValueError("no per-element arguments to plan")
    if any(s <= 0 for s in out):
        raise ValueError(f"bad element sizes {out}")
    return out


def wram_element_count(args: Sequence, budget_bytes: int,
                       head_elems: Optional[Sequence[int]] = None
                       ) -> Tuple[int, List[int], List[int]]:
    """Elements per WRAM block for one stage.

    args: per-element stage arguments (ElemTypes, sizes, or ArgSpecs);
    scalars are excluded by the caller.  head_elems: extra elements
    staged per argument beyond the block (window lookahead), default 0.

    Starts from budget // sum(sizes) and decrements until the padded
    per-argument slots fit, then lays slots out back to back.  Returns
    (count, per-arg offsets, per-arg padded bytes).
    """
    sizes = _sizes(args)
    heads = list(head_elems) if head_elems is not None else [0] * len(sizes)
    if len(heads) != len(sizes):
        raise ValueError("head_elems length mismatch")
    count = budget_bytes // sum(sizes)
    while count > 0:
        padded = [pad8((count + h) * s) for h, s in zip(heads, sizes)]
        if sum(padded) <= budget_bytes:
            break
        count -= 1
    if count <= 0:
        raise WramTooSmall(
            f"budget {budget_bytes} B cannot stage one element of sizes {sizes}"
            + (f" with heads {heads}" if any(heads) else ""))
    offsets = []
    off = 0
    for p in padded:
        offsets.append(off)
        off += p
    return count, offsets, padded


def mram_capacity(args: Sequence, budget_bytes: int,
                  header_bytes: int = 0) -> int:
    """Elements of every distinct buffer one core can hold per round.

    args: deduplicated per-element buffers (one entry per distinct
    vector buffer).  header_bytes covers count headers and fixed
    regions (scalars, reduction slots) reserved ahead of the data.
    Same downward search as the WRAM case.
    """
    sizes = _sizes(args)
    budget = budget_bytes - header_bytes
    if budget <= 0:
        raise MramTooSmall(f"headers ({header_bytes} B) exceed MRAM budget "
                           f"({budget_bytes} B)")
    k = budget // sum(sizes)
    while k > 0 and sum(pad8(k * s) for s in sizes) > budget:
        k -= 1
    if k <= 0:
        raise MramTooSmall(
            f"budget {budget_bytes} B (headers {header_bytes} B) cannot hold "
            f"one element of sizes {sizes}")
    return k


def rounds_and_leftover(total_length: int, per_round_capacity: int,
                        n_dpus: int, min_align_elems: int
                        ) -> Tuple[int, int, int]:
    """Split total_length into device rounds plus a CPU leftover.

    per_round_capacity counts elements across all cores.  The per-round
    element count is rounded down to a multiple of n_dpus *
    min_align_elems so every core receives an aligned, equal share;
    whatever the rounds cannot cover runs on the CPU.

    Returns (elements_per_round, nr_rounds, cpu_leftover) with
    elements_per_round * nr_rounds + cpu_leftover == total_length.
    """
    if total_length < 0 or per_round_capacity < 0:
        raise ValueError("negative length or capacity")
    if n_dpus < 1 or min_align_elems < 1:
        raise ValueError("n_dpus and min_align_elems must be >= 1")
    quantum = n_dpus * min_align_elems
    epr = min(per_round_capacity, total_length) // quantum * quantum
    if epr == 0:
        return 0, 0, total_length
    nr_rounds = total_length // epr
    return epr, nr_rounds, total_length - epr * nr_rounds


def min_align_elems(sizes: Iterable[int], group_sizes: Iterable[int] = ()) -> int:
    """Smallest per-core share quantum keeping every space aligned.

    8 / gcd(8, smallest element size) keeps byte offsets of every
    buffer on the 8-byte DMA grid; multiplying by the group sizes keeps
    shares whole in every grouped index space downstream.
    """
    quantum = ALIGN // math.gcd(ALIGN, min(sizes))
    for g in group_sizes:
        quantum *= max(1, g)
    return quantum


def window_overlap_plan(n_dpus: int, share_elems: int, lookahead: int,
                        total_elems: int, overlap_elems: int
                        ) -> List[Tuple[int, int]]:
    """Per-core staged input extents for one round of a window stage.

    Core d stages its share plus up to ``lookahead`` following elements,
    drawn first from the neighbouring cores' data and finally from the
    user overlap vector appended past the input end.  Returns (base,
    extent) element ranges; extents shrink only at the global tail.
    """
    out = []
    limit = total_elems + overlap_elems
    for d in range(n_dpus):
        base = d * share_elems
        ext = min(lookahead, max(0, limit - base - share_elems))
        out.append((base, share_elems + ext))
    return out


class CarryCursor:
    """Byte cursor of one core's filter output stream.

    Kept elements are appended after every input block.  The write for
    a block must stay 8-byte aligned, so when the valid byte count is
    not a multiple of 8 the last 8 bytes already written are carried to
    the start of the next block's staging buffer and rewritten together
    with the new elements.
    """

    __slots__ = ("pos_bytes",)

    def __init__(self) -> None:
        self.pos_bytes = 0

    def step(self, kept_bytes: int) -> Tuple[int, int, int]:
        """Account one block's append of kept_bytes valid bytes.

        Returns (write_offset, write_bytes, carried_bytes): the 8-byte
        aligned region rewritten for this block and how many previously
        valid bytes it re-covers.  write_bytes is 0 when there is
        nothing valid to flush at all.
        """
        base = self.pos_bytes - self.pos_bytes % ALIGN
        carried = self.pos_bytes - base
        write = pad8(carried + kept_bytes) if (carried + kept_bytes) else 0
        self.pos_bytes += kept_bytes
        return base, write, carried


def filter_output_plan(kept_counts: Iterable[int], elem_size: int
                       ) -> List[Tuple[int, int, int]]:
    """Replay the carry rule over per-block kept counts.

    Returns one (write_offset, write_bytes, carried_bytes) step per
    block.  Useful for inspecting or checking transfer schedules; the
    simulated device uses the same cursor internally.
    """
    cur = CarryCursor()
    return [cur.step(k * elem_size) for k in kept_counts]


@dataclass(frozen=True)
class WramStagePlan:
    """Per-stage WRAM block layout (one tasklet's scratch slice)."""

    stage_index: int
    elems_per_block: int
    arg_offsets: Tuple[int, ...]
    arg_padded: Tuple[int, ...]
    budget_bytes: int


@dataclass(frozen=True)
class MramPlan:
    """Per-core MRAM layout for one round.

    regions maps buffer name to (offset, bytes).  Count headers (8
    bytes per filter or reduce output) sit in a block at offset 0,
    ahead of every data region.
    """

    elems_per_dpu_per_round: int
    regions: Dict[str, Tuple[int, int]]
    count_header_offsets: Dict[str, int]
    header_bytes: int


@dataclass(frozen=True)
class LayoutPlan:
    """Complete placement of one pipeline on one device."""

    wram: Tuple[WramStagePlan, ...]
    mram: MramPlan
    elements_per_round: int
    nr_rounds: int
    cpu_leftover: int
    total_length: int
    n_dpus: int
    min_align: int

    @property
    def share_elems(self) -> int:
        """Per-core elements per round (input index space)."""
        return self.elements_per_round // self.n_dpus if self.n_dpus else 0

    def check_conservation(self) -> None:
        covered = self.elements_per_round * self.nr_rounds + self.cpu_leftover
        if covered != self.total_length:
            raise AssertionError(
                f"conservation broken: {self.elements_per_round} * "
                f"{self.nr_rounds} + {self.cpu_leftover} != {self.total_length}")
        if self.elements_per_round % max(1, self.n_dpus * self.min_align):
            raise AssertionError("per-round element count not aligned")

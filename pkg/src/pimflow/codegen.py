"""Turning a staged pipeline into a device program and a layout.

Four transformations, applied in order:

1. extraction: stringify stages and arguments into global lists and
   kernel records (no live handles, only names and numbers).
2. memory arrangement: per-tasklet WRAM block sizes and per-core MRAM
   regions, including halo ("need") elements that window stages read
   past a core's share, then the round split and the CPU leftover.
3. leftover threading: the slice no aligned round can cover is handed
   to a host-side task that runs while the device computes.
4. post-processing directives: which fetched buffers require host
   compaction (filter outputs) and which require partial combination
   (reduce outputs).

The resulting ExecPlan drives the simulator; the DeviceProgram inside
it is a plain serializable descriptor that round-trips through
emit_program_text / parse_program_text.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (LengthMismatch, MissingOverlapVector, PlanInfeasible,
                     WramTooSmall)
from .patterns import (ArgRole, ArgSpec, Buffer, DataDependent, ElemType,
                       FILTER_KINDS, PatternKind, VECTOR_ROLES, kind_geometry,
                       output_length)
from .planner import (ALIGN, LayoutPlan, MramPlan, WramStagePlan,
                      min_align_elems, mram_capacity, pad8, rounds_and_leftover,
                      wram_element_count)
from .simdev import DeviceConfig

HEADER_SLOT_BYTES = 8  # one u64 count per filter/reduce output per core


# --- plan structures ---------------------------------------------------------

@dataclass(eq=False)
class BufPlan:
    """Per-buffer placement and index-space facts for one segment."""

    buffer: Buffer
    name: str
    elem: ElemType
    space_div: int = 1            # input elements per element of this space
    logical_len: Optional[int] = None   # None while data dependent
    candidate_len: int = 0        # upper bound (== logical when known)
    need: int = 0                 # halo elements staged past the share
    is_external: bool = False     # uploaded from host data each round
    is_scalar: bool = False
    scalar_len: int = 0
    producer: Optional[int] = None
    filter_out: bool = False
    reduce_out: bool = False
    reduce_width: int = 1
    overlap: Optional[np.ndarray] = None  # user tail past the logical end
    region_off: int = 0
    region_bytes: int = 0
    header_off: Optional[int] = None

    def share_elems(self, share: int) -> int:
        return share // self.space_div


@dataclass(eq=False)
class StagePlan:
    """Static per-stage geometry used by the round engine."""

    spec: object                  # StageSpec (duck-typed)
    index: int
    slot: int
    advance: int
    lookahead: int
    in_div: int
    out_div: int
    inv_total: int                # global invocations (candidate space)
    consumes_filtered: bool
    wram: WramStagePlan
    inv_per_block: int
    inv_quantum: int
    wram_offsets: List[Optional[int]]
    scalar_slots: List[Tuple[int, BufPlan, int]]
    scalar_off: Dict[int, int]
    acc_slots: List[Tuple[int, ArgSpec, int]]
    arg_buf: List[Optional[BufPlan]]
    vec_inputs: List[BufPlan]
    out_need: int = 0             # halo invocations this stage recomputes
    # filled once the round split is known
    epr: int = 0
    share: int = 0

    def owned_invocations(self, d: int, round_idx: int) -> int:
        step = self.in_div * self.advance
        base = (round_idx * self.epr + d * self.share) // step
        share_inv = self.share // step
        return max(0, min(share_inv, self.inv_total - base))


@dataclass(frozen=True)
class LeftoverTask:
    """Host-side tail slice: input elements [start, start+count)."""

    start: int
    count: int


@dataclass(frozen=True)
class KernelRecord:
    kernel_id: str
    signature: str
    stage_index: int


@dataclass(frozen=True)
class ProgArg:
    index: int
    role: str
    type_name: str
    size: int
    mram_off: int
    wram_off: int
    count: int


@dataclass(frozen=True)
class ProgStage:
    index: int
    kind: str
    kernel_id: str
    w: Optional[int]
    g: Optional[int]
    args: Tuple[ProgArg, ...]


@dataclass(frozen=True)
class DeviceProgram:
    """Serializable device program descriptor (names and numbers only)."""

    version: str
    tasklets: int
    rounds: int
    per_round: int
    leftover: int
    stages: Tuple[ProgStage, ...]
    post: Tuple[Tuple[str, str], ...]


@dataclass(frozen=True)
class GlobalLists:
    """Stringified stage and buffer lists (transformation 1 output)."""

    stage_kinds: Tuple[str, ...]
    buffer_names: Tuple[str, ...]
    kernel_ids: Tuple[str, ...]


@dataclass(eq=False)
class ExecPlan:
    """Everything the executor needs for one segment."""

    length: int
    stages: List[StagePlan]
    bufs: Dict[Buffer, BufPlan]
    buf_order: List[BufPlan]
    externals: List[BufPlan]
    scalars: List[BufPlan]
    layout: LayoutPlan
    program: DeviceProgram
    lists: GlobalLists
    records: List[KernelRecord]
    fetched_names: Tuple[str, ...]


# --- transformation 1: extraction -------------------------------------------

def _unique_names(stages) -> Dict[Buffer, str]:
    names: Dict[Buffer, str] = {}
    used: Dict[str, int] = {}
    for st in stages:
        for a in st.args:
            if a.buffer is None or a.buffer in names:
                continue
            base = a.buffer.name
            n = used.get(base, 0)
            used[base] = n + 1
            names[a.buffer] = base if n == 0 else f"{base}_{n + 1}"
    return names


def t1_extract(stages) -> Tuple[GlobalLists, List[KernelRecord]]:
    """Stringify the staged calls: global stage/buffer/kernel lists plus
    one signature record per kernel."""
    names = _unique_names(stages)
    records = []
    for st in stages:
        sig = ", ".join(
            f"{a.role.value} {a.elem.name}" if a.elem is not None
            else a.role.value
            for a in st.args)
        records.append(KernelRecord(st.kernel.kernel_id, sig, st.index))
    lists = GlobalLists(
        stage_kinds=tuple(st.kind.value for st in stages),
        buffer_names=tuple(dict.fromkeys(names.values())),
        kernel_ids=tuple(st.kernel.kernel_id for st in stages),
    )
    return lists, records


# --- transformation 2: memory arrangement ------------------------------------

def _space_walk(stages, length: int, names: Dict[Buffer, str],
                known_lengths: Optional[Dict[Buffer, int]] = None
                ) -> Dict[Buffer, BufPlan]:
    """Assign index spaces, logical lengths and roles to every buffer.

    known_lengths supplies lengths for external buffers whose data the
    runtime holds outside the Buffer object (chain boundaries)."""
    bufs: Dict[Buffer, BufPlan] = {}
    known_lengths = known_lengths or {}

    def plan_for(a: ArgSpec) -> BufPlan:
        bp = bufs.get(a.buffer)
        if bp is None:
            bp = BufPlan(buffer=a.buffer, name=names[a.buffer], elem=a.elem)
            bufs[a.buffer] = bp
        return bp

    for st in stages:
        geometry = kind_geometry(st.kind, st.w, st.g)
        slot, adv, lookahead = geometry
        in_lens = set()
        in_div = 1
        filtered_in = False
        for a in st.args:
            if a.role not in (ArgRole.INPUT, ArgRole.INOUT):
                continue
            bp = plan_for(a)
            if bp.producer is None and not bp.is_external:
                bp.is_external = True
            if bp.logical_len is not None:
                in_lens.add(bp.logical_len)
            elif bp.producer is not None:
                filtered_in = True
                in_lens.add(("dyn", bp.candidate_len))
            elif bp.buffer.data is not None:
                bp.logical_len = len(bp.buffer.data)
                bp.candidate_len = bp.logical_len
                in_lens.add(bp.logical_len)
            elif bp.buffer in known_lengths:
                bp.logical_len = known_lengths[bp.buffer]
                bp.candidate_len = bp.logical_len
                in_lens.add(bp.logical_len)
            in_div = max(in_div, bp.space_div)
        for a in st.args:
            if a.role is ArgRole.SCALAR:
                bp = plan_for(a)
                bp.is_scalar = True
                if a.buffer.data is None:
                    raise LengthMismatch(
                        f"scalar buffer {bp.name!r} needs host data")
                bp.scalar_len = len(a.buffer.data)

        # the first stage pins the segment input space
        if not in_lens and st.index == stages[0].index:
            in_len = length
        else:
            fixed = {v for v in in_lens if not isinstance(v, tuple)}
            dyn = [v for v in in_lens if isinstance(v, tuple)]
            if len(fixed) > 1:
                raise LengthMismatch(f"stage {st.index}: input lengths differ "
                                     f"{sorted(fixed)}")
            if fixed and dyn:
                raise LengthMismatch(
                    f"stage {st.index}: cannot mix fixed-length inputs with "
                    f"a data-dependent one")
            if fixed:
                in_len = fixed.pop()
            elif dyn:
                in_len = dyn[0][1]
            else:
                raise LengthMismatch(
                    f"stage {st.index}: no input length can be inferred")
        for a in st.args:
            if a.role in (ArgRole.INPUT, ArgRole.INOUT):
                bp = plan_for(a)
                if bp.logical_len is None and bp.producer is None:
                    bp.logical_len = in_len
                    bp.candidate_len = in_len

        out_len = output_length(st.kind, in_len, st.w, st.g,
                                overlap_provided=st.overlap is not None)
        ovl_data = None
        if st.overlap is not None:
            if st.overlap.data is None:
                raise MissingOverlapVector("overlap buffer needs host data")
            ovl_data = np.ascontiguousarray(st.overlap.data)
            if len(ovl_data) < lookahead:
                raise MissingOverlapVector(
                    f"overlap vector of {len(ovl_data)} elements, stage "
                    f"needs {lookahead}")
        for a in st.args:
            bp = plan_for(a) if a.buffer is not None else None
            if a.role in (ArgRole.INPUT, ArgRole.INOUT) and ovl_data is not None:
                if np.dtype(ovl_data.dtype) != a.elem.dtype:
                    raise MissingOverlapVector(
                        f"overlap dtype {ovl_data.dtype} != input "
                        f"{a.elem.dtype}")
                tail = ovl_data[:lookahead]
                if bp.overlap is not None and (len(bp.overlap) != len(tail)
                                               or (bp.overlap != tail).any()):
                    raise LengthMismatch(
                        f"buffer {bp.name!r}: stages declare conflicting "
                        f"overlap vectors")
                bp.overlap = tail
            if a.role is ArgRole.OUTPUT or a.role is ArgRole.INOUT:
                bp.producer = st.index
                bp.space_div = in_div * adv
                if isinstance(out_len, DataDependent):
                    bp.filter_out = True
                    bp.logical_len = None
                    bp.candidate_len = out_len.upper_bound
                else:
                    bp.logical_len = out_len
                    bp.candidate_len = out_len
            elif a.role is ArgRole.REDUCE_OUT:
                bp.producer = st.index
                bp.reduce_out = True
                bp.reduce_width = a.reduce_width
                bp.logical_len = a.reduce_width
                bp.candidate_len = a.reduce_width
    return bufs


def _halo_needs(stages, bufs: Dict[Buffer, BufPlan]) -> None:
    """Backward pass: halo elements every buffer must stage past the
    per-core share so downstream window/group stages stay local."""
    for st in reversed(stages):
        slot, adv, lookahead = kind_geometry(st.kind, st.w, st.g)
        out_need = 0
        for a in st.args:
            if a.role is ArgRole.OUTPUT and not bufs[a.buffer].filter_out:
                out_need = max(out_need, bufs[a.buffer].need)
            elif a.role is ArgRole.INOUT:
                out_need = max(out_need, bufs[a.buffer].need)
        if st.kind in FILTER_KINDS or st.kind is PatternKind.REDUCE:
            out_need = 0
        in_need = out_need * adv + lookahead
        for a in st.args:
            if a.role in (ArgRole.INPUT, ArgRole.INOUT):
                bp = bufs[a.buffer]
                bp.need = max(bp.need, in_need)


def _stage_wram(st, bufs, cfg: DeviceConfig) -> Tuple[WramStagePlan, dict]:
    """Per-tasklet WRAM layout for one stage: fixed slots (scalars,
    accumulators) first, then the block slots sized by downward search."""
    budget = cfg.wram_budget_per_tasklet
    slot, adv, lookahead = kind_geometry(st.kind, st.w, st.g)

    fixed_off: Dict[int, int] = {}
    cursor = 0
    scalar_slots, acc_slots = [], []
    for a_i, a in enumerate(st.args):
        if a.role is ArgRole.SCALAR:
            bp = bufs[a.buffer]
            nbytes = pad8(bp.scalar_len * bp.elem.size_bytes)
            scalar_slots.append((a_i, bp, cursor))
            fixed_off[a_i] = cursor
            cursor += nbytes
        elif a.role is ArgRole.REDUCE_OUT:
            nbytes = pad8(a.reduce_width * a.elem.size_bytes)
            acc_slots.append((a_i, a, cursor))
            fixed_off[a_i] = cursor
            cursor += nbytes
    if cursor > budget:
        raise WramTooSmall(
            f"stage {st.index}: fixed slots ({cursor} B) exceed the "
            f"per-tasklet budget ({budget} B)")

    vec_idx = [a_i for a_i, a in enumerate(st.args) if a.role in VECTOR_ROLES]
    sizes = [st.args[a_i].elem.size_bytes for a_i in vec_idx]
    heads = [lookahead if st.args[a_i].role in (ArgRole.INPUT, ArgRole.INOUT)
             else 0 for a_i in vec_idx]
    count, offsets, padded = wram_element_count(sizes, budget - cursor, heads)

    quantum = ALIGN // min(sizes)  # sizes are powers of two <= 8
    step = quantum * adv
    count_final = count // step * step
    if count_final <= 0:
        raise WramTooSmall(
            f"stage {st.index}: budget fits {count} elements, fewer than "
            f"one aligned advance of {step}")

    wram_offsets: List[Optional[int]] = [None] * len(st.args)
    for a_i, off in zip(vec_idx, offsets):
        wram_offsets[a_i] = cursor + off
    for a_i, off in fixed_off.items():
        wram_offsets[a_i] = off

    plan = WramStagePlan(stage_index=st.index, elems_per_block=count_final,
                         arg_offsets=tuple(cursor + o for o in offsets),
                         arg_padded=tuple(padded), budget_bytes=budget)
    aux = {"scalar_slots": scalar_slots, "acc_slots": acc_slots,
           "wram_offsets": wram_offsets,
           "inv_per_block": count_final // adv,
           "inv_quantum": quantum}
    return plan, aux


def plan_segment(stages, length: int, cfg: DeviceConfig,
                 fetched: Sequence[Buffer] = (),
                 cpu_ratio: float = 0.0,
                 known_lengths: Optional[Dict[Buffer, int]] = None
                 ) -> ExecPlan:
    """Transformations 1-4 for one chain-legal stage list."""
    stages = list(stages)
    lists, records = t1_extract(stages)
    names = _unique_names(stages)
    bufs = _space_walk(stages, length, names, known_lengths)
    _halo_needs(stages, bufs)

    buf_order = [bufs[b] for b in
                 dict.fromkeys(a.buffer for st in stages for a in st.args
                               if a.buffer is not None)]
    vec_bufs = [bp for bp in buf_order if not bp.is_scalar and not bp.reduce_out]
    scalars = [bp for bp in buf_order if bp.is_scalar]
    accs = [bp for bp in buf_order if bp.reduce_out]
    externals = [bp for bp in vec_bufs if bp.is_external]

    # fixed MRAM ahead of the data regions: count headers, scalar data,
    # per-tasklet partial slots, plus halo slack for the capacity search
    headered = [bp for bp in buf_order if bp.filter_out or bp.reduce_out]
    header_bytes = HEADER_SLOT_BYTES * len(headered)
    fixed_bytes = sum(pad8(bp.scalar_len * bp.elem.size_bytes)
                      for bp in scalars)
    fixed_bytes += sum(cfg.tasklets * pad8(bp.reduce_width * bp.elem.size_bytes)
                       for bp in accs)
    halo_slack = sum(pad8(bp.need * bp.elem.size_bytes) + ALIGN
                     for bp in vec_bufs)

    group_sizes = [st.g for st in stages if st.g]
    sizes = [bp.elem.size_bytes for bp in vec_bufs] or [8]
    align = min_align_elems(sizes, group_sizes)

    if vec_bufs:
        k_cap = mram_capacity(sizes, cfg.mram_bytes,
                              header_bytes + fixed_bytes + halo_slack)
    else:  # no stages at all: nothing to place, nothing to round over
        k_cap = length
    total = length
    if cpu_ratio > 0.0:
        total = max(0, length - math.ceil(length * cpu_ratio))
    epr, rounds, leftover = rounds_and_leftover(total, k_cap * cfg.n_dpus,
                                                cfg.n_dpus, align)
    leftover = length - epr * rounds
    share = epr // cfg.n_dpus if cfg.n_dpus else 0

    # exact region layout now that the share is known
    cursor = 0
    header_offsets: Dict[str, int] = {}
    for bp in headered:
        bp.header_off = cursor
        header_offsets[bp.name] = cursor
        cursor += HEADER_SLOT_BYTES
    for bp in scalars:
        bp.region_off = cursor
        bp.region_bytes = pad8(bp.scalar_len * bp.elem.size_bytes)
        cursor += bp.region_bytes
    for bp in accs:
        bp.region_off = cursor
        bp.region_bytes = cfg.tasklets * pad8(bp.reduce_width *
                                              bp.elem.size_bytes)
        cursor += bp.region_bytes
    regions: Dict[str, Tuple[int, int]] = {}
    for bp in vec_bufs:
        n_elems = bp.share_elems(share) + bp.need
        bp.region_off = cursor
        bp.region_bytes = pad8(n_elems * bp.elem.size_bytes)
        regions[bp.name] = (bp.region_off, bp.region_bytes)
        cursor += bp.region_bytes
    if cursor > cfg.mram_bytes:
        raise PlanInfeasible(f"regions need {cursor} B of MRAM, bank has "
                             f"{cfg.mram_bytes}")

    mram = MramPlan(elems_per_dpu_per_round=share, regions=regions,
                    count_header_offsets=header_offsets,
                    header_bytes=header_bytes)

    stage_plans: List[StagePlan] = []
    for st in stages:
        slot, adv, lookahead = kind_geometry(st.kind, st.w, st.g)
        wram_plan, aux = _stage_wram(st, bufs, cfg)
        vec_inputs = [bufs[a.buffer] for a in st.args
                      if a.role in (ArgRole.INPUT, ArgRole.INOUT)]
        in_div = max((bp.space_div for bp in vec_inputs), default=1)
        consumes_filtered = any(bp.filter_out for bp in vec_inputs)
        cand_in = (vec_inputs[0].candidate_len if vec_inputs else 0)
        if lookahead > 0 and st.overlap is None \
                and any(bp.overlap is not None for bp in vec_inputs):
            raise LengthMismatch(
                f"stage {st.index}: its input carries another stage's "
                f"overlap vector; all window consumers of a buffer must "
                f"declare the same overlap")
        if lookahead == 0 or st.overlap is not None:
            inv_total = cand_in // adv
        else:
            inv_total = max(0, cand_in - lookahead) // adv
        out_need = 0
        if st.kind not in FILTER_KINDS and st.kind is not PatternKind.REDUCE:
            for a in st.args:
                if a.role in (ArgRole.OUTPUT, ArgRole.INOUT):
                    out_need = max(out_need, bufs[a.buffer].need)
        sp = StagePlan(
            spec=st, index=st.index, slot=slot, advance=adv,
            lookahead=lookahead, in_div=in_div, out_div=in_div * adv,
            inv_total=inv_total, consumes_filtered=consumes_filtered,
            wram=wram_plan, inv_per_block=aux["inv_per_block"],
            inv_quantum=aux["inv_quantum"],
            wram_offsets=aux["wram_offsets"],
            scalar_slots=aux["scalar_slots"],
            scalar_off={a_i: off for a_i, _, off in aux["scalar_slots"]},
            acc_slots=aux["acc_slots"],
            arg_buf=[bufs.get(a.buffer) if a.buffer is not None else None
                     for a in st.args],
            vec_inputs=vec_inputs, out_need=out_need,
            epr=epr, share=share,
        )
        stage_plans.append(sp)

    layout = LayoutPlan(
        wram=tuple(sp.wram for sp in stage_plans), mram=mram,
        elements_per_round=epr, nr_rounds=rounds, cpu_leftover=leftover,
        total_length=length, n_dpus=cfg.n_dpus, min_align=align)
    layout.check_conservation()

    fetched_set = {bufs[b].name for b in fetched if b in bufs}
    post = t4_postprocessing(stages, bufs, fetched_set)
    program = _build_program(cfg, layout, stage_plans, post)
    return ExecPlan(length=length, stages=stage_plans, bufs=bufs,
                    buf_order=buf_order, externals=externals, scalars=scalars,
                    layout=layout, program=program, lists=lists,
                    records=records, fetched_names=tuple(sorted(fetched_set)))


def t2_memory_params(stages, length: int, cfg: DeviceConfig) -> LayoutPlan:
    """Memory-arrangement transformation alone (the layout of
    plan_segment, without building the program)."""
    return plan_segment(stages, length, cfg).layout


def t3_cpu_leftover(layout: LayoutPlan) -> LeftoverTask:
    """The host-thread slice: everything past the last aligned round."""
    start = layout.elements_per_round * layout.nr_rounds
    return LeftoverTask(start=start, count=layout.total_length - start)


def t4_postprocessing(stages, bufs: Dict[Buffer, BufPlan],
                      fetched_names) -> Tuple[Tuple[str, str], ...]:
    """Compaction directives for fetched filter outputs, combine
    directives for every reduce output."""
    post: List[Tuple[str, str]] = []
    for st in stages:
        for a in st.args:
            if a.buffer is None:
                continue
            bp = bufs[a.buffer]
            if bp.producer != st.index:
                continue
            if a.role is ArgRole.OUTPUT and bp.filter_out \
                    and bp.name in fetched_names:
                post.append(("COMPACT", bp.name))
            elif a.role is ArgRole.REDUCE_OUT:
                post.append(("COMBINE", bp.name))
    return tuple(post)


def _build_program(cfg: DeviceConfig, layout: LayoutPlan,
                   stage_plans: List[StagePlan],
                   post: Tuple[Tuple[str, str], ...]) -> DeviceProgram:
    pstages = []
    for sp in stage_plans:
        st = sp.spec
        pargs = []
        for a_i, a in enumerate(st.args):
            bp = sp.arg_buf[a_i]
            if a.role is ArgRole.COMBINE:
                pargs.append(ProgArg(a_i, a.role.value, "-", 0, 0, 0, 0))
                continue
            if a.role is ArgRole.SCALAR:
                count = bp.scalar_len
            elif a.role is ArgRole.REDUCE_OUT:
                count = a.reduce_width
            else:
                count = sp.wram.elems_per_block
            pargs.append(ProgArg(
                index=a_i, role=a.role.value, type_name=a.elem.name,
                size=a.elem.size_bytes, mram_off=bp.region_off,
                wram_off=sp.wram_offsets[a_i] or 0, count=count))
        pstages.append(ProgStage(index=st.index, kind=st.kind.value,
                                 kernel_id=st.kernel.kernel_id,
                                 w=st.w, g=st.g, args=tuple(pargs)))
    return DeviceProgram(version="v1", tasklets=cfg.tasklets,
                         rounds=layout.nr_rounds,
                         per_round=layout.elements_per_round,
                         leftover=layout.cpu_leftover,
                         stages=tuple(pstages), post=post)


# --- program text -------------------------------------------------------------

def emit_program_text(program: DeviceProgram) -> str:
    """Render the program descriptor as deterministic text."""
    lines = [f"DPU-PROGRAM {program.version}",
             f"TASKLETS {program.tasklets}",
             f"ROUNDS {program.rounds} PER-ROUND {program.per_round} "
             f"LEFTOVER {program.leftover}"]
    for st in program.stages:
        head = f"STAGE {st.index} KIND {st.kind} KERNEL {st.kernel_id}"
        if st.w is not None:
            head += f" W {st.w}"
        if st.g is not None:
            head += f" G {st.g}"
        lines.append(head)
        for a in st.args:
            lines.append(
                f"ARG {a.index} role={a.role} type={a.type_name} "
                f"size={a.size} mram={a.mram_off} wram={a.wram_off} "
                f"count={a.count}")
    for verb, name in program.post:
        lines.append(f"POST {verb} {name}")
    return "\n".join(lines) + "\n"


def parse_program_text(text: str) -> DeviceProgram:
    """Inverse of emit_program_text (raises ValueError on bad input)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("DPU-PROGRAM "):
        raise ValueError("missing DPU-PROGRAM header")
    version = lines[0].split()[1]
    tasklets = rounds = per_round = leftover = 0
    stages: List[ProgStage] = []
    post: List[Tuple[str, str]] = []
    cur: Optional[dict] = None

    def flush():
        if cur is not None:
            stages.append(ProgStage(index=cur["index"], kind=cur["kind"],
                                    kernel_id=cur["kernel"], w=cur["w"],
                                    g=cur["g"], args=tuple(cur["args"])))

    for ln in lines[1:]:
        tok = ln.split()
        if tok[0] == "TASKLETS":
            tasklets = int(tok[1])
        elif tok[0] == "ROUNDS":
            rounds, per_round, leftover = int(tok[1]), int(tok[3]), int(tok[5])
        elif tok[0] == "STAGE":
            flush()
            cur = {"index": int(tok[1]), "kind": tok[3], "kernel": tok[5],
                   "w": None, "g": None, "args": []}
            rest = tok[6:]
            while rest:
                key, val = rest[0], int(rest[1])
                if key == "W":
                    cur["w"] = val
                elif key == "G":
                    cur["g"] = val
                else:
                    raise ValueError(f"bad STAGE suffix {key!r}")
                rest = rest[2:]
        elif tok[0] == "ARG":
            kv = dict(part.split("=", 1) for part in tok[2:])
            cur["args"].append(ProgArg(
                index=int(tok[1]), role=kv["role"], type_name=kv["type"],
                size=int(kv["size"]), mram_off=int(kv["mram"]),
                wram_off=int(kv["wram"]), count=int(kv["count"])))
        elif tok[0] == "POST":
            post.append((tok[1], tok[2]))
        else:
            raise ValueError(f"unknown line {ln!r}")
    flush()
    return DeviceProgram(version=version, tasklets=tasklets, rounds=rounds,
                         per_round=per_round, leftover=leftover,
                         stages=tuple(stages), post=tuple(post))

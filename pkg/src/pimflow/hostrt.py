"""Host runtime: rounds, transfers, the CPU leftover, and boundaries.

One pipeline executes as one or more device segments.  A segment ends
where a stage consumes a reduce output (the per-core partials must be
gathered and combined into one value first) or where a stage's input
space cannot be derived from the segment's primary length.  Each
segment plans independently, streams its rounds, and gathers what the
user fetched plus whatever later segments consume.

The host composes the whole chain once with reference semantics.  That
composition supplies the leftover tail no aligned round covers and the
stitching values past the device-computed prefix; the device prefix
itself is never taken from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .codegen import (BufPlan, LeftoverTask, _space_walk, _unique_names,
                      plan_segment)
from .errors import LengthMismatch
from .patterns import (ArgRole, Buffer, FILTER_KINDS, PatternKind,
                       apply_pattern_host, default_combine, kind_geometry,
                       output_length)
from .planner import pad8
from .simdev import PIPELINE_FILL_TASKLETS, Device, download, run_round, upload

# host-side compaction/combination is local memory traffic, far faster
# than the device bus; modeled at a flat copy bandwidth
HOST_POST_BYTES_PER_NS = 10.0


@dataclass(frozen=True)
class GatherBlock:
    """One core's contribution to a ragged (filtered) output."""

    round_idx: int
    dpu: int
    count: int
    data: np.ndarray


def compact_filter_output(blocks: Sequence[GatherBlock], dtype) -> np.ndarray:
    """Concatenate kept runs in (round, core) order: global input order."""
    ordered = sorted(blocks, key=lambda b: (b.round_idx, b.dpu))
    parts = [b.data[:b.count] for b in ordered if b.count]
    if not parts:
        return np.empty(0, dtype=dtype)
    return np.concatenate(parts).astype(dtype, copy=False)


def combine_reduce_partials(partials: Sequence[np.ndarray], combine):
    """Pairwise combination tree in fixed index order; None when empty."""
    level = [np.asarray(p) for p in partials]
    if not level:
        return None
    while len(level) > 1:
        nxt = [np.asarray(combine(level[i], level[i + 1]))
               for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def apply_chain_host(stages, env: Dict[Buffer, np.ndarray]) -> None:
    """Reference-compose a stage list, adding every produced buffer to
    env.  Inputs resolve from env first, then from the buffer's own
    host data."""
    for st in stages:
        values: List = []
        for a in st.args:
            if a.role is ArgRole.COMBINE:
                values.append(None)
            elif a.role is ArgRole.OUTPUT:
                values.append(None)
            elif a.role is ArgRole.REDUCE_OUT:
                init = env.get(a.buffer)
                if init is None:
                    init = a.buffer.data if a.buffer.data is not None \
                        else np.zeros(a.reduce_width, dtype=a.elem.dtype)
                values.append(init)
            else:
                v = env.get(a.buffer)
                if v is None:
                    v = a.buffer.data
                if v is None:
                    raise LengthMismatch(
                        f"external buffer {a.buffer.name!r} needs host data")
                values.append(v)
        ovl = st.overlap.data if st.overlap is not None else None
        outs = apply_pattern_host(st.kind, st.kernel, st.args, values,
                                  st.w, st.g, ovl)
        for a, o in zip(st.args, outs):
            if o is not None:
                env[a.buffer] = o


def run_cpu_leftover(stages, inputs: Dict[Buffer, np.ndarray],
                     task: LeftoverTask, device: Device
                     ) -> Tuple[Dict[Buffer, np.ndarray], float]:
    """The host-thread slice: compose the chain and cut each produced
    buffer at the device-covered boundary.  Modeled as one extra core
    running the same per-invocation cost."""
    env = {b: np.asarray(v) for b, v in inputs.items()}
    apply_chain_host(stages, env)
    total = task.start + task.count
    names = _unique_names(stages)
    bufs = _space_walk(stages, total, names,
                       {b: len(v) for b, v in inputs.items()})
    tails: Dict[Buffer, np.ndarray] = {}
    for st in stages:
        for a in st.args:
            if a.buffer in env and a.buffer in bufs:
                bp = bufs[a.buffer]
                if bp.producer is not None and not bp.reduce_out:
                    tails[a.buffer] = env[a.buffer][task.start // bp.space_div:]
    return tails, _leftover_ns(stages, task.count, device)


def _leftover_ns(stages, leftover: int, device: Device) -> float:
    """Host leftover modeled like one extra core at device cost."""
    cfg, cost = device.config, device.cost
    lanes = min(cfg.tasklets, PIPELINE_FILL_TASKLETS)
    ns = 0.0
    for st in stages:
        slot, adv, _ = kind_geometry(st.kind, st.w, st.g)
        cycles = st.kernel.cost_hint
        if cycles is None:
            cycles = cost.cycles_per_invocation_default
        inv = math.ceil(leftover / adv) if adv else 0
        ns += inv * cycles / cfg.freq_hz * 1e9 / lanes
    return ns


# --- segmentation -------------------------------------------------------------

def _static_in_len(st, known: Dict[Buffer, int]) -> Optional[int]:
    vals = set()
    for a in st.args:
        if a.role in (ArgRole.INPUT, ArgRole.INOUT):
            b = a.buffer
            if b in known:
                vals.add(known[b])
            elif b.data is not None:
                vals.add(len(b.data))
    if len(vals) > 1:
        raise LengthMismatch(f"stage {st.index}: vector inputs disagree on "
                             f"length: {sorted(vals)}")
    return vals.pop() if vals else None


def _segment_stages(stages, length: int, known_lengths: Dict[Buffer, int]
                    ) -> List[Tuple[list, int]]:
    """Split a chain-legal stage list into device segments.

    A stage starts a new segment when it consumes a reduce output of
    the current one (consolidation first) or when the planner cannot
    reconcile its input space with the segment's primary length."""
    if not stages:
        return [([], length)]
    known = dict(known_lengths)
    segments: List[Tuple[list, int]] = []
    cur: List = []
    cur_len = length
    produced_cur: Dict[Buffer, PatternKind] = {}

    for st in stages:
        cut = False
        if cur:
            for a in st.args:
                if a.role in (ArgRole.INPUT, ArgRole.INOUT) and \
                        produced_cur.get(a.buffer) is PatternKind.REDUCE:
                    cut = True
                    break
            if not cut:
                try:
                    _space_walk(cur + [st], cur_len,
                                _unique_names(cur + [st]), known)
                except LengthMismatch:
                    cut = True
        if cut:
            segments.append((cur, cur_len))
            cur, produced_cur = [], {}
        if not cur:
            sl = _static_in_len(st, known)
            cur_len = sl if sl is not None else (
                length if not segments else 0)
        cur.append(st)

        sl = _static_in_len(st, known)
        base_len = sl if sl is not None else (
            cur_len if len(cur) == 1 else None)
        dyn_in = any(a.role in (ArgRole.INPUT, ArgRole.INOUT) and
                     a.buffer not in known and a.buffer.data is None
                     for a in st.args)
        if dyn_in and len(cur) > 1:
            base_len = None
        for a in st.args:
            if a.role is ArgRole.REDUCE_OUT:
                produced_cur[a.buffer] = st.kind
                known[a.buffer] = a.reduce_width
            elif a.role in (ArgRole.OUTPUT, ArgRole.INOUT):
                produced_cur[a.buffer] = st.kind
                if st.kind not in FILTER_KINDS and base_len is not None:
                    known[a.buffer] = output_length(
                        st.kind, base_len, st.w, st.g,
                        overlap_provided=st.overlap is not None)
    segments.append((cur, cur_len))
    return segments


# --- one segment --------------------------------------------------------------

@dataclass
class SegmentResult:
    up_ns: float = 0.0
    kernel_ns: float = 0.0
    down_ns: float = 0.0
    post_ns: float = 0.0
    rounds: int = 0
    leftover: int = 0
    values: Dict[Buffer, np.ndarray] = field(default_factory=dict)
    names: Dict[Buffer, str] = field(default_factory=dict)


def _source_array(bp: BufPlan, inputs: Dict[Buffer, np.ndarray]) -> np.ndarray:
    v = inputs.get(bp.buffer)
    if v is None:
        v = bp.buffer.data
    if v is None:
        raise LengthMismatch(f"external buffer {bp.name!r} needs host data")
    arr = np.ascontiguousarray(v, dtype=bp.elem.dtype)
    if bp.overlap is not None:
        arr = np.concatenate([arr, np.asarray(bp.overlap,
                                              dtype=bp.elem.dtype)])
    return arr


def _run_segment(device: Device, states, stages, seg_len: int,
                 gather_bufs: Sequence[Buffer], inputs, env,
                 cpu_ratio: float, upload_mode: str, gather_mode: str
                 ) -> SegmentResult:
    cfg, cost = device.config, device.cost
    known = {b: len(np.asarray(v)) for b, v in inputs.items()}
    plan = plan_segment(stages, seg_len, cfg, fetched=gather_bufs,
                        cpu_ratio=cpu_ratio, known_lengths=known)
    lay = plan.layout
    n = cfg.n_dpus
    share = lay.mram.elems_per_dpu_per_round
    epr, rounds = lay.elements_per_round, lay.nr_rounds
    res = SegmentResult(rounds=rounds, leftover=lay.cpu_leftover)

    gather_set = set(gather_bufs)
    vec_bufs = [bp for bp in plan.buf_order
                if not bp.is_scalar and not bp.reduce_out]
    filter_bufs = [bp for bp in vec_bufs if bp.filter_out]
    reduce_bufs = [bp for bp in plan.buf_order if bp.reduce_out]
    plain_gather = [bp for bp in vec_bufs
                    if bp.buffer in gather_set and not bp.filter_out]
    ovl_fill_bufs = [bp for bp in vec_bufs
                     if not bp.is_external and bp.overlap is not None]

    src = {bp: _source_array(bp, inputs) for bp in plan.externals}

    if rounds > 0:
        for bp in plan.scalars:
            data = np.ascontiguousarray(
                inputs.get(bp.buffer, bp.buffer.data),
                dtype=bp.elem.dtype).view(np.uint8)
            res.up_ns += upload(device, states,
                                [(bp.region_off, data)], "broadcast")

    dev_count: Dict[BufPlan, int] = {bp: 0 for bp in plain_gather}
    kept_totals: Dict[BufPlan, int] = {bp: 0 for bp in filter_bufs}
    blocks: Dict[BufPlan, List[GatherBlock]] = {bp: [] for bp in filter_bufs
                                                if bp.buffer in gather_set}
    partials: Dict[BufPlan, List[np.ndarray]] = {bp: [] for bp in reduce_bufs}
    plain_out = {bp: np.zeros(bp.logical_len, dtype=bp.elem.dtype)
                 for bp in plain_gather}

    for r in range(rounds):
        valids: List[Dict] = [dict() for _ in range(n)]
        fills: List[Dict] = [dict() for _ in range(n)]
        for bp in plan.externals:
            share_b = bp.share_elems(share)
            items = []
            for d in range(n):
                base = (r * epr + d * share) // bp.space_div
                ext = min(share_b + bp.need, len(src[bp]) - base)
                if ext <= 0:
                    items.append(None)
                    continue
                items.append((bp.region_off,
                              src[bp][base:base + ext].view(np.uint8)))
                valids[d][bp] = ext
            res.up_ns += upload(device, states, items, upload_mode)
        for bp in ovl_fill_bufs:
            s = bp.elem.size_bytes
            share_b = bp.share_elems(share)
            ln = bp.logical_len
            items: List = [None] * n
            for d in range(n):
                base = (r * epr + d * share) // bp.space_div
                lo = max(base, ln)
                hi = min(base + share_b + bp.need, ln + len(bp.overlap))
                if hi > lo and base < ln:
                    payload = np.ascontiguousarray(
                        bp.overlap[lo - ln:hi - ln]).view(np.uint8)
                    items[d] = (bp.region_off + (lo - base) * s, payload)
                    fills[d][bp] = (lo - base, hi - lo)
            if any(it is not None for it in items):
                res.up_ns += upload(device, states, items, upload_mode)

        res.kernel_ns += run_round(device, plan, states, valids, r, fills)

        for bp in plain_gather:
            s = bp.elem.size_bytes
            share_b = bp.share_elems(share)
            reqs = []
            meta = []
            for d in range(n):
                base = (r * epr + d * share) // bp.space_div
                owned = min(share_b, max(0, bp.logical_len - base))
                reqs.append((bp.region_off, owned * s) if owned > 0 else None)
                meta.append((base, owned))
            payloads, t = download(device, states, reqs, gather_mode)
            res.down_ns += t
            for d, pl in enumerate(payloads):
                if pl is None:
                    continue
                base, owned = meta[d]
                plain_out[bp][base:base + owned] = pl.view(bp.elem.dtype)
                dev_count[bp] += owned
        for bp in filter_bufs:
            reqs = [(bp.header_off, 8)] * n
            payloads, t = download(device, states, reqs, gather_mode)
            res.down_ns += t
            counts = [int(pl.view(np.uint64)[0]) for pl in payloads]
            kept_totals[bp] += sum(counts)
            if bp.buffer in gather_set:
                s = bp.elem.size_bytes
                reqs = [(bp.region_off, c * s) if c else None for c in counts]
                payloads, t = download(device, states, reqs, gather_mode)
                res.down_ns += t
                for d, pl in enumerate(payloads):
                    if pl is None:
                        continue
                    blocks[bp].append(GatherBlock(
                        r, d, counts[d], pl.view(bp.elem.dtype)))
        for bp in reduce_bufs:
            s = bp.elem.size_bytes
            slot_b = pad8(bp.reduce_width * s)
            reqs = [(bp.region_off, cfg.tasklets * slot_b)] * n
            payloads, t = download(device, states, reqs, gather_mode)
            res.down_ns += t
            for pl in payloads:
                for t_i in range(cfg.tasklets):
                    raw = pl[t_i * slot_b:t_i * slot_b + bp.reduce_width * s]
                    partials[bp].append(raw.view(bp.elem.dtype).copy())

    # stitch: device prefix + host tail
    bw = HOST_POST_BYTES_PER_NS
    for bp in plain_gather:
        filled = dev_count[bp]
        tail = env[bp.buffer][filled:]
        if len(tail):
            plain_out[bp][filled:] = tail
            res.post_ns += tail.nbytes / bw
        res.values[bp.buffer] = plain_out[bp]
        res.names[bp.buffer] = bp.name
    for bp in filter_bufs:
        if bp.buffer not in gather_set:
            continue
        dev = compact_filter_output(blocks[bp], bp.elem.dtype)
        oracle = np.asarray(env[bp.buffer], dtype=bp.elem.dtype)
        out = np.concatenate([dev, oracle[len(dev):]]) \
            if len(oracle) > len(dev) else dev
        res.post_ns += (len(dev) * bp.elem.size_bytes +
                        max(0, len(oracle) - len(dev)) *
                        bp.elem.size_bytes) / bw
        res.values[bp.buffer] = out
        res.names[bp.buffer] = bp.name

    for bp in reduce_bufs:
        sp = next(s for s in plan.stages if s.index == bp.producer)
        st = sp.spec
        tail_values: List = []
        any_tail = False
        for a in st.args:
            if a.role is ArgRole.COMBINE:
                tail_values.append(None)
            elif a.role is ArgRole.SCALAR:
                tail_values.append(inputs.get(a.buffer, a.buffer.data))
            elif a.role is ArgRole.REDUCE_OUT:
                tail_values.append(np.zeros(a.reduce_width,
                                            dtype=a.elem.dtype))
            else:
                in_bp = plan.bufs[a.buffer]
                if in_bp.filter_out:
                    start = kept_totals[in_bp]
                else:
                    start = sp.advance * sum(
                        sp.owned_invocations(d, r)
                        for r in range(rounds) for d in range(n))
                full = env.get(a.buffer)
                if full is None:
                    full = _source_array(in_bp, inputs)[:in_bp.candidate_len]
                tail = np.asarray(full, dtype=a.elem.dtype)[start:]
                if len(tail):
                    any_tail = True
                tail_values.append(tail)
        all_parts = list(partials[bp])
        if any_tail:
            outs = apply_pattern_host(st.kind, st.kernel, st.args,
                                      tail_values, st.w, st.g, None)
            part = next(o for a, o in zip(st.args, outs)
                        if a.role is ArgRole.REDUCE_OUT)
            all_parts.append(part)
        spec_a = next(a for a in st.args if a.role is ArgRole.REDUCE_OUT)
        comb = next((a.combine for a in st.args
                     if a.role is ArgRole.COMBINE), None) \
            or spec_a.combine or default_combine(st.kernel, spec_a)
        tree = combine_reduce_partials(all_parts, comb)
        init = inputs.get(bp.buffer, bp.buffer.data)
        if init is None:
            init = np.zeros(bp.reduce_width, dtype=bp.elem.dtype)
        final = np.asarray(comb(init, tree) if tree is not None else init,
                           dtype=bp.elem.dtype).reshape(-1)
        res.post_ns += (len(all_parts) + 1) * bp.reduce_width * \
            bp.elem.size_bytes / bw
        res.values[bp.buffer] = final
        res.names[bp.buffer] = bp.name

    res.kernel_ns = max(res.kernel_ns,
                        _leftover_ns(stages, lay.cpu_leftover, device))
    return res


# --- whole pipelines ----------------------------------------------------------

def execute_pipeline(p, device: Device, upload_mode: str = "parallel",
                     gather_mode: str = "parallel", cpu_ratio: float = 0.0,
                     input_overrides: Optional[Dict[Buffer, np.ndarray]] = None
                     ):
    """Run a chain-legal pipeline; returns (ExecReport, results dict)."""
    from .pipeline import ExecReport

    inputs = {b: np.asarray(v) for b, v in (input_overrides or {}).items()}
    known = {b: len(v) for b, v in inputs.items()}
    segments = _segment_stages(p.stages, p.length, known)

    env: Dict[Buffer, np.ndarray] = dict(inputs)
    apply_chain_host(p.stages, env)

    cost = device.cost
    states = device.acquire()
    up = kern = down = post = 0.0
    rounds_total = 0
    leftover: Optional[int] = None
    results: Dict[Buffer, np.ndarray] = {}
    lengths: Dict[str, int] = {}
    fetch_set = set(p.fetch_set)
    try:
        for si, (seg_stages, seg_len) in enumerate(segments):
            produced = [a.buffer for st in seg_stages for a in st.args
                        if a.role in (ArgRole.OUTPUT, ArgRole.INOUT,
                                      ArgRole.REDUCE_OUT)]
            later = [st for seg, _ in segments[si + 1:] for st in seg]
            consumed_later = {a.buffer for st in later for a in st.args
                              if a.role in (ArgRole.INPUT, ArgRole.INOUT,
                                            ArgRole.SCALAR)}
            gather = [b for b in dict.fromkeys(produced)
                      if b in fetch_set or b in consumed_later]
            seg = _run_segment(device, states, seg_stages, seg_len, gather,
                               inputs, env,
                               cpu_ratio if si == 0 else 0.0,
                               upload_mode, gather_mode)
            up += seg.up_ns
            kern += seg.kernel_ns
            down += seg.down_ns
            post += seg.post_ns
            rounds_total += seg.rounds
            if leftover is None:
                leftover = seg.leftover
            for b, v in seg.values.items():
                if b in consumed_later:
                    inputs[b] = v
                if b in fetch_set:
                    results[b] = v
                    name = seg.names[b]
                    while name in lengths:
                        name += "_2"
                    lengths[name] = len(v)
    finally:
        device.release()
    report = ExecReport(
        cpu_to_dpu_ns=up, kernel_ns=kern, dpu_to_cpu_ns=down,
        host_post_ns=post,
        overhead_ns=(cost.fixed_codegen_overhead_ns +
                     cost.fixed_alloc_overhead_ns),
        rounds=rounds_total, cpu_leftover=leftover or 0, lengths=lengths)
    return report, results


def run_subpipeline_chain(pf, device: Device, upload_mode: str = "parallel",
                          gather_mode: str = "parallel",
                          cpu_ratio: float = 0.0,
                          input_overrides: Optional[Dict] = None):
    """Execute a PipelineFull: split at invalid-chain boundaries, run the
    groups as consecutive pipelines, compacting or combining between."""
    from .pipeline import ExecReport, Pipeline, split_into_subpipelines

    groups = split_into_subpipelines(pf.stages)
    inputs: Dict[Buffer, np.ndarray] = {
        b: np.asarray(v) for b, v in (input_overrides or {}).items()}
    fetch_set = set(pf.fetch_set)
    up = kern = down = post = 0.0
    rounds_total = 0
    leftover: Optional[int] = None
    results: Dict[Buffer, np.ndarray] = {}
    lengths: Dict[str, int] = {}
    ran_groups = 0
    for gi, group in enumerate(groups):
        if not group and groups != [group]:
            continue
        later = [st for g2 in groups[gi + 1:] for st in g2]
        consumed_later = {a.buffer for st in later for a in st.args
                          if a.role in (ArgRole.INPUT, ArgRole.INOUT)}
        produced = [a.buffer for st in group for a in st.args
                    if a.role in (ArgRole.OUTPUT, ArgRole.INOUT,
                                  ArgRole.REDUCE_OUT)]
        if group:
            first = group[0]
            lens = set()
            for a in first.args:
                if a.role in (ArgRole.INPUT, ArgRole.INOUT):
                    if a.buffer in inputs:
                        lens.add(len(inputs[a.buffer]))
                    elif a.buffer.data is not None:
                        lens.add(len(a.buffer.data))
            glen = lens.pop() if len(lens) == 1 else pf.length
        else:
            glen = pf.length
        sub = Pipeline(glen)
        for b, v in inputs.items():
            sub._tracked[b] = len(v)
        for st in group:
            sub.add_stage(st)
        for b in dict.fromkeys(produced):
            if b in fetch_set or b in consumed_later:
                sub.fetch(b)
        rep = sub.execute(device, upload_mode=upload_mode,
                          gather_mode=gather_mode,
                          cpu_ratio=cpu_ratio if gi == 0 else 0.0,
                          _input_overrides=inputs)
        ran_groups += 1
        up += rep.cpu_to_dpu_ns
        kern += rep.kernel_ns
        down += rep.dpu_to_cpu_ns
        post += rep.host_post_ns
        rounds_total += rep.rounds
        if leftover is None:
            leftover = rep.cpu_leftover
        for b in dict.fromkeys(produced):
            if b not in sub.fetch_set:
                continue
            v = sub.result(b)
            if b in consumed_later:
                inputs[b] = v
            if b in fetch_set:
                results[b] = v
                name = b.name
                while name in lengths:
                    name += "_2"
                lengths[name] = len(v)
    cost = device.cost
    overhead = cost.fixed_alloc_overhead_ns + \
        max(1, ran_groups) * cost.fixed_codegen_overhead_ns
    report = ExecReport(
        cpu_to_dpu_ns=up, kernel_ns=kern, dpu_to_cpu_ns=down,
        host_post_ns=post, overhead_ns=overhead, rounds=rounds_total,
        cpu_leftover=leftover or 0, lengths=lengths)
    return report, results

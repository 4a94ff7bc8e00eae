"""Simulated processing-near-memory device and its cost model.

The device is a rack of in-order cores, each sitting beside its own
DRAM bank (MRAM) with a small software-managed scratchpad (WRAM) shared
by a fixed number of hardware threads (tasklets).  Cores cannot reach
each other's banks; all data movement is host<->bank transfers plus
per-core bank<->scratchpad DMA.

Byte movement is simulated exactly (kernels run over views of the
scratchpad bytes) while time is modeled:

* host transfers  serial:    sum_d (lat + bytes_d / bw)
                  parallel:  lat + ceil(n/lanes) * max_d(bytes_d) / bw
                  broadcast: lat + bytes / bw
* bank<->scratchpad DMA: per chunk of at most dma_max_bytes,
  lat + bytes / bw; offsets and sizes must be 8-byte aligned.
* kernels: invocations * cycles / frequency, divided by the tasklet
  count up to the pipeline fill limit (11); more tasklets than that do
  not add throughput.

Cores run a round concurrently, so a round's kernel time is the
maximum over cores.  Simulation of the cores can itself be threaded
(``parallel_sim``); results are bit-identical either way because cores
share no state within a round.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import accel
from .errors import (AlignmentViolation, CountOverflow, DeviceError, OutOfMram,
                     OutOfWram)
from .patterns import (ArgRole, FILTER_KINDS, PatternKind, invocation_views,
                       run_kernel_batch)
from .planner import ALIGN, CarryCursor, pad8

PIPELINE_FILL_TASKLETS = 11  # hardware threads that fill the core pipeline


@dataclass(frozen=True)
class DeviceConfig:
    """Geometry of the simulated device (desk-scale defaults)."""

    n_dpus: int = 16
    mram_bytes: int = 64 * 1024 * 1024
    wram_bytes: int = 64 * 1024
    wram_reserved_bytes: int = 16 * 1024  # stack/runtime slice of WRAM
    max_tasklets: int = 24
    tasklets: int = 11
    freq_mhz: int = 450
    dma_min_bytes: int = 8
    dma_max_bytes: int = 2048
    dma_align: int = 8

    @property
    def freq_hz(self) -> float:
        return self.freq_mhz * 1e6

    @property
    def wram_budget_per_tasklet(self) -> int:
        return (self.wram_bytes - self.wram_reserved_bytes) // self.tasklets

    def validate(self) -> None:
        if not (1 <= self.tasklets <= self.max_tasklets):
            raise DeviceError(f"tasklets must be 1..{self.max_tasklets}")
        if self.n_dpus < 1:
            raise DeviceError("need at least one core")
        if self.wram_reserved_bytes >= self.wram_bytes:
            raise DeviceError("reserved WRAM exceeds WRAM")
        if self.dma_align != ALIGN:
            raise DeviceError("DMA alignment is fixed at 8 bytes")


@dataclass(frozen=True)
class XferSpec:
    """One host transfer primitive: latency plus inverse bandwidth.
    lanes matters only for the parallel primitive (rank width)."""

    latency_ns: float
    bytes_per_ns: float
    lanes: int = 1


@dataclass(frozen=True)
class CostModel:
    """Time constants of the model; all rates in bytes per nanosecond."""

    serial_xfer: XferSpec = XferSpec(latency_ns=2_000.0, bytes_per_ns=0.6)
    parallel_xfer: XferSpec = XferSpec(latency_ns=20_000.0, bytes_per_ns=0.6,
                                       lanes=40)
    broadcast_xfer: XferSpec = XferSpec(latency_ns=20_000.0, bytes_per_ns=0.6)
    dma_latency_ns: float = 1_000.0
    dma_bytes_per_ns: float = 1.0
    cycles_per_invocation_default: int = 20
    fixed_codegen_overhead_ns: float = 151e6   # runtime substitution + compile
    fixed_alloc_overhead_ns: float = 1.2e9     # core allocation


def config_to_json(device: DeviceConfig, cost: CostModel) -> str:
    return json.dumps({"device": asdict(device), "cost": asdict(cost)},
                      indent=2, sort_keys=True)


def _from_dict(cls, data, label):
    fields = {f for f in cls.__dataclass_fields__}
    unknown = set(data) - fields
    if unknown:
        raise DeviceError(f"unknown {label} keys: {sorted(unknown)}")
    return data


def config_from_json(text: str) -> Tuple[DeviceConfig, CostModel]:
    """Parse a config file; unknown keys are rejected, missing keys keep
    their defaults."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DeviceError(f"bad config JSON: {exc}") from exc
    if not isinstance(raw, dict) or set(raw) - {"device", "cost"}:
        raise DeviceError("config must be an object with 'device'/'cost' keys")
    dev = DeviceConfig(**_from_dict(DeviceConfig, raw.get("device", {}), "device"))
    cost_raw = dict(_from_dict(CostModel, raw.get("cost", {}), "cost"))
    for key in ("serial_xfer", "parallel_xfer", "broadcast_xfer"):
        if key in cost_raw and isinstance(cost_raw[key], dict):
            cost_raw[key] = XferSpec(**_from_dict(XferSpec, cost_raw[key], key))
    cost = CostModel(**cost_raw)
    dev.validate()
    return dev, cost


# --- transfer timing --------------------------------------------------------

def serial_transfer_ns(cost: CostModel, sizes: Sequence[int]) -> float:
    x = cost.serial_xfer
    return sum(x.latency_ns + b / x.bytes_per_ns for b in sizes if b > 0)


def parallel_transfer_ns(cost: CostModel, sizes: Sequence[int]) -> float:
    live = [b for b in sizes if b > 0]
    if not live:
        return 0.0
    x = cost.parallel_xfer
    waves = math.ceil(len(live) / max(1, x.lanes))
    return x.latency_ns + waves * max(live) / x.bytes_per_ns

def broadcast_transfer_ns(cost: CostModel, nbytes: int) -> float:
    if nbytes <= 0:
        return 0.0
    x = cost.broadcast_xfer
    return x.latency_ns + nbytes / x.bytes_per_ns


def dma_chunk_ns(cfg: DeviceConfig, cost: CostModel, nbytes: int) -> float:
    """Modeled bank<->scratchpad DMA time; enforces the alignment and
    size rules (multiple of 8, each chunk 8..2048 bytes)."""
    if nbytes == 0:
        return 0.0
    if nbytes % cfg.dma_align:
        raise AlignmentViolation(f"DMA size {nbytes} not a multiple of "
                                 f"{cfg.dma_align}")
    total = 0.0
    left = nbytes
    while left > 0:
        chunk = min(left, cfg.dma_max_bytes)
        if chunk < cfg.dma_min_bytes:
            raise AlignmentViolation(f"DMA chunk {chunk} below minimum "
                                     f"{cfg.dma_min_bytes}")
        total += cost.dma_latency_ns + chunk / cost.dma_bytes_per_ns
        left -= chunk
    return total


def aligned_span(byte_off: int, nbytes: int) -> Tuple[int, int]:
    """Smallest 8-byte aligned span covering [byte_off, byte_off+nbytes)."""
    lo = byte_off - byte_off % ALIGN
    hi = pad8(byte_off + nbytes)
    return lo, hi - lo


# --- device state -----------------------------------------------------------

class DpuState:
    """One core: its DRAM bank plus per-tasklet scratchpad slices."""

    __slots__ = ("mram", "wram", "mram_bytes")

    def __init__(self, cfg: DeviceConfig):
        self.mram_bytes = cfg.mram_bytes
        self.mram = np.zeros(cfg.mram_bytes, dtype=np.uint8)
        budget = cfg.wram_budget_per_tasklet
        self.wram = [np.zeros(budget, dtype=np.uint8)
                     for _ in range(cfg.tasklets)]

    def mram_write(self, off: int, data: np.ndarray) -> None:
        if off < 0 or off + len(data) > self.mram_bytes:
            raise OutOfMram(f"write [{off}, {off + len(data)}) outside bank "
                            f"of {self.mram_bytes} bytes")
        self.mram[off:off + len(data)] = data

    def mram_read(self, off: int, nbytes: int) -> np.ndarray:
        if off < 0 or off + nbytes > self.mram_bytes:
            raise OutOfMram(f"read [{off}, {off + nbytes}) outside bank")
        return self.mram[off:off + nbytes]


class Device:
    """Handle on a simulated device; exclusively owned while a pipeline
    executes on it."""

    def __init__(self, config: Optional[DeviceConfig] = None,
                 cost: Optional[CostModel] = None,
                 parallel_sim: bool = False):
        self.config = config or DeviceConfig()
        self.cost = cost or CostModel()
        self.config.validate()
        self.parallel_sim = parallel_sim
        self._busy = False

    def acquire(self) -> List[DpuState]:
        if self._busy:
            raise DeviceError("device already executing a pipeline")
        self._busy = True
        return [DpuState(self.config) for _ in range(self.config.n_dpus)]

    def release(self) -> None:
        self._busy = False


# --- host transfers ---------------------------------------------------------

def upload(device: Device, states: List[DpuState],
           items: Sequence[Optional[Tuple[int, np.ndarray]]],
           mode: str) -> float:
    """Write per-core payloads into the banks and return modeled time.

    items has one (mram_offset, bytes) entry per core (None to skip);
    broadcast mode writes the single non-None payload to every core.
    """
    if mode == "broadcast":
        payload = next((it for it in items if it is not None), None)
        if payload is None:
            return 0.0
        off, data = payload
        for st in states:
            st.mram_write(off, data)
        return broadcast_transfer_ns(device.cost, len(data))
    sizes = []
    for st, it in zip(states, items):
        if it is None:
            sizes.append(0)
            continue
        off, data = it
        st.mram_write(off, data)
        sizes.append(len(data))
    if mode == "serial":
        return serial_transfer_ns(device.cost, sizes)
    if mode == "parallel":
        return parallel_transfer_ns(device.cost, sizes)
    raise DeviceError(f"unknown transfer mode {mode!r}")


def download(device: Device, states: List[DpuState],
             requests: Sequence[Optional[Tuple[int, int]]],
             mode: str) -> Tuple[List[Optional[np.ndarray]], float]:
    """Read per-core (offset, nbytes) spans; returns payloads and time."""
    out: List[Optional[np.ndarray]] = []
    sizes = []
    for st, req in zip(states, requests):
        if req is None:
            out.append(None)
            sizes.append(0)
            continue
        off, nbytes = req
        out.append(st.mram_read(off, nbytes).copy())
        sizes.append(nbytes)
    if mode == "serial":
        return out, serial_transfer_ns(device.cost, sizes)
    if mode == "parallel":
        return out, parallel_transfer_ns(device.cost, sizes)
    raise DeviceError(f"unknown transfer mode {mode!r}")


def total_time(cpu_to_dpu_ns: float, kernel_ns: float, dpu_to_cpu_ns: float,
               host_post_ns: float) -> float:
    """End-to-end modeled time of one pipeline execution (the fixed
    codegen/alloc overheads are reported separately)."""
    return cpu_to_dpu_ns + kernel_ns + dpu_to_cpu_ns + host_post_ns


# --- per-round execution engine ---------------------------------------------

def _tasklet_chunks(total_inv: int, tasklets: int, quantum: int) -> List[int]:
    """Contiguous per-tasklet invocation counts: equal aligned chunks,
    remainder handed out in alignment quanta front to back, byte tail
    appended to the last tasklet."""
    if total_inv <= 0:
        return [0] * tasklets
    base = total_inv // (tasklets * quantum) * quantum
    rem = total_inv - base * tasklets
    chunks = [base + (quantum if i < rem // quantum else 0)
              for i in range(tasklets)]
    chunks[-1] += rem % quantum
    return chunks


def _wram_view(wram: np.ndarray, off: int, nbytes: int, dtype) -> np.ndarray:
    if off < 0 or off + nbytes > len(wram):
        raise OutOfWram(f"staging [{off}, {off + nbytes}) outside tasklet "
                        f"budget of {len(wram)} bytes")
    return wram[off:off + nbytes].view(dtype)


def run_stage_on_dpu(device: Device, ep, sp, st: DpuState, d: int,
                     valid: Dict, round_idx: int,
                     fills: Optional[Dict] = None) -> float:
    """Execute one stage on one core for the current round.

    valid maps BufPlan -> contiguous valid element extent in the core's
    region (its own index space); produced extents are added here.
    fills maps BufPlan -> (local_start, count) for overlap bytes the
    host pre-placed past a produced buffer's logical end; they join the
    valid extent once the producer reaches them.
    Returns the core's modeled time for this stage.
    """
    cfg, cost = device.config, device.cost
    stage = sp.spec
    kind = stage.kind
    slot, adv = sp.slot, sp.advance

    # invocation domain for this core and round
    if sp.consumes_filtered:
        ext_in = valid.get(sp.vec_inputs[0], 0)
        n_inv = max(0, (ext_in - slot) // adv + 1) if ext_in >= slot else 0
    else:
        ext_in = min((valid.get(bp, 0) for bp in sp.vec_inputs), default=0)
        n_inv = max(0, (ext_in - slot) // adv + 1) if ext_in >= slot else 0
        owned = sp.owned_invocations(d, round_idx)
        if kind in FILTER_KINDS or kind is PatternKind.REDUCE:
            # never fold or keep halo duplicates: process the owned share only
            n_inv = min(n_inv, owned)
        else:
            # recompute at most the halo downstream stages will read
            n_inv = min(n_inv, owned + sp.out_need)

    cycles = sp.spec.kernel.cost_hint
    if cycles is None:
        cycles = cost.cycles_per_invocation_default
    time_ns = n_inv * cycles / cfg.freq_hz * 1e9 / min(cfg.tasklets,
                                                       PIPELINE_FILL_TASKLETS)

    quantum = sp.inv_quantum
    chunks = _tasklet_chunks(n_inv, cfg.tasklets, quantum)
    carry = CarryCursor()
    kept_total = 0
    dma_ns = 0.0

    inv_base = 0
    for t, chunk in enumerate(chunks):
        wram = st.wram[t]
        if chunk > 0:
            # scalars stage in once per tasklet
            for a_i, bp, w_off in sp.scalar_slots:
                nbytes = bp.scalar_len * bp.elem.size_bytes
                dma_ns += dma_chunk_ns(cfg, cost, pad8(nbytes))
                _wram_view(wram, w_off, pad8(nbytes), np.uint8)[:nbytes] = \
                    st.mram_read(bp.region_off, nbytes)
        acc_views = {}
        for a_i, spec_a, w_off in sp.acc_slots:
            nbytes = spec_a.reduce_width * spec_a.elem.size_bytes
            acc = _wram_view(wram, w_off, nbytes, spec_a.elem.dtype)
            acc[:] = 0
            acc_views[a_i] = acc

        pos = 0
        while pos < chunk:
            blk = min(sp.inv_per_block, chunk - pos)
            i0 = inv_base + pos
            views: List = [None] * len(stage.args)
            out_slots: List[Tuple[int, object, np.ndarray]] = []
            for a_i, a in enumerate(stage.args):
                bp = sp.arg_buf[a_i]
                w_off = sp.wram_offsets[a_i]
                if a.role is ArgRole.COMBINE:
                    continue
                if a.role is ArgRole.SCALAR:
                    nbytes = bp.scalar_len * bp.elem.size_bytes
                    v = _wram_view(wram, sp.scalar_off[a_i], nbytes,
                                   bp.elem.dtype)
                    v = v.view()
                    v.flags.writeable = False
                    views[a_i] = v
                elif a.role is ArgRole.REDUCE_OUT:
                    views[a_i] = acc_views[a_i]
                elif a.role is ArgRole.INPUT or a.role is ArgRole.INOUT:
                    s = bp.elem.size_bytes
                    first = i0 * adv
                    count = (blk - 1) * adv + slot
                    count = min(count, valid.get(bp, 0) - first)
                    byte_off = bp.region_off + first * s
                    lo, span = aligned_span(byte_off, count * s)
                    dma_ns += dma_chunk_ns(cfg, cost, span)
                    staged = _wram_view(wram, w_off, count * s, bp.elem.dtype)
                    staged[:] = st.mram_read(byte_off, count * s).view(bp.elem.dtype)
                    view = invocation_views(staged, slot, adv, blk)
                    if a.role is ArgRole.INPUT:
                        view = view.view()
                        view.flags.writeable = False
                    else:
                        out_slots.append((a_i, bp, staged[:blk]))
                    views[a_i] = view
                else:  # OUTPUT
                    s = a.elem.size_bytes
                    out = _wram_view(wram, w_off, blk * s, a.elem.dtype)
                    out[:] = 0
                    views[a_i] = out
                    out_slots.append((a_i, bp, out))

            mask = run_kernel_batch(kind, stage.kernel, stage.args, views, blk)

            for a_i, bp, data in out_slots:
                s = bp.elem.size_bytes
                if mask is None:
                    byte_off = bp.region_off + i0 * s
                    lo, span = aligned_span(byte_off, blk * s)
                    dma_ns += dma_chunk_ns(cfg, cost, span)
                    st.mram_write(byte_off, data.view(np.uint8)[:blk * s])
                else:
                    staged_out = np.empty(blk, dtype=bp.elem.dtype)
                    kept = accel.compact_masked(data, mask, staged_out, 0)
                    base, wbytes, _carried = carry.step(kept * s)
                    if wbytes:
                        dma_ns += dma_chunk_ns(cfg, cost, wbytes)
                    if kept:
                        byte_off = bp.region_off + kept_total * s
                        if kept_total * s + kept * s > bp.region_bytes:
                            raise CountOverflow(
                                f"filter output {bp.name!r} overflows region")
                        st.mram_write(byte_off,
                                      staged_out[:kept].view(np.uint8))
                        kept_total += kept
            pos += blk
        inv_base += chunk

        for a_i, spec_a, w_off in sp.acc_slots:
            bp = sp.arg_buf[a_i]
            nbytes = spec_a.reduce_width * spec_a.elem.size_bytes
            slot_off = bp.region_off + t * pad8(nbytes)
            lo, span = aligned_span(slot_off, nbytes)
            dma_ns += dma_chunk_ns(cfg, cost, span)
            st.mram_write(slot_off, acc_views[a_i].view(np.uint8))

    # publish produced extents and count headers
    for a_i, a in enumerate(stage.args):
        bp = sp.arg_buf[a_i]
        if a.role is ArgRole.OUTPUT or a.role is ArgRole.INOUT:
            if kind in FILTER_KINDS and a.role is ArgRole.OUTPUT:
                valid[bp] = kept_total
                header = np.array([kept_total], dtype=np.uint64)
                st.mram_write(bp.header_off, header.view(np.uint8))
                dma_ns += dma_chunk_ns(cfg, cost, ALIGN)
            else:
                valid[bp] = n_inv
                if fills:
                    f = fills.get(bp)
                    if f is not None and f[0] == valid[bp]:
                        valid[bp] = f[0] + f[1]
    return time_ns + dma_ns


def run_dpu_round(device: Device, ep, st: DpuState, d: int,
                  valid: Dict, round_idx: int,
                  fills: Optional[Dict] = None) -> float:
    total = 0.0
    for sp in ep.stages:
        total += run_stage_on_dpu(device, ep, sp, st, d, valid, round_idx,
                                  fills)
    return total


def run_round(device: Device, ep, states: List[DpuState],
              valids: List[Dict], round_idx: int,
              fills_per_dpu: Optional[List[Dict]] = None) -> float:
    """Run one round on every core; cores are concurrent, so the round's
    kernel time is the slowest core's."""
    n = device.config.n_dpus
    fills_per_dpu = fills_per_dpu or [None] * n
    if device.parallel_sim and n > 1:
        with ThreadPoolExecutor(max_workers=min(8, n)) as pool:
            futs = [pool.submit(run_dpu_round, device, ep, states[d], d,
                                valids[d], round_idx, fills_per_dpu[d])
                    for d in range(n)]
            times = [f.result() for f in futs]
    else:
        times = [run_dpu_round(device, ep, states[d], d, valids[d], round_idx,
                               fills_per_dpu[d]) for d in range(n)]
    return max(times) if times else 0.0

"""Staged pipelines over typed buffers.

A Pipeline is built, then run exactly once:

    p = Pipeline(length)
    p.stage(kind, kernel, args, ...)   # repeat per stage
    p.fetch(buffer)                    # declare wanted results
    report = p.execute(device)
    n = p.get_length(buffer)

Stages chain by naming the same Buffer: a stage that reads what an
earlier stage wrote consumes it in place on each core, so chained
stages cost no extra host traffic.  Buffers written by Filter or
Reduce stages are the exception: their contents are ragged or folded
per core, so only further filtering or reduction may consume them
directly; anything else raises InvalidChain.  PipelineFull accepts
those chains too and runs them as consecutive pipelines, compacting or
combining at each boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (AlreadyExecuted, GroupNotDivisible, InvalidChain,
                     LengthMismatch, MissingOverlapVector, NotExecuted,
                     NotFetched, RoleViolation, UnknownBuffer, WindowTooLarge)
from .patterns import (ArgRole, ArgSpec, Buffer, CHAINABLE_AFTER_FILTER_REDUCE,
                       DataDependent, FILTER_KINDS, GROUP_KINDS, KernelSpec,
                       PatternKind, WINDOW_KINDS, kind_geometry, output_length,
                       validate_stage_args)


@dataclass(frozen=True)
class StageSpec:
    """One staged pattern call."""

    index: int
    kind: PatternKind
    kernel: KernelSpec
    args: Tuple[ArgSpec, ...]
    w: Optional[int] = None
    g: Optional[int] = None
    overlap: Optional[Buffer] = None


@dataclass
class ChainGraph:
    """Producer/consumer relations between stages through buffers."""

    producer: Dict[Buffer, int] = field(default_factory=dict)
    consumers: Dict[Buffer, List[int]] = field(default_factory=dict)


@dataclass(frozen=True)
class ExecReport:
    """Immutable execution summary.

    The four timing components are modeled nanoseconds; total_ns is
    their sum.  The fixed codegen/allocation overheads are reported
    separately in overhead_ns so end-to-end comparisons are not
    drowned by constants that are identical on every run.
    """

    cpu_to_dpu_ns: float
    kernel_ns: float
    dpu_to_cpu_ns: float
    host_post_ns: float
    overhead_ns: float
    rounds: int
    cpu_leftover: int
    lengths: Dict[str, int]

    @property
    def total_ns(self) -> float:
        return (self.cpu_to_dpu_ns + self.kernel_ns + self.dpu_to_cpu_ns +
                self.host_post_ns)


class Pipeline:
    """A single-shot chain of pattern stages over ``length`` elements."""

    _relax_chain = False  # PipelineFull flips this

    def __init__(self, length: int):
        if length < 0:
            raise LengthMismatch("pipeline length must be >= 0")
        self.length = length
        self.stages: List[StageSpec] = []
        self.fetch_set: List[Buffer] = []
        self.executed = False
        self.graph = ChainGraph()
        self._tracked: Dict[Buffer, object] = {}   # int or DataDependent
        self._producer_kind: Dict[Buffer, PatternKind] = {}
        self._results: Dict[Buffer, np.ndarray] = {}
        self._report: Optional[ExecReport] = None

    # -- construction ---------------------------------------------------

    def stage(self, kind: PatternKind, kernel: KernelSpec,
              args: Sequence[ArgSpec], w: Optional[int] = None,
              g: Optional[int] = None,
              overlap: Optional[Buffer] = None) -> bool:
        """Append one stage; returns True, raising on any violation."""
        spec = StageSpec(index=len(self.stages), kind=kind, kernel=kernel,
                         args=tuple(args), w=w, g=g, overlap=overlap)
        return self.add_stage(spec)

    def add_stage(self, spec: StageSpec) -> bool:
        if self.executed:
            raise AlreadyExecuted("pipeline already ran")
        if spec.index != len(self.stages):
            spec = StageSpec(index=len(self.stages), kind=spec.kind,
                             kernel=spec.kernel, args=spec.args, w=spec.w,
                             g=spec.g, overlap=spec.overlap)
        validate_stage_args(spec.kind, spec.args, spec.kernel)
        slot, adv, lookahead = kind_geometry(spec.kind, spec.w, spec.g)

        in_len = self._infer_input_length(spec)

        if spec.kind in GROUP_KINDS and isinstance(in_len, int) \
                and in_len % spec.g != 0:
            raise GroupNotDivisible(
                f"stage {spec.index}: group size {spec.g} does not divide "
                f"input length {in_len}")
        if spec.kind in WINDOW_KINDS and spec.overlap is None:
            if spec.kind in GROUP_KINDS:
                raise MissingOverlapVector(
                    f"stage {spec.index}: {spec.kind.value} always looks "
                    f"ahead a full window past the last group")
            if isinstance(in_len, int) and spec.w > in_len:
                raise WindowTooLarge(
                    f"stage {spec.index}: window of {spec.w} over "
                    f"{in_len} elements and no overlap vector")
        if spec.overlap is not None:
            if spec.overlap.data is None:
                raise MissingOverlapVector(
                    f"stage {spec.index}: overlap buffer carries no data")
            if len(spec.overlap.data) < lookahead:
                raise MissingOverlapVector(
                    f"stage {spec.index}: overlap needs {lookahead} "
                    f"elements, got {len(spec.overlap.data)}")

        for a in spec.args:
            if a.role is ArgRole.SCALAR and a.buffer.data is None:
                raise LengthMismatch(
                    f"stage {spec.index}: scalar buffer "
                    f"{a.buffer.name!r} carries no data")

        self._check_chain(spec)
        self._track_lengths(spec, in_len)
        self.stages.append(spec)
        return True

    def _infer_input_length(self, spec: StageSpec):
        """Common length of this stage's vector inputs (int, or the
        DataDependent marker when they come from a filter)."""
        fixed = set()
        dyn: List[Tuple[Buffer, DataDependent]] = []
        unknown = []
        for a in spec.args:
            if a.role not in (ArgRole.INPUT, ArgRole.INOUT):
                continue
            b = a.buffer
            if b in self._tracked:
                t = self._tracked[b]
                if isinstance(t, DataDependent):
                    dyn.append((b, t))
                else:
                    fixed.add(t)
            elif b.data is not None:
                fixed.add(len(b.data))
            else:
                unknown.append(b)
        if len(fixed) > 1:
            raise LengthMismatch(f"stage {spec.index}: vector inputs disagree "
                                 f"on length: {sorted(fixed)}")
        if dyn and fixed:
            raise LengthMismatch(
                f"stage {spec.index}: cannot mix a data-dependent input "
                f"with fixed-length inputs")
        if dyn:
            producers = {self.graph.producer[b] for b, _ in dyn}
            if len(producers) > 1:
                raise LengthMismatch(
                    f"stage {spec.index}: data-dependent inputs from "
                    f"different producer stages")
            if unknown:
                raise LengthMismatch(
                    f"stage {spec.index}: cannot mix a data-dependent input "
                    f"with inputs of unknown length")
            return dyn[0][1]
        if fixed:
            ln = fixed.pop()
            for b in unknown:
                self._tracked[b] = ln
            return ln
        if not self.stages:
            for b in unknown:
                self._tracked[b] = self.length
            return self.length
        raise LengthMismatch(
            f"stage {spec.index}: no input length can be inferred; attach "
            f"host data to the input buffers or chain from earlier stages")

    def _check_chain(self, spec: StageSpec) -> None:
        for a in spec.args:
            if a.role not in (ArgRole.INPUT, ArgRole.INOUT):
                continue
            b = a.buffer
            pk = self._producer_kind.get(b)
            if pk is None:
                continue
            ragged = pk in FILTER_KINDS or pk is PatternKind.REDUCE
            if ragged and spec.kind not in CHAINABLE_AFTER_FILTER_REDUCE \
                    and not self._relax_chain:
                raise InvalidChain(b.name, self.graph.producer[b],
                                   spec.kind.value)

    def _track_lengths(self, spec: StageSpec, in_len) -> None:
        bound = in_len.upper_bound if isinstance(in_len, DataDependent) \
            else in_len
        data_dependent_in = isinstance(in_len, DataDependent)
        if data_dependent_in and spec.kind in GROUP_KINDS:
            # the realized length is unknown here; only whole groups of it
            # can materialize, so the cap rounds down instead of rejecting
            bound -= bound % spec.g
        overlap_provided = spec.overlap is not None
        out_len = output_length(spec.kind, bound, spec.w, spec.g,
                                overlap_provided=overlap_provided)
        for a in spec.args:
            b = a.buffer
            if a.role in (ArgRole.OUTPUT, ArgRole.REDUCE_OUT) or \
                    a.role is ArgRole.INOUT:
                if b in self._producer_kind:
                    raise RoleViolation(
                        f"stage {spec.index}: buffer {b.name!r} already has "
                        f"a producer (stage {self.graph.producer[b]})")
                if a.role is not ArgRole.INOUT and b in self._tracked:
                    raise RoleViolation(
                        f"stage {spec.index}: buffer {b.name!r} was already "
                        f"consumed; writing it now would rebind it")
            if a.role in (ArgRole.INPUT, ArgRole.INOUT):
                self.graph.consumers.setdefault(b, []).append(spec.index)
                if b not in self._tracked:
                    self._tracked[b] = in_len
            if a.role is ArgRole.OUTPUT or a.role is ArgRole.INOUT:
                self.graph.producer[b] = spec.index
                self._producer_kind[b] = spec.kind
                if a.role is ArgRole.INOUT:
                    self._tracked[b] = in_len
                elif isinstance(out_len, DataDependent) or data_dependent_in:
                    cap = out_len.upper_bound if isinstance(out_len,
                                                            DataDependent) \
                        else out_len
                    self._tracked[b] = DataDependent(cap)
                else:
                    self._tracked[b] = out_len
            elif a.role is ArgRole.REDUCE_OUT:
                self.graph.producer[b] = spec.index
                self._producer_kind[b] = spec.kind
                self._tracked[b] = a.reduce_width

    # -- results ----------------------------------------------------------

    def fetch(self, buffer: Buffer) -> None:
        """Declare that a produced buffer must be retrievable afterwards."""
        if self.executed:
            raise AlreadyExecuted("pipeline already ran")
        if buffer not in self.graph.producer:
            raise UnknownBuffer(f"buffer {buffer.name!r} is not produced by "
                                f"any stage of this pipeline")
        if buffer not in self.fetch_set:
            self.fetch_set.append(buffer)

    def execute(self, device, upload_mode: str = "parallel",
                gather_mode: str = "parallel", cpu_ratio: float = 0.0,
                _input_overrides: Optional[Dict[Buffer, np.ndarray]] = None
                ) -> ExecReport:
        """Run once on a device; returns the immutable report."""
        if self.executed:
            raise AlreadyExecuted("pipeline already ran")
        from . import hostrt
        report, results = hostrt.execute_pipeline(
            self, device, upload_mode=upload_mode, gather_mode=gather_mode,
            cpu_ratio=cpu_ratio, input_overrides=_input_overrides or {})
        self._results = results
        self._report = report
        self.executed = True
        return report

    def get_length(self, buffer: Buffer) -> int:
        if not self.executed:
            raise NotExecuted("execute() has not run")
        if buffer not in self.graph.producer:
            raise UnknownBuffer(f"buffer {buffer.name!r} is not produced by "
                                f"any stage of this pipeline")
        if buffer not in self.fetch_set:
            raise NotFetched(f"buffer {buffer.name!r} was not fetched")
        return len(self._results[buffer])

    def result(self, buffer: Buffer) -> np.ndarray:
        """The fetched contents of a buffer (same checks as get_length)."""
        self.get_length(buffer)
        return self._results[buffer]

    @property
    def report(self) -> ExecReport:
        if self._report is None:
            raise NotExecuted("execute() has not run")
        return self._report


def split_points(stages: Sequence[StageSpec]) -> List[int]:
    """Stage indices after which a chain must be cut: each Filter or
    Reduce stage whose output a later non-filter/non-reduce stage
    consumes."""
    producer: Dict[Buffer, StageSpec] = {}
    cuts = set()
    for st in stages:
        for a in st.args:
            if a.role in (ArgRole.INPUT, ArgRole.INOUT):
                p = producer.get(a.buffer)
                ragged = p is not None and (p.kind in FILTER_KINDS or
                                            p.kind is PatternKind.REDUCE)
                if ragged and st.kind not in CHAINABLE_AFTER_FILTER_REDUCE:
                    cuts.add(p.index)
        for a in st.args:
            if a.role in (ArgRole.OUTPUT, ArgRole.INOUT, ArgRole.REDUCE_OUT):
                producer[a.buffer] = st
    return sorted(cuts)


def split_into_subpipelines(stages: Sequence[StageSpec]
                            ) -> List[List[StageSpec]]:
    """Partition a stage list at its cut points, in order.  The runtime
    builds a fresh Pipeline per group once each boundary length (the
    compacted or combined output of the previous group) is known."""
    cuts = split_points(stages)
    groups: List[List[StageSpec]] = []
    cur: List[StageSpec] = []
    for st in stages:
        cur.append(st)
        if st.index in cuts:
            groups.append(cur)
            cur = []
    if cur or not groups:
        groups.append(cur)
    return groups


class PipelineFull(Pipeline):
    """A Pipeline that also accepts chains through filtered or reduced
    buffers, executing them as consecutive pipelines with host
    compaction/combination at each boundary.  Same interface."""

    _relax_chain = True

    def execute(self, device, upload_mode: str = "parallel",
                gather_mode: str = "parallel", cpu_ratio: float = 0.0,
                _input_overrides: Optional[Dict[Buffer, np.ndarray]] = None
                ) -> ExecReport:
        if self.executed:
            raise AlreadyExecuted("pipeline already ran")
        from . import hostrt
        report, results = hostrt.run_subpipeline_chain(
            self, device, upload_mode=upload_mode, gather_mode=gather_mode,
            cpu_ratio=cpu_ratio, input_overrides=_input_overrides or {})
        self._results = results
        self._report = report
        self.executed = True
        return report


def new_pipeline(length: int) -> Pipeline:
    return Pipeline(length)

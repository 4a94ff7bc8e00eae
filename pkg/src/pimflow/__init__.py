"""Data-parallel pattern pipelines on a simulated near-memory device.

Express a computation as staged patterns (map, reduce, filter, window,
group and their combinations) over typed buffers; the planner lays the
data out across memory banks and scratchpads, the generator emits a
plain device program, and the simulator executes it bit-exactly
against host reference semantics, with a modeled time breakdown.
"""

from .errors import (AlignmentViolation, AlreadyExecuted, CountOverflow,
                     DeviceError, GroupNotDivisible, InvalidChain,
                     KernelFault, LengthMismatch, MissingOverlapVector,
                     MramTooSmall, NotExecuted, NotFetched, OutOfMram,
                     OutOfWram, PimflowError, PlanInfeasible, RoleViolation,
                     UnknownBuffer, VectorTooLargeForWram, WindowTooLarge,
                     WramTooSmall)
from .patterns import (ArgRole, ArgSpec, Buffer, DataDependent, ElemType,
                       I32, I64, KernelSpec, PatternKind, U8, U16, U32, U64,
                       apply_pattern_host, arg, kind_geometry, output_length)
from .pipeline import (ChainGraph, ExecReport, Pipeline, PipelineFull,
                       StageSpec, new_pipeline, split_into_subpipelines,
                       split_points)
from .planner import (CarryCursor, LayoutPlan, MramPlan, WramStagePlan,
                      filter_output_plan, min_align_elems, mram_capacity,
                      pad8, rounds_and_leftover, wram_element_count,
                      window_overlap_plan)
from .codegen import (DeviceProgram, ExecPlan, GlobalLists, KernelRecord,
                      LeftoverTask, emit_program_text, parse_program_text,
                      plan_segment, t1_extract, t2_memory_params,
                      t3_cpu_leftover, t4_postprocessing)
from .simdev import (CostModel, Device, DeviceConfig, XferSpec,
                     broadcast_transfer_ns, config_from_json, config_to_json,
                     dma_chunk_ns, download, parallel_transfer_ns,
                     run_round, serial_transfer_ns, total_time, upload)
from .hostrt import (GatherBlock, apply_chain_host, combine_reduce_partials,
                     compact_filter_output, run_cpu_leftover)
from .bench import (BenchReport, WorkloadSpec, build_workload, loc_report,
                    run_bench, vecdot_pipeline)

__version__ = "0.1.0"

__all__ = [
    "ArgRole", "ArgSpec", "Buffer", "ChainGraph", "DataDependent",
    "ElemType", "ExecReport", "KernelSpec", "PatternKind", "Pipeline",
    "PipelineFull", "StageSpec", "U8", "U16", "U32", "U64", "I32", "I64",
    "arg", "new_pipeline", "split_into_subpipelines", "split_points",
    "apply_pattern_host", "kind_geometry", "output_length",
    "CarryCursor", "LayoutPlan", "MramPlan", "WramStagePlan",
    "filter_output_plan", "min_align_elems", "mram_capacity", "pad8",
    "rounds_and_leftover", "wram_element_count", "window_overlap_plan",
    "DeviceProgram", "ExecPlan", "GlobalLists", "KernelRecord",
    "LeftoverTask", "emit_program_text", "parse_program_text",
    "plan_segment", "t1_extract", "t2_memory_params", "t3_cpu_leftover",
    "t4_postprocessing",
    "CostModel", "Device", "DeviceConfig", "XferSpec",
    "broadcast_transfer_ns", "config_from_json", "config_to_json",
    "dma_chunk_ns", "download", "parallel_transfer_ns", "run_round",
    "serial_transfer_ns", "total_time", "upload",
    "GatherBlock", "apply_chain_host", "combine_reduce_partials",
    "compact_filter_output", "run_cpu_leftover",
    "BenchReport", "WorkloadSpec", "build_workload", "loc_report",
    "run_bench", "vecdot_pipeline",
    "PimflowError", "RoleViolation", "GroupNotDivisible", "WindowTooLarge",
    "InvalidChain", "LengthMismatch", "UnknownBuffer", "AlreadyExecuted",
    "NotExecuted", "NotFetched", "PlanInfeasible", "WramTooSmall",
    "MramTooSmall", "VectorTooLargeForWram", "MissingOverlapVector",
    "DeviceError", "AlignmentViolation", "OutOfMram", "OutOfWram",
    "CountOverflow", "KernelFault",
]

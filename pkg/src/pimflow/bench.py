"""Benchmark workloads and the ``bench`` command-line harness.

Six vector workloads expressed as pipelines, each verified bit-exactly
against an independent numpy oracle:

* VA     element-wise u32 addition of two arrays (map)
* SEL    keep even elements (filter)
* UNI    drop duplicates from a sorted vector (window filter, W=2)
* RED    fold all elements into one wrapping u32 sum (reduce)
* GEMV   matrix-vector product, one row per group, vector broadcast
         as a scalar argument (group)
* HST-S  256-bin histogram as a vector-valued reduction (reduce)

The CLI runs one workload under serial and/or parallel gather
strategies and writes a deterministic JSON report; exit status is 0 on
an oracle pass, 1 on a mismatch, 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import accel
from .errors import PimflowError, VectorTooLargeForWram
from .patterns import (ArgRole, Buffer, KernelSpec, PatternKind, U32, arg)
from .pipeline import Pipeline
from .simdev import CostModel, Device, DeviceConfig, config_from_json

REPORT_VERSION = "bench-v1"
WORKLOAD_NAMES = ("VA", "SEL", "UNI", "RED", "GEMV", "HST-S")

# device-side lines of the hand-written baselines these pipelines replace
BASELINE_LOC = {"VA": 6, "SEL": 6, "UNI": 6, "RED": 6, "GEMV": 9, "HST-S": 8}

_U32_MASK = 0xFFFFFFFF


@dataclass(frozen=True)
class WorkloadSpec:
    """Sizing knobs for one workload instance."""

    name: str
    n_dpus: int = 16
    elems_per_dpu: int = 65536
    tasklets: int = 11
    gemv_rows_per_dpu: int = 256
    gemv_cols: int = 64
    hist_bins: int = 256
    seed: int = 0


@dataclass
class BuiltWorkload:
    pipeline: Pipeline
    fetches: List[Buffer]
    expected: Dict[Buffer, np.ndarray]
    framework_calls: int = 0


# --- kernels -----------------------------------------------------------------

def _va_apply(a, b, c):
    np.add(a, b, out=c)


def _sel_apply(x, y):
    y[:] = x


def _sel_pred(x, y):
    return (x & np.uint32(1)) == 0


def _uni_apply(xw, y):
    y[:] = xw[:, 0]


def _uni_pred(xw, y):
    return xw[:, 0] != xw[:, 1]


def _red_apply(acc, x):
    acc[0] = np.uint32((int(acc[0]) + int(accel.sum_u32(x))) & _U32_MASK)


def _gemv_apply(rows, vec, y):
    accel.group_dot_u32(rows, vec, y)


def _hst_apply(acc, x):
    accel.hist_accumulate(acc, x)


def _wrap_add(a, b):
    return np.asarray((np.asarray(a, dtype=np.uint64) +
                       np.asarray(b, dtype=np.uint64)) & np.uint64(_U32_MASK),
                      dtype=np.uint32)


VA_KERNEL = KernelSpec("va_add", _va_apply)
SEL_KERNEL = KernelSpec("sel_even", _sel_apply, predicate=_sel_pred)
UNI_KERNEL = KernelSpec("uni_dedup", _uni_apply, predicate=_uni_pred)
RED_KERNEL = KernelSpec("red_sum", _red_apply)
GEMV_KERNEL = KernelSpec("gemv_row_dot", _gemv_apply)
HST_KERNEL = KernelSpec("hst_count", _hst_apply)


def _mul_apply(a, b, c):
    np.multiply(a, b, out=c)


VECDOT_MUL = KernelSpec("vecdot_mul", _mul_apply)
VECDOT_SUM = KernelSpec("vecdot_sum", _red_apply)


def vecdot_pipeline(a_data, b_data) -> Tuple[Pipeline, Buffer]:
    """The canonical two-stage chain: multiply element-wise, then fold
    into one wrapping u32 scalar."""
    a = Buffer("a", data=np.asarray(a_data, dtype=np.uint32))
    b = Buffer("b", data=np.asarray(b_data, dtype=np.uint32))
    c = Buffer("c", elem=U32)
    total = Buffer("sum", elem=U32)
    p = Pipeline(len(a.data))
    p.stage(PatternKind.MAP, VECDOT_MUL,
            [arg(ArgRole.INPUT, a), arg(ArgRole.INPUT, b),
             arg(ArgRole.OUTPUT, c)])
    p.stage(PatternKind.REDUCE, VECDOT_SUM,
            [arg(ArgRole.REDUCE_OUT, total, elem=U32), arg(ArgRole.INPUT, c)])
    p.fetch(total)
    return p, total


# --- builders ----------------------------------------------------------------

def _build_va(spec: WorkloadSpec, rng) -> BuiltWorkload:
    n = spec.n_dpus * spec.elems_per_dpu
    a = rng.integers(0, 1 << 32, n, dtype=np.uint32)
    b = rng.integers(0, 1 << 32, n, dtype=np.uint32)
    ab, bb = Buffer("a", data=a), Buffer("b", data=b)
    cb = Buffer("c", elem=U32)
    p = Pipeline(n)
    p.stage(PatternKind.MAP, VA_KERNEL,
            [arg(ArgRole.INPUT, ab), arg(ArgRole.INPUT, bb),
             arg(ArgRole.OUTPUT, cb)])
    p.fetch(cb)
    return BuiltWorkload(p, [cb], {cb: a + b})


def _build_sel(spec: WorkloadSpec, rng) -> BuiltWorkload:
    n = spec.n_dpus * spec.elems_per_dpu
    x = rng.integers(0, 1 << 32, n, dtype=np.uint32)
    xb, yb = Buffer("x", data=x), Buffer("y", elem=U32)
    p = Pipeline(n)
    p.stage(PatternKind.FILTER, SEL_KERNEL,
            [arg(ArgRole.INPUT, xb), arg(ArgRole.OUTPUT, yb)])
    p.fetch(yb)
    return BuiltWorkload(p, [yb], {yb: x[x % 2 == 0]})


def _build_uni(spec: WorkloadSpec, rng) -> BuiltWorkload:
    n = spec.n_dpus * spec.elems_per_dpu
    # sorted with duplicate probability one half
    x = np.cumsum(rng.integers(0, 2, n, dtype=np.uint32),
                  dtype=np.uint32)
    sentinel = np.array([(int(x[-1]) + 1) & _U32_MASK], dtype=np.uint32)
    xb, yb = Buffer("x", data=x), Buffer("y", elem=U32)
    ovl = Buffer("x_tail", data=sentinel)
    p = Pipeline(n)
    p.stage(PatternKind.WINDOW_FILTER, UNI_KERNEL,
            [arg(ArgRole.INPUT, xb), arg(ArgRole.OUTPUT, yb)],
            w=2, overlap=ovl)
    p.fetch(yb)
    keep = np.append(x[:-1] != x[1:], True)
    return BuiltWorkload(p, [yb], {yb: x[keep]})


def _build_red(spec: WorkloadSpec, rng) -> BuiltWorkload:
    n = spec.n_dpus * spec.elems_per_dpu
    x = rng.integers(0, 1 << 32, n, dtype=np.uint32)
    xb = Buffer("x", data=x)
    sb = Buffer("sum", elem=U32)
    p = Pipeline(n)
    p.stage(PatternKind.REDUCE, RED_KERNEL,
            [arg(ArgRole.REDUCE_OUT, sb, elem=U32), arg(ArgRole.INPUT, xb)])
    p.fetch(sb)
    want = np.array([int(x.sum(dtype=np.uint64)) & _U32_MASK],
                    dtype=np.uint32)
    return BuiltWorkload(p, [sb], {sb: want})


def _build_gemv(spec: WorkloadSpec, rng,
                cfg: Optional[DeviceConfig] = None) -> BuiltWorkload:
    rows = spec.n_dpus * spec.gemv_rows_per_dpu
    cols = spec.gemv_cols
    budget = (cfg or DeviceConfig(n_dpus=spec.n_dpus,
                                  tasklets=spec.tasklets)
              ).wram_budget_per_tasklet
    if cols * 4 > budget:
        raise VectorTooLargeForWram(
            f"GEMV vector of {cols} u32 ({cols * 4} B) exceeds the "
            f"per-tasklet budget of {budget} B")
    mat = rng.integers(0, 1 << 32, rows * cols, dtype=np.uint32)
    vec = rng.integers(0, 1 << 32, cols, dtype=np.uint32)
    mb, vb = Buffer("mat", data=mat), Buffer("vec", data=vec)
    yb = Buffer("y", elem=U32)
    p = Pipeline(rows * cols)
    p.stage(PatternKind.GROUP, GEMV_KERNEL,
            [arg(ArgRole.INPUT, mb), arg(ArgRole.SCALAR, vb),
             arg(ArgRole.OUTPUT, yb)], g=cols)
    p.fetch(yb)
    prod = mat.reshape(rows, cols).astype(np.uint64) * vec.astype(np.uint64)
    want = (prod.sum(axis=1) & _U32_MASK).astype(np.uint32)
    return BuiltWorkload(p, [yb], {yb: want})


def _build_hst(spec: WorkloadSpec, rng) -> BuiltWorkload:
    n = spec.n_dpus * spec.elems_per_dpu
    bins = spec.hist_bins
    x = rng.integers(0, bins, n, dtype=np.uint32)
    xb = Buffer("x", data=x)
    hb = Buffer("hist", elem=U32)
    p = Pipeline(n)
    p.stage(PatternKind.REDUCE, HST_KERNEL,
            [arg(ArgRole.REDUCE_OUT, hb, elem=U32, reduce_width=bins),
             arg(ArgRole.INPUT, xb),
             arg(ArgRole.COMBINE, combine=_wrap_add)])
    p.fetch(hb)
    want = (np.bincount(x, minlength=bins)[:bins] & _U32_MASK
            ).astype(np.uint32)
    return BuiltWorkload(p, [hb], {hb: want})


_BUILDERS: Dict[str, Callable] = {
    "VA": _build_va, "SEL": _build_sel, "UNI": _build_uni,
    "RED": _build_red, "HST-S": _build_hst,
}


def build_workload(spec: WorkloadSpec,
                   cfg: Optional[DeviceConfig] = None) -> BuiltWorkload:
    if spec.name not in WORKLOAD_NAMES:
        raise ValueError(f"unknown workload {spec.name!r}; choose one of "
                         f"{', '.join(WORKLOAD_NAMES)}")
    rng = np.random.default_rng(spec.seed)
    if spec.name == "GEMV":
        built = _build_gemv(spec, rng, cfg)
    else:
        built = _BUILDERS[spec.name](spec, rng)
    built.framework_calls = (len(built.pipeline.stages) +
                             len(built.pipeline.fetch_set) + 1)
    return built


def loc_report() -> List[Dict[str, int]]:
    """Framework calls (stage + fetch + execute) needed per workload,
    next to the device-side line count of the hand-written baseline
    each one replaces."""
    rows = []
    for name in WORKLOAD_NAMES:
        spec = WorkloadSpec(name, n_dpus=1, elems_per_dpu=256)
        built = build_workload(spec)
        rows.append({"workload": name,
                     "framework_calls": built.framework_calls,
                     "baseline_loc": BASELINE_LOC[name]})
    return rows


# --- running -----------------------------------------------------------------

@dataclass
class BenchReport:
    version: str
    workload: str
    verdict: str
    config: Dict
    overhead_ns: float
    timings: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True,
                          separators=(",", ":")) + "\n"

    @staticmethod
    def from_json(text: str) -> "BenchReport":
        return BenchReport(**json.loads(text))


def run_bench(spec: WorkloadSpec, cfg: Optional[DeviceConfig] = None,
              cost: Optional[CostModel] = None,
              strategies: Tuple[str, ...] = ("serial", "parallel"),
              parallel_sim: bool = False) -> BenchReport:
    """Build, execute and verify one workload under each gather
    strategy; uploads stay parallel so the strategies differ only in
    how results come back."""
    if cfg is None:
        cfg = DeviceConfig(n_dpus=spec.n_dpus, tasklets=spec.tasklets)
    cfg.validate()
    cost = cost or CostModel()
    verdict = "pass"
    timings: Dict[str, Dict[str, float]] = {}
    overhead = 0.0
    for strategy in strategies:
        built = build_workload(spec, cfg)
        device = Device(cfg, cost, parallel_sim=parallel_sim)
        rep = built.pipeline.execute(device, upload_mode="parallel",
                                     gather_mode=strategy)
        overhead = rep.overhead_ns
        for b, want in built.expected.items():
            got = built.pipeline.result(b)
            if got.shape != want.shape or not np.array_equal(got, want):
                verdict = "fail"
        timings[strategy] = {
            "cpu_to_dpu_ns": rep.cpu_to_dpu_ns,
            "kernel_ns": rep.kernel_ns,
            "dpu_to_cpu_ns": rep.dpu_to_cpu_ns,
            "host_post_ns": rep.host_post_ns,
            "total_ns": rep.total_ns,
        }
    config_echo = {
        "n_dpus": cfg.n_dpus, "tasklets": cfg.tasklets,
        "mram_bytes": cfg.mram_bytes, "wram_bytes": cfg.wram_bytes,
        "elems_per_dpu": spec.elems_per_dpu, "seed": spec.seed,
        "gemv_rows_per_dpu": spec.gemv_rows_per_dpu,
        "gemv_cols": spec.gemv_cols, "hist_bins": spec.hist_bins,
    }
    return BenchReport(version=REPORT_VERSION, workload=spec.name,
                       verdict=verdict, config=config_echo,
                       overhead_ns=overhead, timings=timings)


# --- CLI ---------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bench",
        description="Run one benchmark workload on the simulated device "
                    "and verify it against the host oracle.")
    ap.add_argument("--workload", required=True, choices=WORKLOAD_NAMES)
    ap.add_argument("--dpus", type=int, default=16)
    ap.add_argument("--elems-per-dpu", type=int, default=65536)
    ap.add_argument("--tasklets", type=int, default=11)
    ap.add_argument("--device-config", type=str, default=None,
                    help="JSON file overriding device and cost constants")
    ap.add_argument("--strategy", choices=("serial", "parallel", "both"),
                    default="both")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--report", type=str, default=None,
                    help="write the JSON report here (default: stdout)")
    ap.add_argument("--parallel-sim", action="store_true",
                    help="simulate cores on a thread pool (same results)")
    ap.add_argument("--loc", action="store_true",
                    help="print the pattern-call count table and exit")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    if args.loc:
        for row in loc_report():
            print(f"{row['workload']:<6} framework_calls="
                  f"{row['framework_calls']} baseline_loc="
                  f"{row['baseline_loc']}")
        return 0
    try:
        if args.device_config:
            with open(args.device_config, "r", encoding="utf-8") as fh:
                cfg, cost = config_from_json(fh.read())
            cfg = dataclasses.replace(cfg, n_dpus=args.dpus,
                                      tasklets=args.tasklets)
        else:
            cfg = DeviceConfig(n_dpus=args.dpus, tasklets=args.tasklets)
            cost = CostModel()
        cfg.validate()
        if args.dpus < 1 or args.elems_per_dpu < 1:
            raise ValueError("dpus and elems-per-dpu must be positive")
        spec = WorkloadSpec(name=args.workload, n_dpus=args.dpus,
                            elems_per_dpu=args.elems_per_dpu,
                            tasklets=args.tasklets, seed=args.seed)
        strategies = ("serial", "parallel") if args.strategy == "both" \
            else (args.strategy,)
        report = run_bench(spec, cfg, cost, strategies,
                           parallel_sim=args.parallel_sim)
    except (PimflowError, ValueError, OSError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    text = report.to_json()
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0 if report.verdict == "pass" else 1


if __name__ == "__main__":
    sys.exit(main())

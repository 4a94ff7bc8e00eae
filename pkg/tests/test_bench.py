import json
import os
import subprocess
import sys

import numpy as np
import pytest

from pimflow import accel, bench
from pimflow.bench import (BASELINE_LOC, BenchReport, REPORT_VERSION,
                           WORKLOAD_NAMES, WorkloadSpec, build_workload,
                           loc_report, run_bench, vecdot_pipeline)
from pimflow.errors import VectorTooLargeForWram
from pimflow.simdev import CostModel, Device, DeviceConfig

M32 = 1 << 32

TINY = dict(n_dpus=2, elems_per_dpu=128, tasklets=3, gemv_rows_per_dpu=8,
            gemv_cols=16)


def tiny_spec(name, **kw):
    return WorkloadSpec(name, **{**TINY, **kw})


def _expected(built):
    (value,) = built.expected.values()
    return value


def _input_data(built, idx=0):
    return built.pipeline.stages[0].args[idx].buffer.data


# --- accelerated inner loops ---------------------------------------------------

def test_compact_masked_matches_boolean_indexing(rng):
    vals = rng.integers(0, M32, 1000, dtype=np.uint32)
    mask = rng.random(1000) < 0.3
    out = np.zeros(1010, np.uint32)
    n = accel.compact_masked(vals, mask, out, 7)
    assert n == int(mask.sum())
    np.testing.assert_array_equal(out[7:7 + n], vals[mask])
    assert not out[:7].any()


def test_hist_accumulate_matches_bincount(rng):
    acc = rng.integers(0, 100, 64, dtype=np.uint32)
    samples = rng.integers(0, 64, 5000, dtype=np.uint32)
    want = acc + np.bincount(samples, minlength=64).astype(np.uint32)
    accel.hist_accumulate(acc, samples)
    np.testing.assert_array_equal(acc, want)


def test_group_dot_wraps_like_integer_dot(rng):
    g = rng.integers(0, M32, (20, 16), dtype=np.uint32)
    v = rng.integers(0, M32, 16, dtype=np.uint32)
    out = np.zeros(20, np.uint32)
    accel.group_dot_u32(g, v, out)
    want = [sum(int(a) * int(b) for a, b in zip(row, v)) % M32 for row in g]
    assert out.tolist() == want


def test_sum_wraps_at_32_bits(rng):
    x = rng.integers(0, M32, 4000, dtype=np.uint32)
    assert int(accel.sum_u32(x)) == sum(int(v) for v in x) % M32
    assert int(accel.sum_u32(np.zeros(0, np.uint32))) == 0


@pytest.mark.skipif(not accel.HAS_NUMBA, reason="numba not importable")
def test_both_flavours_agree(rng):
    vals = rng.integers(0, M32, 512, dtype=np.uint32)
    mask = rng.random(512) < 0.5
    out_a, out_b = np.zeros(512, np.uint32), np.zeros(512, np.uint32)
    assert accel._compact_masked_np(vals, mask, out_a, 0) == \
        accel._compact_masked_nb(vals, mask, out_b, 0)
    np.testing.assert_array_equal(out_a, out_b)

    acc_a = np.zeros(16, np.uint32)
    acc_b = np.zeros(16, np.uint32)
    samples = rng.integers(0, 16, 300, dtype=np.uint32)
    accel._hist_accumulate_np(acc_a, samples)
    accel._hist_accumulate_nb(acc_b, samples)
    np.testing.assert_array_equal(acc_a, acc_b)

    g = rng.integers(0, M32, (8, 8), dtype=np.uint32)
    v = rng.integers(0, M32, 8, dtype=np.uint32)
    out_a, out_b = np.zeros(8, np.uint32), np.zeros(8, np.uint32)
    accel._group_dot_u32_np(g, v, out_a)
    accel._group_dot_u32_nb(g, v, out_b)
    np.testing.assert_array_equal(out_a, out_b)

    assert accel._sum_u32_np(vals) == accel._sum_u32_nb(vals)


def test_pure_numpy_flag_forces_fallback():
    env = dict(os.environ, PIMFLOW_PURE_NUMPY="1")
    out = subprocess.run(
        [sys.executable, "-c",
         "import pimflow.accel as a; import numpy as np; "
         "print(a.USE_NUMBA, int(a.sum_u32(np.arange(10, dtype=np.uint32))))"],
        capture_output=True, text=True, env=env, check=True)
    assert out.stdout.split() == ["False", "45"]


# --- workload builders vs independent oracles ------------------------------------------

def test_va_expectation():
    built = build_workload(tiny_spec("VA", seed=3))
    a, b = _input_data(built, 0), _input_data(built, 1)
    want = ((a.astype(np.uint64) + b) % M32).astype(np.uint32)
    np.testing.assert_array_equal(_expected(built), want)


def test_sel_expectation():
    built = build_workload(tiny_spec("SEL", seed=3))
    x = _input_data(built)
    np.testing.assert_array_equal(_expected(built), x[x % 2 == 0])


def test_uni_expectation_is_unique_of_sorted_input():
    built = build_workload(tiny_spec("UNI", seed=3))
    x = _input_data(built)
    assert (np.diff(x.astype(np.int64)) >= 0).all()  # sorted by construction
    np.testing.assert_array_equal(_expected(built), np.unique(x))


def test_red_expectation():
    built = build_workload(tiny_spec("RED", seed=3))
    x = _input_data(built, 1)  # the accumulator comes first
    assert _expected(built).tolist() == [sum(int(v) for v in x) % M32]


def test_gemv_expectation():
    built = build_workload(tiny_spec("GEMV", seed=3))
    mat = _input_data(built)
    vec = built.pipeline.stages[0].args[1].buffer.data
    rows = mat.reshape(-1, len(vec))
    want = [sum(int(a) * int(b) for a, b in zip(r, vec)) % M32 for r in rows]
    assert _expected(built).tolist() == want


def test_hst_expectation():
    built = build_workload(tiny_spec("HST-S", seed=3, hist_bins=16))
    x = _input_data(built, 1)
    want = [int((x == b).sum()) for b in range(16)]
    assert _expected(built).tolist() == want


def test_unknown_workload_rejected():
    with pytest.raises(ValueError):
        build_workload(WorkloadSpec("NOPE"))


def test_gemv_vector_must_fit_wram():
    with pytest.raises(VectorTooLargeForWram):
        build_workload(tiny_spec("GEMV", gemv_cols=8192))


def test_framework_call_counts():
    built = build_workload(tiny_spec("VA"))
    assert built.framework_calls == 3  # one stage, one fetch, one execute
    for row in loc_report():
        assert row["framework_calls"] < row["baseline_loc"]
        assert row["workload"] in WORKLOAD_NAMES
    assert set(BASELINE_LOC) == set(WORKLOAD_NAMES)


def test_vecdot_end_to_end(tiny_device, rng):
    a = rng.integers(0, M32, 200, dtype=np.uint32)
    b = rng.integers(0, M32, 200, dtype=np.uint32)
    p, total = vecdot_pipeline(a, b)
    p.execute(tiny_device)
    want = sum(int(x) * int(y) % M32 for x, y in zip(a, b)) % M32
    assert p.result(total).tolist() == [want]


# --- run_bench ---------------------------------------------------------------------

def test_run_bench_passes_and_times_each_strategy():
    rep = run_bench(tiny_spec("SEL"))
    assert rep.version == REPORT_VERSION
    assert rep.workload == "SEL"
    assert rep.verdict == "pass"
    assert set(rep.timings) == {"serial", "parallel"}
    for t in rep.timings.values():
        assert set(t) == {"cpu_to_dpu_ns", "kernel_ns", "dpu_to_cpu_ns",
                          "host_post_ns", "total_ns"}
        assert t["total_ns"] == pytest.approx(
            t["cpu_to_dpu_ns"] + t["kernel_ns"] + t["dpu_to_cpu_ns"] +
            t["host_post_ns"])
    assert rep.overhead_ns > 0
    assert rep.config["n_dpus"] == 2 and rep.config["seed"] == 0


def test_run_bench_single_strategy():
    rep = run_bench(tiny_spec("RED"), strategies=("parallel",))
    assert list(rep.timings) == ["parallel"]
    assert rep.verdict == "pass"


@pytest.mark.parametrize("name", WORKLOAD_NAMES)
def test_every_workload_passes_at_desk_scale(name):
    assert run_bench(tiny_spec(name), strategies=("serial",)).verdict == "pass"


def test_report_json_round_trip():
    rep = run_bench(tiny_spec("VA"), strategies=("serial",))
    text = rep.to_json()
    assert text.endswith("\n")
    again = BenchReport.from_json(text)
    assert again == rep
    assert again.to_json() == text


# --- CLI ---------------------------------------------------------------------------

CLI = ["--workload", "VA", "--dpus", "2", "--elems-per-dpu", "128",
       "--tasklets", "3"]


def test_cli_writes_passing_report(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert bench.main(CLI + ["--report", str(out), "--strategy", "serial",
                             "--seed", "5"]) == 0
    rep = json.loads(out.read_text())
    assert rep["verdict"] == "pass"
    assert rep["config"]["seed"] == 5
    assert list(rep["timings"]) == ["serial"]


def test_cli_defaults_to_stdout(capsys):
    assert bench.main(CLI + ["--strategy", "parallel"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["verdict"] == "pass"
    assert rep["version"] == REPORT_VERSION


def test_cli_loc_table(capsys):
    assert bench.main(["--workload", "VA", "--loc"]) == 0
    out = capsys.readouterr().out
    assert all(name in out for name in WORKLOAD_NAMES)


def test_cli_config_file(tmp_path, capsys):
    cfgf = tmp_path / "cfg.json"
    cfgf.write_text(json.dumps(
        {"device": {"mram_bytes": 1 << 20},
         "cost": {"cycles_per_invocation_default": 40}}))
    assert bench.main(CLI + ["--strategy", "serial",
                             "--device-config", str(cfgf)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["config"]["mram_bytes"] == 1 << 20


@pytest.mark.parametrize("extra", [
    ["--device-config", "/nonexistent/cfg.json"],
    ["--tasklets", "0"],
    ["--elems-per-dpu", "0"],
])
def test_cli_configuration_errors(extra, capsys):
    assert bench.main(CLI[:2] + extra) == 2
    assert "configuration error" in capsys.readouterr().err


def test_cli_rejects_malformed_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert bench.main(CLI + ["--device-config", str(bad)]) == 2
    bad.write_text(json.dumps({"device": {"warp_drive": 9}}))
    assert bench.main(CLI + ["--device-config", str(bad)]) == 2


def test_cli_signals_oracle_mismatch(monkeypatch, capsys):
    failing = BenchReport(version=REPORT_VERSION, workload="VA",
                          verdict="fail", config={}, overhead_ns=1.0)
    monkeypatch.setattr(bench, "run_bench",
                        lambda *a, **k: failing)
    assert bench.main(CLI) == 1


def test_cli_module_entry_point():
    out = subprocess.run(
        [sys.executable, "-m", "pimflow.bench", "--workload", "RED",
         "--dpus", "2", "--elems-per-dpu", "64", "--tasklets", "2",
         "--strategy", "serial"],
        capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert json.loads(out.stdout)["verdict"] == "pass"

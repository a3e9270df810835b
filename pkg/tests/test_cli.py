"""Command-line driver: verbs, artifacts, exit codes."""

from __future__ import annotations

import numpy as np
import pytest

from tilec.cli import main
from tilec.ir import ElemType, FunctionBuilder, KernelModule, PtrType
from tilec.oracle import philox, rand_f16
from tilec.sim import dump_tensor, load_tensor
from tilec.textio import print_module

F16 = ElemType.f16
F32 = ElemType.f32


@pytest.fixture(autouse=True)
def _isolate(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    yield


def _write_scale_kernel(path) -> None:
    fb = FunctionBuilder("scale", [("X", PtrType(F16)), ("Y", PtrType(F16))], num_warps=4)
    x_arg, y_arg = fb.fn.args
    c0 = fb.constant(0)
    c1 = fb.constant(1)
    c64 = fb.constant(64)
    xp = fb.make_tensor_ptr(x_arg, [c64, c64], [c64, c1], [c0, c0], (64, 64), (1, 0))
    x = fb.load(xp)
    y = fb.binary("arith.mulf", x, fb.splat(fb.constant(2.0, F16), (64, 64)))
    yp = fb.make_tensor_ptr(y_arg, [c64, c64], [c64, c1], [c0, c0], (64, 64), (1, 0))
    fb.store(yp, y)
    fb.ret()
    path.write_text(print_module(KernelModule((fb.build(),))))


def test_compile_writes_level_artifact(tmp_path, capsys):
    assert main(["compile", "gemm_256"]) == 0
    out = capsys.readouterr().out
    assert "wrote" in out and "gemm_256.vasm" in out
    assert (tmp_path / "gemm_256.vasm").read_text().startswith("vprogram @gemm_256")


def test_compile_dump_all(tmp_path, capsys):
    assert main(["compile", "gemm_256", "--dump-after", "all"]) == 0
    for suffix in ("layouts.ttir", "distribute.ttir", "match.ttir", "vasm"):
        assert (tmp_path / f"gemm_256.{suffix}").exists(), suffix
    assert len(capsys.readouterr().out.splitlines()) == 4


def test_compile_hint_changes_root(tmp_path):
    assert main(["compile", "gemm_256", "--level", "workgroup",
                 "--hint", "dot0=horizontal", "--dump-after", "layouts"]) == 0
    text = (tmp_path / "gemm_256.layouts.ttir").read_text()
    assert "warpsPerCTA = [32, 1]" in text


def test_compile_respects_dump_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("TILEC_DUMP_DIR", str(tmp_path / "artifacts"))
    assert main(["compile", "fa2_d64", "--dump-after", "layouts"]) == 0
    assert (tmp_path / "artifacts" / "fa2_d64.layouts.ttir").exists()


def test_run_fixture_writes_buffers(tmp_path, capsys):
    assert main(["run", "paged_wg"]) == 0
    out = capsys.readouterr().out
    for buf in ("Q", "KB", "VB", "BT", "O"):
        assert (tmp_path / f"paged_wg.{buf}.tnsr").exists()
        assert f"paged_wg.{buf}.tnsr" in out
    o, elem = load_tensor(str(tmp_path / "paged_wg.O.tnsr"))
    assert o.shape == (1, 64) and elem == F32


def test_run_path_kernel_with_inputs(tmp_path):
    _write_scale_kernel(tmp_path / "scale.ttir")
    x = rand_f16(philox(5), 64, 64)
    dump_tensor(str(tmp_path / "x.tnsr"), x, F16)
    dump_tensor(str(tmp_path / "y.tnsr"), np.zeros((64, 64), dtype=np.float32), F16)
    assert main(["run", "scale.ttir", "--input", "X=x.tnsr",
                 "--input", "Y=y.tnsr", "--grid", "1,1"]) == 0
    y, _ = load_tensor(str(tmp_path / "scale.Y.tnsr"))
    want = (x.astype(np.float16) * np.float16(2.0)).astype(np.float32)
    assert np.array_equal(y, want)


def test_run_path_kernel_requires_all_inputs(tmp_path, capsys):
    _write_scale_kernel(tmp_path / "scale.ttir")
    dump_tensor(str(tmp_path / "x.tnsr"), np.zeros((64, 64)), F16)
    assert main(["run", "scale.ttir", "--input", "X=x.tnsr"]) == 3
    assert "Y" in capsys.readouterr().err


def test_check_fixture_passes(capsys):
    assert main(["check", "gemm_256", "--level", "intrinsic"]) == 0
    out = capsys.readouterr().out
    assert "gemm_256 C: max rel err" in out
    assert "PASS" in out and "FAIL" not in out


def test_check_needs_fixture(tmp_path, capsys):
    _write_scale_kernel(tmp_path / "scale.ttir")
    assert main(["check", "scale.ttir"]) == 3


def test_check_honors_seed(capsys):
    assert main(["check", "fa2_d64", "--seed", "31337", "--level", "workgroup"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_stats_output(capsys):
    assert main(["stats", "gemm_256"]) == 0
    out = capsys.readouterr().out
    assert "loads=3" in out
    assert "stores=16" in out
    assert "mmas=32" in out
    assert "bytes_loaded=49152" in out


def test_style_flag_switches_widths(tmp_path):
    assert main(["compile", "gemm_256", "--dump-after", "visa"]) == 0
    simt_text = (tmp_path / "gemm_256.vasm").read_text()
    assert "block2d_load.v64i16" in simt_text
    assert main(["compile", "gemm_256", "--dump-after", "visa", "--style", "simd"]) == 0
    assert "block2d_load.v512i32" in (tmp_path / "gemm_256.vasm").read_text()


def test_target_file_flag(tmp_path):
    (tmp_path / "tiny.target").write_text("max_load=16x16\nmax_dot=8x16x16\n")
    assert main(["compile", "gemm_256", "--target", "tiny.target",
                 "--dump-after", "match"]) == 0
    loads = [l for l in (tmp_path / "gemm_256.match.ttir").read_text().splitlines()
             if "tt.load" in l]
    assert loads
    assert all("tensor<16x16xf16>" in l for l in loads)  # split to the new max


def test_usage_errors_exit_3(capsys):
    assert main(["compile", "nosuch_kernel"]) == 3
    assert main(["compile", "gemm_256", "--hint", "dot=horizontal"]) == 3
    assert main(["run", "gemm_256", "--grid", "zero,one"]) == 3
    assert main(["compile", "gemm_256", "--level", "bogus"]) == 3
    assert main(["compile", "gemm_256", "--dump-after", "frontend"]) == 3
    capsys.readouterr()


def test_parse_failure_exits_1(tmp_path, capsys):
    (tmp_path / "broken.ttir").write_text("tt.func public @f() attributes {num_warps = 1} {\n  %0 = ???\n}")
    assert main(["compile", "broken.ttir"]) == 1
    assert "error" in capsys.readouterr().err


def test_layout_conflict_exits_1(tmp_path, capsys):
    fb = FunctionBuilder("selfdot", [("X", PtrType(F16)), ("O", PtrType(F32))], num_warps=4)
    x_arg, o_arg = fb.fn.args
    c0 = fb.constant(0)
    c1 = fb.constant(1)
    c64 = fb.constant(64)
    xp = fb.make_tensor_ptr(x_arg, [c64, c64], [c64, c1], [c0, c0], (64, 64), (1, 0))
    x = fb.load(xp)
    d = fb.dot(x, x, fb.splat(fb.constant(0.0, F32), (64, 64)))
    op = fb.make_tensor_ptr(o_arg, [c64, c64], [c64, c1], [c0, c0], (64, 64), (1, 0))
    fb.store(op, d)
    fb.ret()
    (tmp_path / "selfdot.ttir").write_text(print_module(KernelModule((fb.build(),))))
    assert main(["compile", "selfdot.ttir"]) == 1
    assert "conflicting layouts" in capsys.readouterr().err

"""Virtual ISA lowering: widths, mnemonics, stats, target profiles."""

from __future__ import annotations

from dataclasses import replace
from importlib.resources import files

import pytest

from conftest import flat_instrs
from tilec.kernels import build
from tilec.passes import compile_kernel
from tilec.visa import (
    PVC,
    LoweringError,
    Stats,
    TargetConfig,
    VOpcode,
    count_stats,
    disassemble,
    lower,
    parse_target,
)


def test_pvc_profile():
    assert PVC.max_load == (32, 32)
    assert PVC.max_dot == (8, 16, 16)
    assert PVC.threads_per_warp == 16
    assert PVC.slm_bytes == 131072
    assert PVC.style == "simt"


def test_target_validation():
    with pytest.raises(ValueError):
        TargetConfig(style="scalar")
    with pytest.raises(ValueError):
        TargetConfig(threads_per_warp=0)


def test_parse_shipped_target_file():
    text = files("tilec").joinpath("targets/pvc.target").read_text()
    t = parse_target(text, name="pvc")
    assert t.max_load == (32, 32)
    assert t.max_dot == (8, 16, 16)
    assert t.threads_per_warp == 16
    assert t.slm_bytes == 131072
    assert t.style == "simd"


def test_parse_target_errors():
    with pytest.raises(ValueError):
        parse_target("max_load=32")
    with pytest.raises(ValueError):
        parse_target("clock=9000")
    with pytest.raises(ValueError):
        parse_target("threads_per_warp=many")


def test_lower_requires_intrinsic_level():
    res = compile_kernel(build("gemm_256"), to_level="warp")
    with pytest.raises(LoweringError):
        lower(res.distribute, PVC)


def test_gemm_mnemonics(gemm_compiled):
    text = disassemble(gemm_compiled.vprog)
    assert "block2d_load.v64i16" in text  # A tile, one i16 unit per element
    assert "block2d_load.v32i32" in text  # B tile, f16 pair packed per unit
    assert "dpas.v8f32.v8i16.v8i32" in text
    assert "block2d_store.v8i32" in text


def test_simd_style_widths(gemm_compiled):
    simd = lower(gemm_compiled.match, replace(PVC, style="simd"))
    text = disassemble(simd)
    assert simd.style == "simd"
    assert "block2d_load.v512i32" in text  # whole-warp width for the A tile


def test_gemm_stats(gemm_compiled):
    stats = count_stats(gemm_compiled.vprog)
    assert stats == Stats(loads=3, stores=16, mmas=32, barriers=0,
                          bytes_loaded=49152, slm_bytes_used=0)
    assert stats.as_lines()[0] == "loads=3"
    assert stats.as_lines()[4] == "bytes_loaded=49152"


def test_stats_count_loop_trips(gemm_compiled):
    # 8 k-steps: one 32x32 A tile and two 32x32 B tiles of f16 per step
    stats = count_stats(gemm_compiled.vprog)
    assert stats.bytes_loaded == 8 * 3 * 32 * 32 * 2


def test_paged_warp_uses_slm_and_barrier():
    res = compile_kernel(build("paged_warp"))
    stats = count_stats(res.vprog)
    assert stats.slm_bytes_used == 64 * 2  # one (1, 64) f16 staging tile
    assert stats.barriers >= 1
    ops = [i.opcode for i in flat_instrs(res.vprog)]
    assert VOpcode.slm_alloc in ops
    assert VOpcode.cross_warp_reduce in ops


def test_program_metadata(gemm_compiled):
    prog = gemm_compiled.vprog
    assert prog.name == "gemm_256"
    assert prog.num_warps == 32
    assert prog.style == "simt"
    assert prog.threads_per_warp == 16
    assert [n for n, _ in prog.args] == ["A", "B", "C"]


def test_disassemble_structure(gemm_compiled):
    text = disassemble(gemm_compiled.vprog)
    assert text.startswith("vprogram @gemm_256 style=simt tpw=16 num_warps=32")
    assert " = for %" in text  # the k-loop keeps its bounds and carried regs
    assert text.rstrip().endswith("}")
    assert "  ret" in text

"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import pytest

from tilec.ir import KernelFn, KernelModule, Operation, walk_fn_ops
from tilec.kernels import build, make_problem, suite
from tilec.passes import CompileResult, compile_kernel
from tilec.sim import DeviceMemory, RunTrace, run
from tilec.textio import print_module
from tilec.visa import VInstr, VOpcode, VProgram


@pytest.fixture(scope="session")
def gemm_compiled() -> CompileResult:
    return compile_kernel(build("gemm_256"))


@pytest.fixture(scope="session")
def fa2_compiled() -> CompileResult:
    return compile_kernel(build("fa2_d64"))


@pytest.fixture(scope="session")
def fixtures():
    return suite()


def fn_text(fn: KernelFn) -> str:
    return print_module(KernelModule((fn,)))


def flat_instrs(prog: VProgram) -> list[VInstr]:
    out: list[VInstr] = []

    def go(instrs: list[VInstr]) -> None:
        for i in instrs:
            out.append(i)
            if i.body is not None:
                go(i.body)

    go(prog.body)
    return out


def load_base(fn: KernelFn, load: Operation) -> str:
    """Name of the function argument whose buffer a tt.load reads."""
    arg_init: dict[int, object] = {}
    for op in walk_fn_ops(fn):
        if op.kind == "scf.for":
            for init, arg in zip(op.operands[3:], op.regions[0].args[1:]):
                arg_init[id(arg)] = init
    producer: dict[int, Operation] = {}
    for op in walk_fn_ops(fn):
        for r in op.results:
            producer[id(r)] = op
    v = load.operands[0]
    for _ in range(64):
        if id(v) in arg_init:
            v = arg_init[id(v)]
        elif id(v) in producer:
            op = producer[id(v)]
            if op.kind in ("tt.advance", "tt.make_tensor_ptr", "tt.extract"):
                v = op.operands[0]
            elif op.kind == "scf.for":
                slot = list(op.results).index(v)
                v = op.operands[3 + slot]
            else:
                raise AssertionError(f"cannot trace pointer through {op.kind}")
        else:
            return v.name
    raise AssertionError("pointer chain too deep")


def ops_of(fn: KernelFn, kind: str) -> list[Operation]:
    return [op for op in walk_fn_ops(fn) if op.kind == kind]


def run_fixture(name: str, level: str, seed: int | None = None,
                trace: RunTrace | None = None,
                wg_order: tuple[int, ...] | None = None) -> tuple[DeviceMemory, object]:
    fx = suite()[name]
    prob = make_problem(fx, seed)
    res = compile_kernel(build(name), to_level=level)
    launch = prob.launch
    if wg_order is not None:
        from dataclasses import replace

        launch = replace(launch, wg_order=wg_order)
    got = run(res.at_level(level), launch, prob.mem, trace=trace)
    return got, prob


def exec_widths(prog: VProgram) -> list[tuple[VOpcode, str, int, bool]]:
    """(opcode, op, width_bytes, lane_distributed) for execution instrs."""
    from tilec.visa import EXECUTION_OPCODES

    return [(i.opcode, i.op, i.width_bytes, i.lane_distributed)
            for i in flat_instrs(prog) if i.opcode in EXECUTION_OPCODES]

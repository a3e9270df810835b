"""Lowering passes.

Three passes carry a kernel from workgroup-shaped tiles down to
machine-sized ones:

  assign_layouts      annotate every tile with a layout encoding describing
                      how it is split across the workgroup's warps
  distribute_to_warps shrink types to one warp's share and offset block
                      pointers by the warp's tile origin
  match_target_size   split tiles into pieces the target's load and dot
                      units accept, chaining dots over the contraction dim

Warp-level source (fn.warp_level) is already written per warp, so the first
two passes pass it through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

from .ir import (
    ELEMENTWISE_FLOAT,
    ELEMENTWISE_INT,
    Diagnostic,
    ElemType,
    FunctionBuilder,
    KernelFn,
    Operation,
    PtrType,
    Region,
    TensorType,
    TilingHint,
    Type,
    Value,
    build_defuse,
    verify_or_raise,
    walk_fn_ops,
)
from .layouts import (
    BlockedEncoding,
    DotOperandEncoding,
    LayoutError,
    SliceEncoding,
    equivalent_blocked,
    tile_root,
)
from .visa import PVC, TargetConfig, VProgram, lower


class PassError(RuntimeError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


def _fail(fn: KernelFn, message: str, op: Operation | None = None) -> PassError:
    return PassError([Diagnostic(message, fn.name, op)])


# --------------------------------------------------------------------------
# workload classification

_CHAIN_OPS = (
    ELEMENTWISE_FLOAT
    | ELEMENTWISE_INT
    | {"tt.reduce", "tt.convert", "tt.expand_dims", "tt.broadcast", "tt.splat"}
)


@dataclass(frozen=True)
class Workload:
    kind: str  # "gemm" | "attention" | "reduction" | "elementwise"
    root: Operation | None
    hint: str | None  # tiling hint for the root tile


_DEFAULT_HINT = {"gemm": None, "attention": "horizontal", "reduction": "horizontal", "elementwise": None}


def _reachable_values(fn: KernelFn, start: Value) -> set[int]:
    """Ids of values data-reachable from start through tile-shaping ops."""
    du = build_defuse(fn)
    seen: set[int] = set()
    frontier = [start]
    while frontier:
        v = frontier.pop()
        if id(v) in seen:
            continue
        seen.add(id(v))
        for linked in du.chain(v):
            if id(linked) not in seen:
                frontier.append(linked)
        for u in du.users_of(v):
            if u.kind in _CHAIN_OPS:
                frontier.extend(u.results)
    return seen


def classify_workload(fn: KernelFn) -> Workload:
    """Name the kernel's compute pattern and pick the op whose tile anchors
    layout assignment: the final dot of a dot chain, the last unchained dot,
    the last reduce, or the last stored tile."""
    dots = [op for op in walk_fn_ops(fn) if op.kind == "tt.dot"]
    if dots:
        reach = {id(d): _reachable_values(fn, d.results[0]) for d in dots}
        chained = any(
            id(a.operands[i]) in reach[id(b)]
            for a in dots
            for b in dots
            if a is not b
            for i in (0, 1)
        )
        if not chained:
            root = dots[-1]
            return Workload("gemm", root, root.attrs.get("tiling") or _DEFAULT_HINT["gemm"])
        final = [
            d
            for d in dots
            if not any(id(o.operands[i]) in reach[id(d)] for o in dots if o is not d for i in (0, 1))
        ]
        if len(final) != 1:
            raise _fail(fn, f"attention pattern needs one final dot, found {len(final)}")
        root = final[0]
        return Workload("attention", root, root.attrs.get("tiling") or _DEFAULT_HINT["attention"])
    reduces = [op for op in walk_fn_ops(fn) if op.kind == "tt.reduce" and not op.attrs.get("cross_warp")]
    if reduces:
        root = reduces[-1]
        return Workload("reduction", root, _DEFAULT_HINT["reduction"])
    stores = [op for op in walk_fn_ops(fn) if op.kind == "tt.store"]
    root = stores[-1] if stores else None
    return Workload("elementwise", root, _DEFAULT_HINT["elementwise"])


# --------------------------------------------------------------------------
# function rebuilding

def _clone_fn(
    fn: KernelFn,
    type_of: Callable[[Value], Type] | None = None,
    attrs_of: Callable[[Operation], dict[str, Any]] | None = None,
    level: str | None = None,
) -> KernelFn:
    """Structure-preserving clone with per-value retyping and attr rewriting."""
    tmap = type_of or (lambda v: v.type)
    amap = attrs_of or (lambda op: dict(op.attrs))
    new = KernelFn(
        fn.name,
        [(a.name, tmap(a)) for a in fn.args],
        num_warps=fn.num_warps,
        warp_level=fn.warp_level,
        level=level or fn.level,
    )
    vmap: dict[int, Value] = {id(a): na for a, na in zip(fn.args, new.args)}

    def clone_region(old: Region, tgt: Region) -> None:
        for op in old.ops:
            regions = []
            for r in op.regions:
                nr = Region([Value(tmap(a)) for a in r.args])
                for a, na in zip(r.args, nr.args):
                    vmap[id(a)] = na
                regions.append(nr)
            nop = Operation(
                op.kind,
                [vmap[id(v)] for v in op.operands],
                amap(op),
                [tmap(r) for r in op.results],
                regions,
            )
            for a in (a for r in regions for a in r.args):
                a.producer = nop
            for r, nr_ in zip(op.results, nop.results):
                vmap[id(r)] = nr_
            tgt.ops.append(nop)
            for r, nr2 in zip(op.regions, regions):
                clone_region(r, nr2)

    clone_region(fn.body, new.body)
    return new


def apply_tiling_hints(fn: KernelFn, hints: dict[int, str]) -> KernelFn:
    """Override the tiling attr of the i-th dot (walk order) per ``hints``."""
    dots = [op for op in walk_fn_ops(fn) if op.kind == "tt.dot"]
    for i, hint in hints.items():
        if not (0 <= i < len(dots)):
            raise _fail(fn, f"tiling hint names dot {i} but the kernel has {len(dots)} dots")
        if hint not in tuple(TilingHint):
            raise _fail(fn, f"unknown tiling hint {hint!r}")
    index = {id(d): i for i, d in enumerate(dots)}

    def attrs_of(op: Operation) -> dict[str, Any]:
        attrs = dict(op.attrs)
        if op.kind == "tt.dot" and index[id(op)] in hints:
            attrs["tiling"] = hints[index[id(op)]]
        return attrs

    return _clone_fn(fn, attrs_of=attrs_of)


# --------------------------------------------------------------------------
# layout assignment

# proposal priorities: pinned seeds beat structural rules beat equality rules
_SEED, _STRUCT, _EQ = 3, 2, 1


def _carries_layout(t: Type) -> bool:
    if isinstance(t, TensorType):
        return t.rank >= 1
    return isinstance(t, PtrType) and t.is_block


def _block_shape(v: Value) -> tuple[int, ...]:
    t = v.type
    tt = t.pointee if isinstance(t, PtrType) else t
    return tt.shape


def _insert_dim(enc: BlockedEncoding, axis: int) -> BlockedEncoding:
    size = enc.size_per_warp[:axis] + (1,) + enc.size_per_warp[axis:]
    warps = enc.warps_per_cta[:axis] + (1,) + enc.warps_per_cta[axis:]
    order = tuple(d + 1 if d >= axis else d for d in enc.order) + (axis,)
    return BlockedEncoding(size, warps, order)


_Edge = tuple[Value, Callable[[Any], Any], int, Operation]


def _layout_edges(fn: KernelFn) -> dict[int, list[_Edge]]:
    edges: dict[int, list[_Edge]] = {}

    def add(src: Value, dst: Value, xf: Callable[[Any], Any], prio: int, op: Operation) -> None:
        if _carries_layout(src.type) and _carries_layout(dst.type):
            edges.setdefault(id(src), []).append((dst, xf, prio, op))

    def eq(a: Value, b: Value, op: Operation, prio: int = _EQ) -> None:
        ident = lambda e: e
        add(a, b, ident, prio, op)
        add(b, a, ident, prio, op)

    for op in walk_fn_ops(fn):
        k = op.kind
        if k in ("tt.load", "tt.advance", "tt.convert", "tt.broadcast", "tt.extract", "tt.glue"):
            if op.results:
                for v in op.operands:
                    eq(v, op.results[0], op)
        elif k == "tt.store":
            eq(op.operands[0], op.operands[1], op)
        elif k == "tt.dot":
            a, b, c = op.operands
            r = op.results[0]
            add(r, a, lambda e: DotOperandEncoding(0, e), _STRUCT, op)
            add(r, b, lambda e: DotOperandEncoding(1, e), _STRUCT, op)
            eq(r, c, op, _STRUCT)
            add(a, r, lambda e: e.parent if isinstance(e, DotOperandEncoding) and e.op_idx == 0 else None, _STRUCT, op)
            add(b, r, lambda e: e.parent if isinstance(e, DotOperandEncoding) and e.op_idx == 1 else None, _STRUCT, op)
        elif k == "tt.reduce":
            if op.attrs.get("cross_warp"):
                eq(op.operands[0], op.results[0], op)
            else:
                axis = op.attrs["axis"]
                src, r = op.operands[0], op.results[0]
                add(src, r, lambda e, d=axis: SliceEncoding(d, e), _STRUCT, op)
                add(r, src, lambda e, d=axis: e.parent if isinstance(e, SliceEncoding) and e.dim == d else None, _STRUCT, op)
        elif k == "tt.expand_dims":
            axis = op.attrs["axis"]
            src, r = op.operands[0], op.results[0]

            def up(e: Any, d: int = axis) -> Any:
                if isinstance(e, SliceEncoding) and e.dim == d:
                    return e.parent
                if isinstance(e, BlockedEncoding):
                    return _insert_dim(e, d)
                return None

            add(src, r, up, _STRUCT, op)
            add(r, src, lambda e, d=axis: SliceEncoding(d, e), _STRUCT, op)
        elif k in ELEMENTWISE_FLOAT or k in ELEMENTWISE_INT:
            if op.results and _carries_layout(op.results[0].type):
                for v in op.operands:
                    eq(v, op.results[0], op)
        elif k == "scf.for":
            body = op.regions[0]
            yields = body.ops[-1].operands if body.ops and body.ops[-1].kind == "scf.yield" else ()
            for i, init in enumerate(op.operands[3:]):
                group = [init, body.args[1 + i], op.results[i]]
                if i < len(yields):
                    group.append(yields[i])
                for x in group:
                    for y in group:
                        if x is not y:
                            add(x, y, lambda e: e, _EQ, op)
    return edges


class _LayoutState:
    def __init__(self, fn: KernelFn):
        self.fn = fn
        self.enc: dict[int, tuple[int, Any]] = {}
        self.diags: list[Diagnostic] = []

    def propose(self, v: Value, enc: Any, prio: int, op: Operation | None) -> bool:
        shape = _block_shape(v)
        try:
            new_eq = equivalent_blocked(enc, shape)
        except LayoutError as e:
            self.diags.append(Diagnostic(f"layout proposal rejected: {e}", self.fn.name, op))
            return False
        cur = self.enc.get(id(v))
        if cur is None:
            self.enc[id(v)] = (prio, enc)
            return True
        cur_prio, cur_enc = cur
        cur_eq = equivalent_blocked(cur_enc, shape)
        if new_eq == cur_eq:
            if prio > cur_prio:
                self.enc[id(v)] = (prio, enc)
                return True
            return False
        if prio > cur_prio:
            self.enc[id(v)] = (prio, enc)
            return True
        if prio == cur_prio:
            self.diags.append(
                Diagnostic(
                    f"conflicting layouts for {v.type}: {cur_enc} partitions as {cur_eq}, "
                    f"{enc} partitions as {new_eq}",
                    self.fn.name,
                    op,
                )
            )
        return False


def assign_layouts(fn: KernelFn) -> KernelFn:
    """Annotate every tile-typed value with a layout encoding.

    The anchor tile gets a root Blocked layout sized by the tiling hint; dot
    operands, reduction results, and broadcast sources receive structurally
    derived encodings; everything else inherits across value equalities.
    Tiles the flow never reaches default to a warp-replicated layout."""
    if fn.warp_level:
        return _clone_fn(fn)
    if fn.level != "workgroup":
        raise _fail(fn, f"layout assignment expects workgroup-level input, got {fn.level!r}")

    work = classify_workload(fn)
    state = _LayoutState(fn)
    edges = _layout_edges(fn)
    worklist: list[Value] = []

    def seed(v: Value, enc: Any) -> None:
        if state.propose(v, enc, _SEED, work.root):
            worklist.append(v)

    if work.root is not None:
        if work.kind in ("gemm", "attention"):
            root_enc = tile_root(_block_shape(work.root.results[0]), fn.num_warps, work.hint)
            seed(work.root.results[0], root_enc)
            seed(work.root.operands[0], DotOperandEncoding(0, root_enc))
            seed(work.root.operands[1], DotOperandEncoding(1, root_enc))
        elif work.kind == "reduction":
            src = work.root.operands[0]
            seed(src, tile_root(_block_shape(src), fn.num_warps, work.hint))
        else:
            value = work.root.operands[1]
            if _carries_layout(value.type):
                seed(value, tile_root(_block_shape(value), fn.num_warps, work.hint))

    while worklist:
        v = worklist.pop(0)
        got = state.enc.get(id(v))
        if got is None:
            continue
        _, form = got
        for dst, xf, prio, op in edges.get(id(v), ()):
            out = xf(form)
            if out is not None and state.propose(dst, out, prio, op):
                worklist.append(dst)

    if state.diags:
        raise PassError(state.diags)

    # tiles the flow never reached: replicate across warps, unless they take
    # part in a dot or store (those must be partitioned deliberately)
    du = build_defuse(fn)
    for v in du.values():
        if not _carries_layout(v.type) or id(v) in state.enc:
            continue
        for u in du.users_of(v):
            if u.kind in ("tt.dot", "tt.store"):
                raise _fail(fn, f"layout assignment left a {u.kind} operand uncovered", u)
        prod = du.producer_of(v)
        if isinstance(prod, Operation) and prod.kind == "tt.dot":
            raise _fail(fn, "layout assignment left a tt.dot result uncovered", prod)
        shape = _block_shape(v)
        rank = len(shape)
        order = tuple(range(rank - 1, -1, -1))
        state.enc[id(v)] = (_EQ, BlockedEncoding(shape, (1,) * rank, order))

    # loop-carried slots may settle on distinct equivalent aliases; a loop's
    # init, region arg, and result share one textual type, so unify on the
    # init's form (outer loops first, since a result can seed a later init)
    for op in walk_fn_ops(fn):
        if op.kind != "scf.for":
            continue
        args = op.regions[0].args[1:]
        for init, arg, res in zip(op.operands[3:], args, op.results):
            if _carries_layout(init.type) and id(init) in state.enc:
                state.enc[id(arg)] = state.enc[id(res)] = state.enc[id(init)]

    def type_of(v: Value) -> Type:
        if not _carries_layout(v.type):
            return v.type
        enc = state.enc[id(v)][1]
        if isinstance(v.type, PtrType):
            pt = v.type.pointee
            return PtrType(TensorType(pt.shape, pt.elem, enc))
        return TensorType(v.type.shape, v.type.elem, enc)

    out = _clone_fn(fn, type_of=type_of)
    verify_or_raise(out)
    return out


# --------------------------------------------------------------------------
# warp distribution

def _enc_of(v: Value) -> Any:
    t = v.type
    tt = t.pointee if isinstance(t, PtrType) else t
    return tt.encoding


def distribute_to_warps(fn: KernelFn) -> KernelFn:
    """Retype every tile to one warp's share and add the warp's tile origin
    to block pointer offsets.  Dims where the warp grid overshoots the tile
    count wrap around, replicating the tile across those warps."""
    if fn.warp_level:
        return _clone_fn(fn, level="warp")
    if fn.level != "workgroup":
        raise _fail(fn, f"warp distribution expects workgroup-level input, got {fn.level!r}")

    def per_warp(t: Type) -> Type:
        tt = t.pointee if isinstance(t, PtrType) else t
        if not isinstance(tt, TensorType) or tt.rank == 0:
            return t
        if tt.encoding is None:
            raise _fail(fn, f"distribution needs encodings; {tt} has none (run layout assignment)")
        eq = equivalent_blocked(tt.encoding, tt.shape)
        nt = TensorType(eq.size_per_warp, tt.elem, tt.encoding)
        return PtrType(nt) if isinstance(t, PtrType) else nt

    # dims that need an offset term, keyed by the warp grid that owns them
    grids: set[tuple[tuple[int, ...], tuple[int, ...]]] = set()
    for op in walk_fn_ops(fn):
        if op.kind != "tt.make_tensor_ptr":
            continue
        pt = op.results[0].type.pointee
        eq = equivalent_blocked(pt.encoding, pt.shape)
        for d in range(pt.rank):
            if eq.warps_per_cta[d] > 1 and pt.shape[d] // eq.size_per_warp[d] > 1:
                grids.add((eq.warps_per_cta, eq.order))

    fb = FunctionBuilder(
        fn.name,
        [(a.name, a.type) for a in fn.args],
        num_warps=fn.num_warps,
        warp_level=fn.warp_level,
        level="warp",
    )
    vmap: dict[int, Value] = {id(a): na for a, na in zip(fn.args, fb.fn.args)}

    coords: dict[tuple[tuple[int, ...], tuple[int, ...]], dict[int, Value]] = {}
    if grids:
        wid = fb.warp_id()
        for wpc, order in sorted(grids):
            per_dim: dict[int, Value] = {}
            rem = wid
            live = [d for d in order if wpc[d] > 1]
            for n, d in enumerate(live):
                per_dim[d] = fb.binary("arith.remi", rem, fb.constant(wpc[d]))
                if n + 1 < len(live):
                    rem = fb.binary("arith.divi", rem, fb.constant(wpc[d]))
            coords[(wpc, order)] = per_dim

    def clone(op: Operation) -> None:
        k = op.kind
        if k == "scf.for":
            lb, ub, step = (vmap[id(v)] for v in op.operands[:3])
            inits = [vmap[id(v)] for v in op.operands[3:]]
            iv, args = fb.begin_for(lb, ub, step, inits)
            body = op.regions[0]
            vmap[id(body.args[0])] = iv
            for oa, na in zip(body.args[1:], args):
                vmap[id(oa)] = na
            for inner in body.ops[:-1]:
                clone(inner)
            results = fb.end_for([vmap[id(v)] for v in body.ops[-1].operands])
            for orr, nr in zip(op.results, results):
                vmap[id(orr)] = nr
            return
        if k == "scf.if":
            fb.begin_if(vmap[id(op.operands[0])])
            for inner in op.regions[0].ops:
                clone(inner)
            fb.end_if()
            return
        if k == "tt.make_tensor_ptr":
            pt = op.results[0].type.pointee
            eq = equivalent_blocked(pt.encoding, pt.shape)
            r = pt.rank
            base = vmap[id(op.operands[0])]
            dims = [vmap[id(v)] for v in op.operands[1 : 1 + 2 * r]]
            offs = [vmap[id(v)] for v in op.operands[1 + 2 * r :]]
            for d in range(r):
                tiles = pt.shape[d] // eq.size_per_warp[d]
                if eq.warps_per_cta[d] == 1 or tiles == 1:
                    continue
                c = coords[(eq.warps_per_cta, eq.order)][d]
                if tiles < eq.warps_per_cta[d]:
                    c = fb.binary("arith.remi", c, fb.constant(tiles))
                term = fb.binary("arith.muli", c, fb.constant(eq.size_per_warp[d]))
                offs[d] = fb.binary("arith.addi", offs[d], term)
            nop = fb.op(
                "tt.make_tensor_ptr",
                [base, *dims, *offs],
                dict(op.attrs),
                [per_warp(op.results[0].type)],
            )
            vmap[id(op.results[0])] = nop.result
            return
        if k == "tt.reduce" and not op.attrs.get("cross_warp"):
            st = op.operands[0].type
            eq = equivalent_blocked(st.encoding, st.shape)
            axis = op.attrs["axis"]
            if eq.size_per_warp[axis] != st.shape[axis]:
                raise _fail(
                    fn,
                    f"reduce along dim {axis} crosses warps: layout gives each warp "
                    f"{eq.size_per_warp[axis]} of {st.shape[axis]} elements",
                    op,
                )
        nop = fb.op(
            k,
            [vmap[id(v)] for v in op.operands],
            dict(op.attrs),
            [per_warp(r.type) for r in op.results],
        )
        for orr, nr in zip(op.results, nop.results):
            vmap[id(orr)] = nr

    for op in fn.body.ops:
        clone(op)
    out = fb.build()
    verify_or_raise(out)
    return out


# --------------------------------------------------------------------------
# target size matching

class _UnionFind:
    def __init__(self) -> None:
        self.parent: dict[int, int] = {}

    def find(self, x: int) -> int:
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb


def _largest_divisor(n: int, cap: int) -> int:
    for d in range(min(n, cap), 0, -1):
        if n % d == 0:
            return d
    return 1


def _strip(t: Type) -> Type:
    tt = t.pointee if isinstance(t, PtrType) else t
    if not isinstance(tt, TensorType):
        return t
    nt = TensorType(tt.shape, tt.elem)
    return PtrType(nt) if isinstance(t, PtrType) else nt


def match_target_size(fn: KernelFn, target: TargetConfig = PVC) -> KernelFn:
    """Split warp tiles into target-sized pieces.

    Values connected by loads, stores, pointer advances, elementwise math,
    casts, and loop carries form groups that split together; each group's
    piece shape is the largest per-dim divisor within every limit imposed on
    it (load/store block caps, dot result caps).  Dots expand into a grid of
    unit dots chained over the contraction dim, pulling operand sub-blocks
    out of whichever pieces cover them.  Reductions, broadcasts, and
    cross-warp ops run on the glued whole and re-split their results."""
    if fn.level == "workgroup" and not fn.warp_level:
        raise _fail(fn, "target matching expects warp-level input (run distribution first)")
    if fn.level == "intrinsic":
        raise _fail(fn, "target matching already ran")

    max_m, max_n, max_k = target.max_dot
    uf = _UnionFind()
    clamps: dict[int, list[int]] = {}

    def clamp(v: Value, dims: tuple[int, ...]) -> None:
        root = uf.find(id(v))
        cur = clamps.get(root)
        clamps[root] = [min(a, b) for a, b in zip(cur, dims)] if cur else list(dims)

    def tileish(v: Value) -> bool:
        return _carries_layout(v.type)

    for op in walk_fn_ops(fn):
        k = op.kind
        if k in ("tt.load", "tt.advance", "tt.convert"):
            if op.results and tileish(op.results[0]):
                uf.union(id(op.operands[0]), id(op.results[0]))
        elif k == "tt.store":
            uf.union(id(op.operands[0]), id(op.operands[1]))
        elif k in ELEMENTWISE_FLOAT or k in ELEMENTWISE_INT:
            if op.results and tileish(op.results[0]):
                for v in op.operands:
                    uf.union(id(v), id(op.results[0]))
        elif k == "tt.dot":
            uf.union(id(op.operands[2]), id(op.results[0]))
        elif k == "scf.for":
            body = op.regions[0]
            yields = body.ops[-1].operands if body.ops else ()
            for i, init in enumerate(op.operands[3:]):
                if not tileish(init):
                    continue
                uf.union(id(init), id(body.args[1 + i]))
                uf.union(id(init), id(op.results[i]))
                if i < len(yields):
                    uf.union(id(init), id(yields[i]))

    diags: list[Diagnostic] = []
    for op in walk_fn_ops(fn):
        k = op.kind
        if k in ("tt.load", "tt.store"):
            pt = op.operands[0].type.pointee
            lim = target.max_load if pt.rank == 2 else (target.max_load[1],)
            clamp(op.operands[0], lim)
        elif k == "tt.dot":
            m, kk = op.operands[0].type.shape
            n = op.operands[1].type.shape[1]
            if n % max_n:
                diags.append(Diagnostic(f"dot n={n} is not a multiple of the unit n={max_n}", fn.name, op))
            if kk % max_k:
                diags.append(Diagnostic(f"dot k={kk} is not a multiple of the unit k={max_k}", fn.name, op))
            clamp(op.results[0], (max_m, max_n))
    if diags:
        raise PassError(diags)

    piece: dict[int, tuple[int, ...]] = {}

    def piece_of(v: Value) -> tuple[int, ...]:
        shape = _block_shape(v)
        root = uf.find(id(v))
        lim = clamps.get(root)
        if lim is None:
            return shape
        if root not in piece:
            piece[root] = tuple(_largest_divisor(s, c) for s, c in zip(shape, lim))
        return piece[root]

    fb = FunctionBuilder(
        fn.name,
        [(a.name, a.type) for a in fn.args],
        num_warps=fn.num_warps,
        warp_level=fn.warp_level,
        level="intrinsic",
    )
    pieces: dict[int, list[Value]] = {id(a): [na] for a, na in zip(fn.args, fb.fn.args)}
    # glued wholes and extracted sub-blocks are reusable only where they
    # dominate the use, so memos are scoped to the region nesting
    scopes: list[dict[Any, Value]] = [{}]

    def memo_get(key: Any) -> Value | None:
        for frame in reversed(scopes):
            if key in frame:
                return frame[key]
        return None

    def grid_of(v: Value) -> tuple[int, ...]:
        return tuple(s // p for s, p in zip(_block_shape(v), piece_of(v)))

    def whole_of(v: Value) -> Value:
        """The value as one piece, gluing if it was split."""
        ps = pieces[id(v)]
        if len(ps) == 1:
            return ps[0]
        key = ("whole", id(v))
        got = memo_get(key)
        if got is None:
            got = fb.glue(ps, _block_shape(v))
            scopes[-1][key] = got
        return got

    def split_out(v: Value, built: Value) -> None:
        """Register pieces of ``built`` according to v's piece shape."""
        p = piece_of(v)
        shape = _block_shape(v)
        if p == shape:
            pieces[id(v)] = [built]
            return
        count = 1
        for g in (s // q for s, q in zip(shape, p)):
            count *= g
        pieces[id(v)] = [fb.extract(built, i, p) for i in range(count)]

    def sub_block(v: Value, offset: tuple[int, ...], shape: tuple[int, ...]) -> Value:
        """A sub-block of v: an existing piece when one lines up, an extract
        from the covering piece, or an extract from the glued whole."""
        key = ("sub", id(v), offset, shape)
        got = memo_get(key)
        if got is not None:
            return got
        p = piece_of(v)
        grid = grid_of(v)
        coord = tuple(o // q for o, q in zip(offset, p))
        ps = pieces[id(v)]
        inside = tuple(o - c * q for o, c, q in zip(offset, coord, p))
        fits = all(i + s <= q for i, s, q in zip(inside, shape, p))
        if fits and all(i % s == 0 and q % s == 0 for i, s, q in zip(inside, shape, p)):
            flat = 0
            for c, g in zip(coord, grid):
                flat = flat * g + c
            host = ps[flat]
            if shape == p:
                out = host
            else:
                sub_grid = tuple(q // s for q, s in zip(p, shape))
                idx = 0
                for i, s, g in zip(inside, shape, sub_grid):
                    idx = idx * g + i // s
                out = fb.extract(host, idx, shape)
        else:
            whole = whole_of(v)
            full = _block_shape(v)
            out_grid = tuple(f // s for f, s in zip(full, shape))
            idx = 0
            for o, s, g in zip(offset, shape, out_grid):
                idx = idx * g + o // s
            out = fb.extract(whole, idx, shape)
        scopes[-1][key] = out
        return out

    def clone(op: Operation) -> None:
        k = op.kind
        if k == "scf.for":
            lb, ub, step = (pieces[id(v)][0] for v in op.operands[:3])
            flat_inits: list[Value] = []
            counts: list[int] = []
            for init in op.operands[3:]:
                ps = pieces[id(init)]
                counts.append(len(ps))
                flat_inits.extend(ps)
            iv, args = fb.begin_for(lb, ub, step, flat_inits)
            body = op.regions[0]
            pieces[id(body.args[0])] = [iv]
            at = 0
            for i, oa in enumerate(body.args[1:]):
                pieces[id(oa)] = list(args[at : at + counts[i]])
                at += counts[i]
            scopes.append({})
            for inner in body.ops[:-1]:
                clone(inner)
            flat_yields = [p for v in body.ops[-1].operands for p in pieces[id(v)]]
            scopes.pop()
            results = fb.end_for(flat_yields)
            at = 0
            for i, orr in enumerate(op.results):
                pieces[id(orr)] = list(results[at : at + counts[i]])
                at += counts[i]
            return
        if k == "scf.if":
            fb.begin_if(pieces[id(op.operands[0])][0])
            scopes.append({})
            for inner in op.regions[0].ops:
                clone(inner)
            scopes.pop()
            fb.end_if()
            return
        if k in ("tt.make_tensor_ptr", "tt.alloc"):
            r = op.results[0]
            nop = fb.op(
                k,
                [pieces[id(v)][0] for v in op.operands],
                dict(op.attrs),
                [_strip(r.type)],
            )
            p = piece_of(r)
            shape = _block_shape(r)
            if p == shape:
                pieces[id(r)] = [nop.result]
            else:
                count = 1
                for g in (s // q for s, q in zip(shape, p)):
                    count *= g
                pieces[id(r)] = [fb.extract(nop.result, i, p) for i in range(count)]
            return
        if k == "tt.advance":
            deltas = [pieces[id(v)][0] for v in op.operands[1:]]
            pieces[id(op.results[0])] = [
                fb.advance(pp, deltas) for pp in pieces[id(op.operands[0])]
            ]
            return
        if k == "tt.load":
            pieces[id(op.results[0])] = [fb.load(pp) for pp in pieces[id(op.operands[0])]]
            return
        if k == "tt.store":
            for pp, vp in zip(pieces[id(op.operands[0])], pieces[id(op.operands[1])]):
                fb.store(pp, vp)
            return
        if k == "tt.dot":
            a, b, c = op.operands
            m, kk = a.type.shape
            n = b.type.shape[1]
            pm, pn = piece_of(op.results[0])
            m_t, n_t, k_t = m // pm, n // pn, kk // max_k
            out: list[Value] = []
            for i in range(m_t):
                for j in range(n_t):
                    acc = pieces[id(c)][i * n_t + j]
                    for kq in range(k_t):
                        a_sub = sub_block(a, (i * pm, kq * max_k), (pm, max_k))
                        b_sub = sub_block(b, (kq * max_k, j * pn), (max_k, pn))
                        acc = fb.dot(a_sub, b_sub, acc)
                    out.append(acc)
            pieces[id(op.results[0])] = out
            return
        if k == "tt.splat":
            r = op.results[0]
            p = piece_of(r)
            count = 1
            for g in (s // q for s, q in zip(_block_shape(r), p)):
                count *= g
            src = pieces[id(op.operands[0])][0]
            pieces[id(r)] = [fb.splat(src, p) for _ in range(count)]
            return
        if k in ("tt.reduce", "tt.expand_dims", "tt.broadcast"):
            built = fb.op(
                k,
                [whole_of(v) if tileish(v) else pieces[id(v)][0] for v in op.operands],
                dict(op.attrs),
                [_strip(r.type) for r in op.results],
            )
            r = op.results[0]
            if tileish(r):
                split_out(r, built.result)
            else:
                pieces[id(r)] = [built.result]
            return
        if k == "tt.convert":
            r = op.results[0]
            elem = r.type.elem
            pieces[id(r)] = [fb.convert(pp, elem) for pp in pieces[id(op.operands[0])]]
            return
        if k in ELEMENTWISE_FLOAT or k in ELEMENTWISE_INT or k == "arith.cmpi":
            r = op.results[0]
            if not tileish(r):
                nop = fb.op(k, [pieces[id(v)][0] for v in op.operands], dict(op.attrs), [_strip(r.type)])
                pieces[id(r)] = [nop.result]
                return
            ops_pieces = [pieces[id(v)] for v in op.operands]
            outs = []
            for group in zip(*ops_pieces):
                nop = fb.op(k, list(group), dict(op.attrs), [TensorType(group[0].type.shape, r.type.elem)])
                outs.append(nop.result)
            pieces[id(r)] = outs
            return
        # scalar producers, barriers, returns
        nop = fb.op(
            k,
            [pieces[id(v)][0] for v in op.operands],
            dict(op.attrs),
            [_strip(r.type) for r in op.results],
        )
        for orr, nr in zip(op.results, nop.results):
            pieces[id(orr)] = [nr]

    for op in fn.body.ops:
        clone(op)
    out = fb.build()
    verify_or_raise(out)
    return out


# --------------------------------------------------------------------------
# pipeline

@dataclass
class CompileResult:
    source: KernelFn
    layouts: KernelFn | None = None
    distribute: KernelFn | None = None
    match: KernelFn | None = None
    vprog: VProgram | None = None

    def at_level(self, level: str):
        got = {
            "workgroup": self.layouts if self.layouts is not None else self.source,
            "warp": self.distribute,
            "intrinsic": self.match,
            "visa": self.vprog,
        }[level]
        if got is None:
            raise ValueError(f"pipeline did not reach level {level!r}")
        return got


_LEVEL_RANK = {"workgroup": 0, "warp": 1, "intrinsic": 2, "visa": 3}


def compile_kernel(
    fn: KernelFn,
    target: TargetConfig = PVC,
    to_level: str = "visa",
    hints: dict[int, str] | None = None,
) -> CompileResult:
    """Run the lowering pipeline up to ``to_level``, keeping every stage."""
    if to_level not in _LEVEL_RANK:
        raise ValueError(f"unknown level {to_level!r}")
    rank = _LEVEL_RANK[to_level]
    verify_or_raise(fn)
    if hints:
        fn = apply_tiling_hints(fn, hints)
    result = CompileResult(source=fn)
    result.layouts = assign_layouts(fn)
    if rank >= 1:
        result.distribute = distribute_to_warps(result.layouts)
    if rank >= 2:
        result.match = match_target_size(result.distribute, target)
    if rank >= 3:
        result.vprog = lower(result.match, target)
    return result

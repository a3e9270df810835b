"""Textual IR: an MLIR-flavored format with tt./arith./scf./math. dialect
prefixes.

The printer is canonicalizing: SSA values are renumbered (%0, %1, ...) while
function and argument names are preserved, attrs print in sorted key order,
and layout encodings are hash-consed into alias definitions (#blocked, #dot0,
...) emitted parent-first in first-use order.  print(parse(print(m))) ==
print(m) for any verified module.  The grammar ships in docs/grammar.md.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any

from .ir import (
    ElemType,
    KernelFn,
    KernelModule,
    Operation,
    PtrType,
    Region,
    TensorType,
    Type,
    Value,
    scalar,
)
from .layouts import BlockedEncoding, DotOperandEncoding, LayoutEncoding, SliceEncoding


@dataclass(frozen=True, slots=True)
class SourceSpan:
    line: int
    col: int

    def __str__(self) -> str:
        return f"line {self.line}, col {self.col}"


class ParseError(ValueError):
    def __init__(self, message: str, span: SourceSpan):
        self.span = span
        super().__init__(f"{span}: {message}")


# --------------------------------------------------------------------------
# printing


class _EncodingTable:
    """Assigns stable alias names, parents before children."""

    def __init__(self) -> None:
        self.names: dict[LayoutEncoding, str] = {}
        self.defs: list[tuple[str, LayoutEncoding]] = []
        self._counts: dict[str, int] = {}

    def name_of(self, enc: LayoutEncoding) -> str:
        if enc in self.names:
            return self.names[enc]
        if isinstance(enc, BlockedEncoding):
            base = "blocked"
        elif isinstance(enc, DotOperandEncoding):
            parent = self.name_of(enc.parent)
            digits = str(enc.op_idx)
            if isinstance(enc.parent, DotOperandEncoding):
                digits += parent[len("dot"):].replace("#", "")
            base = "dot" + digits
        elif isinstance(enc, SliceEncoding):
            self.name_of(enc.parent)
            base = "slice"
        else:
            raise TypeError(f"unknown encoding {enc!r}")
        n = self._counts.get(base, 0)
        self._counts[base] = n + 1
        name = base if n == 0 else (f"{base}{n}" if base in ("blocked", "slice") else f"{base}_{n}")
        self.names[enc] = name
        self.defs.append((name, enc))
        return name

    def def_line(self, name: str, enc: LayoutEncoding) -> str:
        if isinstance(enc, BlockedEncoding):
            body = (
                f"sizePerWarp = {list(enc.size_per_warp)}, "
                f"warpsPerCTA = {list(enc.warps_per_cta)}, "
                f"order = {list(enc.order)}"
            )
            return f"#{name} = #triton_gpu.blocked<{{{body}}}>"
        if isinstance(enc, DotOperandEncoding):
            return f"#{name} = #triton_gpu.dot_op<{{opIdx = {enc.op_idx}, parent = #{self.names[enc.parent]}}}>"
        return f"#{name} = #triton_gpu.slice<{{dim = {enc.dim}, parent = #{self.names[enc.parent]}}}>"


def _fmt_attr_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, list):
        return "[" + ", ".join(str(x) for x in v) + "]"
    raise TypeError(f"unprintable attr value {v!r}")


def _fmt_attrs(attrs: dict[str, Any]) -> str:
    items = ", ".join(f"{k} = {_fmt_attr_value(attrs[k])}" for k in sorted(attrs))
    return "{" + items + "}"


class _Printer:
    def __init__(self) -> None:
        self.enc = _EncodingTable()
        self.lines: list[str] = []

    def type_str(self, t: Type) -> str:
        if isinstance(t, PtrType):
            if t.is_block:
                return f"!tt.ptr<{self.type_str(t.pointee)}>"
            return f"!tt.ptr<{t.pointee.value}>"
        assert isinstance(t, TensorType)
        if t.rank == 0:
            return t.elem.value
        dims = "x".join(str(d) for d in t.shape)
        if t.encoding is None:
            return f"tensor<{dims}x{t.elem.value}>"
        return f"tensor<{dims}x{t.elem.value}, #{self.enc.name_of(t.encoding)}>"

    def print_module(self, m: KernelModule) -> str:
        body_chunks: list[str] = []
        for fn in m.functions:
            body_chunks.append(self._print_fn(fn))
        header = "\n".join(self.enc.def_line(n, e) for n, e in self.enc.defs)
        parts = [p for p in ([header] if header else []) + body_chunks]
        return "\n\n".join(parts) + "\n"

    def _print_fn(self, fn: KernelFn) -> str:
        self.names: dict[int, str] = {}
        self.counter = 0
        # touch types in signature order so alias numbering follows the text
        args = ", ".join(f"%{a.name}: {self.type_str(a.type)}" for a in fn.args)
        for a in fn.args:
            self.names[id(a)] = f"%{a.name}"
        attrs: dict[str, Any] = {"num_warps": fn.num_warps}
        if fn.warp_level:
            attrs["warp_level"] = True
        if fn.level != "workgroup":
            attrs["level"] = fn.level
        lines = [f"tt.func public @{fn.name}({args}) attributes {_fmt_attrs(attrs)} {{"]
        self._print_region(fn.body, lines, "  ")
        lines.append("}")
        return "\n".join(lines)

    def _new_name(self, v: Value) -> str:
        name = f"%{self.counter}"
        self.counter += 1
        self.names[id(v)] = name
        return name

    def _ref(self, v: Value) -> str:
        return self.names[id(v)]

    def _print_region(self, region: Region, lines: list[str], indent: str) -> None:
        for op in region.ops:
            self._print_op(op, lines, indent)

    def _print_op(self, op: Operation, lines: list[str], indent: str) -> None:
        k = op.kind
        if k == "scf.for":
            results = ", ".join(self._new_name(r) for r in op.results)
            body = op.regions[0]
            iv = self._new_name(body.args[0])
            head = f"scf.for {iv} = {self._ref(op.operands[0])} to {self._ref(op.operands[1])} step {self._ref(op.operands[2])}"
            if results:
                head = f"{results} = {head}"
            inits = op.operands[3:]
            if inits:
                pairs = ", ".join(
                    f"{self._new_name(a)} = {self._ref(v)}" for a, v in zip(body.args[1:], inits)
                )
                types = ", ".join(self.type_str(v.type) for v in inits)
                head += f" iter_args({pairs}) -> ({types})"
            lines.append(indent + head + " {")
            self._print_region(body, lines, indent + "  ")
            lines.append(indent + "}")
            return
        if k == "scf.if":
            lines.append(indent + f"scf.if {self._ref(op.operands[0])} {{")
            self._print_region(op.regions[0], lines, indent + "  ")
            lines.append(indent + "}")
            return
        if k == "scf.yield":
            ops_s = ", ".join(self._ref(v) for v in op.operands)
            lines.append(indent + ("scf.yield " + ops_s if ops_s else "scf.yield"))
            return

        results = ", ".join(self._new_name(r) for r in op.results)
        parts = [k]
        if op.operands:
            parts.append(" " + ", ".join(self._ref(v) for v in op.operands))
        if op.attrs:
            parts.append(" " + _fmt_attrs(op.attrs))
        if op.operands or op.results:
            in_t = ", ".join(self.type_str(v.type) for v in op.operands)
            if len(op.results) == 1:
                out_t = self.type_str(op.results[0].type)
            else:
                out_t = "(" + ", ".join(self.type_str(r.type) for r in op.results) + ")"
            parts.append(f" : ({in_t}) -> {out_t}")
        text = "".join(parts)
        if results:
            text = f"{results} = {text}"
        lines.append(indent + text)


def print_module(m: KernelModule) -> str:
    return _Printer().print_module(m)


# --------------------------------------------------------------------------
# lexing


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t]+)
  | (?P<comment>//[^\n]*)
  | (?P<nl>\n)
  | (?P<arrow>->)
  | (?P<number>-?\d+(\.\d*)?([eE][+-]?\d+)?)
  | (?P<string>"[^"\n]*")
  | (?P<value>%[A-Za-z0-9_]+)
  | (?P<alias>\#[A-Za-z0-9_.]+)
  | (?P<symbol>@[A-Za-z0-9_]+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<punct>[()\[\]{}<>,=:!])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True, slots=True)
class _Token:
    kind: str
    text: str
    span: SourceSpan


def _lex(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col, pos = 1, 1, 0
    prev_kind = ""
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", SourceSpan(line, col))
        kind = m.lastgroup or ""
        tok = m.group()
        if kind == "nl":
            line += 1
            col = 1
            pos = m.end()
            continue
        if kind not in ("ws", "comment"):
            # split dim separators: `256x32xf16` lexes as 256, x, 32, x, f16
            if kind == "ident" and prev_kind == "number" and tok.startswith("x") and tok != "x":
                tokens.append(_Token("punct", "x", SourceSpan(line, col)))
                rest = tok[1:]
                sub = re.match(r"\d+", rest)
                while sub:
                    tokens.append(_Token("number", sub.group(), SourceSpan(line, col)))
                    rest = rest[sub.end():]
                    if rest.startswith("x"):
                        tokens.append(_Token("punct", "x", SourceSpan(line, col)))
                        rest = rest[1:]
                        sub = re.match(r"\d+", rest)
                    else:
                        sub = None
                if rest:
                    tokens.append(_Token("ident", rest, SourceSpan(line, col)))
                prev_kind = tokens[-1].kind
            else:
                tokens.append(_Token(kind, tok, SourceSpan(line, col)))
                prev_kind = kind
        col += m.end() - pos
        pos = m.end()
    tokens.append(_Token("eof", "", SourceSpan(line, col)))
    return tokens


# --------------------------------------------------------------------------
# parsing


_ELEMS = {e.value: e for e in ElemType}


class _Parser:
    def __init__(self, text: str):
        self.toks = _lex(text)
        self.pos = 0
        self.aliases: dict[str, LayoutEncoding] = {}

    # token plumbing ------------------------------------------------------
    @property
    def cur(self) -> _Token:
        return self.toks[self.pos]

    def bump(self) -> _Token:
        t = self.cur
        self.pos += 1
        return t

    def error(self, msg: str) -> ParseError:
        got = self.cur.text or "<eof>"
        return ParseError(f"{msg} (got {got!r})", self.cur.span)

    def expect(self, kind: str, text: str | None = None) -> _Token:
        t = self.cur
        if t.kind != kind or (text is not None and t.text != text):
            raise self.error(f"expected {text or kind}")
        return self.bump()

    def accept(self, kind: str, text: str | None = None) -> _Token | None:
        t = self.cur
        if t.kind == kind and (text is None or t.text == text):
            return self.bump()
        return None

    def _at_results_header(self) -> bool:
        """True if the tokens ahead read `%a (, %b)* =`, i.e. the next op's
        result list rather than operands of the op being parsed."""
        i = self.pos
        if self.toks[i].kind != "value":
            return False
        i += 1
        while self.toks[i].kind == "punct" and self.toks[i].text == ",":
            if self.toks[i + 1].kind != "value":
                return False
            i += 2
        return self.toks[i].kind == "punct" and self.toks[i].text == "="

    # module --------------------------------------------------------------
    def parse_module(self) -> KernelModule:
        fns: list[KernelFn] = []
        while self.cur.kind != "eof":
            if self.cur.kind == "alias":
                self.parse_alias_def()
            elif self.cur.kind == "ident" and self.cur.text == "tt.func":
                fns.append(self.parse_fn())
            else:
                raise self.error("expected encoding alias or tt.func")
        return KernelModule(fns)

    def parse_alias_def(self) -> None:
        name = self.bump().text[1:]
        self.expect("punct", "=")
        head = self.expect("alias")
        self.expect("punct", "<")
        self.expect("punct", "{")
        params: dict[str, Any] = {}
        while not self.accept("punct", "}"):
            key = self.expect("ident").text
            self.expect("punct", "=")
            params[key] = self.parse_attr_value()
            self.accept("punct", ",")
        self.expect("punct", ">")
        if head.text == "#triton_gpu.blocked":
            enc: LayoutEncoding = BlockedEncoding(
                tuple(params["sizePerWarp"]), tuple(params["warpsPerCTA"]), tuple(params["order"])
            )
        elif head.text == "#triton_gpu.dot_op":
            enc = DotOperandEncoding(params["opIdx"], self.resolve_alias(params["parent"], head.span))
        elif head.text == "#triton_gpu.slice":
            enc = SliceEncoding(params["dim"], self.resolve_alias(params["parent"], head.span))
        else:
            raise ParseError(f"unknown encoding {head.text}", head.span)
        self.aliases[name] = enc

    def resolve_alias(self, name: Any, span: SourceSpan) -> LayoutEncoding:
        if not isinstance(name, str) or name not in self.aliases:
            raise ParseError(f"unknown encoding alias #{name}", span)
        return self.aliases[name]

    def parse_attr_value(self) -> Any:
        t = self.cur
        if t.kind == "number":
            self.bump()
            return self._num(t)
        if t.kind == "string":
            self.bump()
            return t.text[1:-1]
        if t.kind == "alias":
            self.bump()
            return t.text[1:]
        if t.kind == "ident" and t.text in ("true", "false"):
            self.bump()
            return t.text == "true"
        if self.accept("punct", "["):
            items: list[int] = []
            while not self.accept("punct", "]"):
                n = self.expect("number")
                items.append(int(n.text))
                self.accept("punct", ",")
            return items
        raise self.error("expected attribute value")

    @staticmethod
    def _num(t: _Token) -> int | float:
        if re.fullmatch(r"-?\d+", t.text):
            return int(t.text)
        return float(t.text)

    # types ---------------------------------------------------------------
    def parse_type(self) -> Type:
        t = self.cur
        if t.kind == "punct" and t.text == "!":
            self.bump()
            head = self.expect("ident")
            if head.text != "tt.ptr":
                raise ParseError(f"unknown type !{head.text}", head.span)
            self.expect("punct", "<")
            inner: Any
            if self.cur.kind == "ident" and self.cur.text in _ELEMS:
                inner = _ELEMS[self.bump().text]
            else:
                inner = self.parse_type()
                if not isinstance(inner, TensorType) or inner.rank == 0:
                    raise ParseError("pointer pointee must be an element type or ranked tensor", t.span)
            self.expect("punct", ">")
            return PtrType(inner)
        if t.kind == "ident" and t.text == "tensor":
            self.bump()
            self.expect("punct", "<")
            dims: list[int] = []
            while self.cur.kind == "number":
                dims.append(int(self.bump().text))
                self.expect("punct", "x")
            elem_tok = self.expect("ident")
            if elem_tok.text not in _ELEMS:
                raise ParseError(f"unknown element type {elem_tok.text}", elem_tok.span)
            encoding = None
            if self.accept("punct", ","):
                al = self.expect("alias")
                encoding = self.resolve_alias(al.text[1:], al.span)
            self.expect("punct", ">")
            return TensorType(tuple(dims), _ELEMS[elem_tok.text], encoding)
        if t.kind == "ident" and t.text in _ELEMS:
            self.bump()
            return scalar(_ELEMS[t.text])
        raise self.error("expected a type")

    # functions -----------------------------------------------------------
    def parse_fn(self) -> KernelFn:
        self.expect("ident", "tt.func")
        self.expect("ident", "public")
        name = self.expect("symbol").text[1:]
        self.expect("punct", "(")
        args: list[tuple[str, Type]] = []
        while not self.accept("punct", ")"):
            v = self.expect("value")
            self.expect("punct", ":")
            args.append((v.text[1:], self.parse_type()))
            self.accept("punct", ",")
        attrs: dict[str, Any] = {}
        if self.accept("ident", "attributes"):
            attrs = self.parse_attr_dict()
        fn = KernelFn(
            name,
            args,
            num_warps=attrs.get("num_warps", 1),
            warp_level=bool(attrs.get("warp_level", False)),
            level=attrs.get("level", "workgroup"),
        )
        env: dict[str, Value] = {a.name: a for a in fn.args}
        self.expect("punct", "{")
        self.parse_region_ops(fn.body, env)
        self.expect("punct", "}")
        return fn

    def parse_attr_dict(self) -> dict[str, Any]:
        self.expect("punct", "{")
        attrs: dict[str, Any] = {}
        while not self.accept("punct", "}"):
            key = self.expect("ident").text
            self.expect("punct", "=")
            attrs[key] = self.parse_attr_value()
            self.accept("punct", ",")
        return attrs

    def define(self, env: dict[str, Value], name_tok: _Token, value: Value) -> None:
        name = name_tok.text[1:]
        if name in env:
            raise ParseError(f"redefinition of %{name}", name_tok.span)
        value.name = name
        env[name] = value

    def lookup(self, env: dict[str, Value], tok: _Token) -> Value:
        name = tok.text[1:]
        if name not in env:
            raise ParseError(f"use of undefined value %{name}", tok.span)
        return env[name]

    def parse_region_ops(self, region: Region, env: dict[str, Value]) -> None:
        while self.cur.kind != "eof" and not (self.cur.kind == "punct" and self.cur.text == "}"):
            self.parse_op(region, env)

    def parse_op(self, region: Region, env: dict[str, Value]) -> None:
        result_toks: list[_Token] = []
        if self.cur.kind == "value":
            result_toks.append(self.bump())
            while self.accept("punct", ","):
                result_toks.append(self.expect("value"))
            self.expect("punct", "=")
        kind_tok = self.expect("ident")
        kind = kind_tok.text
        if kind == "scf.for":
            self.parse_for(region, env, result_toks)
            return
        if kind == "scf.if":
            if result_toks:
                raise ParseError("scf.if has no results", kind_tok.span)
            cond = self.lookup(env, self.expect("value"))
            body = Region()
            op = Operation("scf.if", [cond], {}, [], [body])
            region.ops.append(op)
            self.expect("punct", "{")
            self.parse_region_ops(body, dict(env))
            self.expect("punct", "}")
            return
        if kind == "scf.yield":
            operands = []
            while self.cur.kind == "value" and not self._at_results_header():
                operands.append(self.lookup(env, self.bump()))
                if not self.accept("punct", ","):
                    break
            region.ops.append(Operation("scf.yield", operands))
            return

        operands_toks: list[_Token] = []
        while self.cur.kind == "value" and not self._at_results_header():
            operands_toks.append(self.bump())
            if not self.accept("punct", ","):
                break
        attrs: dict[str, Any] = {}
        if self.cur.kind == "punct" and self.cur.text == "{":
            attrs = self.parse_attr_dict()
        in_types: list[Type] = []
        out_types: list[Type] = []
        if self.accept("punct", ":"):
            self.expect("punct", "(")
            while not self.accept("punct", ")"):
                in_types.append(self.parse_type())
                self.accept("punct", ",")
            self.expect("arrow")
            if self.accept("punct", "("):
                while not self.accept("punct", ")"):
                    out_types.append(self.parse_type())
                    self.accept("punct", ",")
            else:
                out_types.append(self.parse_type())
        operands = [self.lookup(env, t) for t in operands_toks]
        if len(in_types) != len(operands):
            raise ParseError(
                f"{kind}: {len(operands)} operands but {len(in_types)} operand types", kind_tok.span
            )
        for tok, v, t in zip(operands_toks, operands, in_types):
            if v.type != t:
                raise ParseError(f"%{tok.text[1:]} has type {_type_desc(v.type)}, clause says {_type_desc(t)}", tok.span)
        if len(result_toks) != len(out_types):
            raise ParseError(
                f"{kind}: {len(result_toks)} results named but {len(out_types)} result types", kind_tok.span
            )
        op = Operation(kind, operands, attrs, out_types)
        region.ops.append(op)
        for tok, r in zip(result_toks, op.results):
            self.define(env, tok, r)

    def parse_for(self, region: Region, env: dict[str, Value], result_toks: list[_Token]) -> None:
        iv_tok = self.expect("value")
        self.expect("punct", "=")
        lb = self.lookup(env, self.expect("value"))
        self.expect("ident", "to")
        ub = self.lookup(env, self.expect("value"))
        self.expect("ident", "step")
        step = self.lookup(env, self.expect("value"))
        inits: list[Value] = []
        arg_toks: list[_Token] = []
        res_types: list[Type] = []
        if self.accept("ident", "iter_args"):
            self.expect("punct", "(")
            while not self.accept("punct", ")"):
                arg_toks.append(self.expect("value"))
                self.expect("punct", "=")
                inits.append(self.lookup(env, self.expect("value")))
                self.accept("punct", ",")
            self.expect("arrow")
            self.expect("punct", "(")
            while not self.accept("punct", ")"):
                res_types.append(self.parse_type())
                self.accept("punct", ",")
        if len(res_types) != len(inits):
            raise ParseError("iter_args and result types disagree", iv_tok.span)
        body = Region([Value(scalar(ElemType.i32))] + [Value(t) for t in res_types])
        op = Operation("scf.for", [lb, ub, step, *inits], {}, res_types, [body])
        for a in body.args:
            a.producer = op
        region.ops.append(op)
        inner = dict(env)
        self.define(inner, iv_tok, body.args[0])
        for tok, arg in zip(arg_toks, body.args[1:]):
            self.define(inner, tok, arg)
        self.expect("punct", "{")
        self.parse_region_ops(body, inner)
        self.expect("punct", "}")
        for tok, r in zip(result_toks, op.results):
            self.define(env, tok, r)
        if len(result_toks) != len(op.results):
            raise ParseError("loop result names and iter args disagree", iv_tok.span)


def _type_desc(t: Type) -> str:
    p = _Printer()
    return p.type_str(t)


def parse_module(text: str) -> KernelModule:
    return _Parser(text).parse_module()

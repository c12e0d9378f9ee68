"""Architecture-neutral integer IR: data model, text parser and printer.

The IR is a flat, imperative form.  Each function owns a list of virtual
values (64-bit integers), a set of stack-allocated locals and a body of
instructions.  Labels name instruction indices; control flow is explicit
through ``branch``/``jump``/``return``.

Textual form (one instruction per line)::

    fn main(a, b) {
      local buf 16
      x = const 5
      store-local buf+8, x
    L0:
      eqpoint 0
      y = load-local buf+8
      c = cmp lt y, a
      branch c, L0, L1
    L1:
      return y
    }

The full grammar is documented in ``docs/ir.md``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

MASK64 = (1 << 64) - 1

ARITH_OPS = ("add", "sub", "mul", "div")
CMP_PREDICATES = ("eq", "ne", "lt", "le", "gt", "ge")
TERMINATORS = ("branch", "jump", "return")
OPCODES = (
    "const",
    "add",
    "sub",
    "mul",
    "div",
    "cmp",
    "branch",
    "jump",
    "load-local",
    "store-local",
    "call",
    "return",
    "eqpoint",
    "print",
)


def wrap64(x: int) -> int:
    """Reduce an integer to a signed 64-bit two's complement value."""
    x &= MASK64
    return x - (1 << 64) if x >> 63 else x


def div64(a: int, b: int) -> int:
    """Signed division truncating toward zero, wrapping INT64_MIN / -1."""
    q = abs(a) // abs(b)
    if (a < 0) != (b < 0):
        q = -q
    return wrap64(q)


def eval_cmp(pred: str, a: int, b: int) -> int:
    if pred == "eq":
        return int(a == b)
    if pred == "ne":
        return int(a != b)
    if pred == "lt":
        return int(a < b)
    if pred == "le":
        return int(a <= b)
    if pred == "gt":
        return int(a > b)
    return int(a >= b)


@dataclass(frozen=True)
class Instruction:
    """One IR instruction.

    ``args`` layout per opcode:

    ==============  ================================
    const           (imm,)
    add/sub/mul/div (a, b)
    cmp             (pred, a, b)
    branch          (cond, true_label, false_label)
    jump            (label,)
    load-local      (local, offset)
    store-local     (local, offset, value)
    call            (callee, arg0, arg1, ...)
    return          (value_or_int,)
    eqpoint         (point_id,)
    print           (value,)
    ==============  ================================
    """

    op: str
    dest: str | None = None
    args: tuple = ()

    def uses(self) -> tuple[str, ...]:
        op, a = self.op, self.args
        if op in ARITH_OPS:
            return (a[0], a[1])
        if op == "cmp":
            return (a[1], a[2])
        if op == "branch":
            return (a[0],)
        if op == "store-local":
            return (a[2],)
        if op == "call":
            return tuple(a[1:])
        if op == "return":
            return (a[0],) if isinstance(a[0], str) else ()
        if op == "print":
            return (a[0],)
        return ()

    def defs(self) -> tuple[str, ...]:
        return (self.dest,) if self.dest is not None else ()

    @property
    def is_terminator(self) -> bool:
        return self.op in TERMINATORS


@dataclass(frozen=True)
class Function:
    name: str
    params: tuple[str, ...] = ()
    locals: tuple[tuple[str, int], ...] = ()
    body: tuple[Instruction, ...] = ()
    labels: dict[str, int] = field(default_factory=dict)

    def local_size(self, name: str) -> int:
        for n, size in self.locals:
            if n == name:
                return size
        raise KeyError(name)

    def successors(self, i: int) -> tuple[int, ...]:
        ins = self.body[i]
        if ins.op == "branch":
            return (self.labels[ins.args[1]], self.labels[ins.args[2]])
        if ins.op == "jump":
            return (self.labels[ins.args[0]],)
        if ins.op == "return":
            return ()
        return (i + 1,) if i + 1 < len(self.body) else ()

    def values(self) -> list[str]:
        """All virtual values in first-appearance order (params first)."""
        seen = dict.fromkeys(self.params)
        for ins in self.body:
            for v in ins.uses() + ins.defs():
                seen.setdefault(v)
        return list(seen)

    def eqpoints(self) -> list[int]:
        return [ins.args[0] for ins in self.body if ins.op == "eqpoint"]


@dataclass(frozen=True)
class Program:
    functions: tuple[Function, ...]
    entry: str = "main"

    def function(self, name: str) -> Function:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.functions]


class ParseError(ValueError):
    """Raised for malformed or ill-formed IR text.  Carries a 1-based position."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.message = message
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line else ""
        super().__init__(where + message)


# ---------------------------------------------------------------------------
# Lexing

_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t\r]+)"
    r"|(?P<comment>#[^\n]*)"
    r"|(?P<nl>\n)"
    r"|(?P<int>-?[0-9]+)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_.\-]*)"
    r"|(?P<punct>[(){},=:+])"
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            toks.append(_Tok("nl", "\n", line, pos - line_start + 1))
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


# ---------------------------------------------------------------------------
# Parsing


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        # positions of interesting constructs for later validation errors
        self.call_sites: list[tuple[str, str, _Tok]] = []
        self.func_tokens: dict[str, _Tok] = {}

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, msg: str, tok: _Tok | None = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(msg, tok.line, tok.col)

    def expect(self, kind: str, text: str | None = None) -> _Tok:
        t = self.tok
        if t.kind != kind or (text is not None and t.text != text):
            want = repr(text) if text else kind
            got = repr(t.text) if t.kind != "eof" else "end of input"
            raise self.error(f"expected {want}, found {got}")
        return self.advance()

    def at(self, kind: str, text: str | None = None) -> bool:
        t = self.tok
        return t.kind == kind and (text is None or t.text == text)

    def skip_newlines(self):
        while self.at("nl"):
            self.advance()

    def end_statement(self):
        if self.at("punct", "}"):
            return
        if not (self.at("nl") or self.at("eof")):
            raise self.error(f"unexpected {self.tok.text!r} after instruction")
        self.skip_newlines()

    def program(self) -> Program:
        funcs: list[Function] = []
        self.skip_newlines()
        while not self.at("eof"):
            funcs.append(self.function())
            self.skip_newlines()
        return Program(tuple(funcs), "main")

    def function(self) -> Function:
        self.expect("name", "fn")
        name_tok = self.expect("name")
        name = name_tok.text
        if name in self.func_tokens:
            raise self.error(f"duplicate function name {name!r}", name_tok)
        self.func_tokens[name] = name_tok
        self.expect("punct", "(")
        params: list[str] = []
        if not self.at("punct", ")"):
            params.append(self.expect("name").text)
            while self.at("punct", ","):
                self.advance()
                params.append(self.expect("name").text)
        self.expect("punct", ")")
        self.expect("punct", "{")
        self.skip_newlines()
        locals_: list[tuple[str, int]] = []
        body: list[Instruction] = []
        labels: dict[str, int] = {}
        while not self.at("punct", "}"):
            if self.at("eof"):
                raise self.error(f"unterminated function {name!r}")
            t = self.tok
            if t.kind == "name" and self.toks[self.i + 1].kind == "punct" and self.toks[self.i + 1].text == ":":
                self.advance()
                self.advance()
                if t.text in labels:
                    raise self.error(f"duplicate label {t.text!r}", t)
                labels[t.text] = len(body)
                self.skip_newlines()
                continue
            if t.kind == "name" and t.text == "local":
                self.advance()
                lname = self.expect("name").text
                size_tok = self.expect("int")
                size = int(size_tok.text)
                if size <= 0 or size % 8:
                    raise self.error("local size must be a positive multiple of 8", size_tok)
                locals_.append((lname, size))
                self.end_statement()
                continue
            body.append(self.instruction(name))
            self.end_statement()
        self.expect("punct", "}")
        return Function(name, tuple(params), tuple(locals_), tuple(body), labels)

    def value(self) -> str:
        return self.expect("name").text

    def local_ref(self) -> tuple[str, int]:
        name = self.expect("name").text
        off = 0
        if self.at("punct", "+"):
            self.advance()
            off = int(self.expect("int").text)
        return name, off

    def instruction(self, fname: str) -> Instruction:
        dest = None
        first = self.tok
        if first.kind == "name" and self.toks[self.i + 1].kind == "punct" and self.toks[self.i + 1].text == "=":
            dest = self.advance().text
            self.advance()
        op_tok = self.expect("name")
        op = op_tok.text
        if op not in OPCODES:
            raise self.error(f"unknown opcode {op!r}", op_tok)
        if op == "const":
            args: tuple = (int(self.expect("int").text),)
        elif op in ARITH_OPS:
            a = self.value()
            self.expect("punct", ",")
            args = (a, self.value())
        elif op == "cmp":
            pred_tok = self.expect("name")
            if pred_tok.text not in CMP_PREDICATES:
                raise self.error(f"unknown comparison {pred_tok.text!r}", pred_tok)
            a = self.value()
            self.expect("punct", ",")
            args = (pred_tok.text, a, self.value())
        elif op == "branch":
            c = self.value()
            self.expect("punct", ",")
            lt = self.expect("name").text
            self.expect("punct", ",")
            args = (c, lt, self.expect("name").text)
        elif op == "jump":
            args = (self.expect("name").text,)
        elif op == "load-local":
            args = self.local_ref()
        elif op == "store-local":
            lname, off = self.local_ref()
            self.expect("punct", ",")
            args = (lname, off, self.value())
        elif op == "call":
            callee_tok = self.expect("name")
            self.expect("punct", "(")
            cargs: list[str] = []
            if not self.at("punct", ")"):
                cargs.append(self.value())
                while self.at("punct", ","):
                    self.advance()
                    cargs.append(self.value())
            self.expect("punct", ")")
            args = (callee_tok.text, *cargs)
            self.call_sites.append((fname, callee_tok.text, callee_tok))
        elif op == "return":
            if self.at("int"):
                args = (int(self.advance().text),)
            else:
                args = (self.value(),)
        elif op == "eqpoint":
            args = (int(self.expect("int").text),)
        else:  # print
            args = (self.value(),)
        if dest is not None and op not in ("const", "cmp", "load-local", "call") + ARITH_OPS:
            raise self.error(f"{op} does not define a value", first)
        if dest is None and op in ("const", "cmp", "load-local") + ARITH_OPS:
            raise self.error(f"{op} requires a destination", op_tok)
        return Instruction(op, dest, args)


def parse_program(text: str) -> Program:
    """Parse IR text into a validated :class:`Program`."""
    p = _Parser(text)
    prog = p.program()
    known = {f.name for f in prog.functions}
    for _, callee, tok in p.call_sites:
        if callee not in known:
            raise ParseError(f"undefined call target {callee!r}", tok.line, tok.col)
    try:
        validate(prog)
    except ParseError as e:
        if not e.line:
            tok = p.func_tokens.get(getattr(e, "function", ""), None)
            if tok is not None:
                raise ParseError(e.message, tok.line, tok.col) from None
        raise
    return prog


# ---------------------------------------------------------------------------
# Validation


def _fail(fname: str, msg: str) -> ParseError:
    err = ParseError(f"in function {fname!r}: {msg}")
    err.function = fname
    return err


def validate(prog: Program) -> None:
    """Check every structural invariant of a program; raise ParseError otherwise."""
    names = [f.name for f in prog.functions]
    if len(set(names)) != len(names):
        dup = next(n for n in names if names.count(n) > 1)
        raise ParseError(f"duplicate function name {dup!r}")
    if names.count(prog.entry) != 1:
        raise ParseError(f"entry function {prog.entry!r} not defined")
    arity = {f.name: len(f.params) for f in prog.functions}
    for f in prog.functions:
        _validate_function(f, arity)


def _validate_function(f: Function, arity: dict[str, int]) -> None:
    if not f.body:
        raise _fail(f.name, "empty body")
    if not f.body[-1].is_terminator:
        raise _fail(f.name, "last instruction must be return, jump or branch")
    if len(set(f.params)) != len(f.params):
        raise _fail(f.name, "duplicate parameter")
    local_names = [n for n, _ in f.locals]
    if len(set(local_names)) != len(local_names):
        raise _fail(f.name, "duplicate local")
    sizes = dict(f.locals)
    for label, idx in f.labels.items():
        if not 0 <= idx < len(f.body):
            raise _fail(f.name, f"label {label!r} does not precede an instruction")
    points: set[int] = set()
    for ins in f.body:
        if ins.op in ("branch", "jump"):
            for lab in ins.args[1:] if ins.op == "branch" else ins.args:
                if lab not in f.labels:
                    raise _fail(f.name, f"undefined label {lab!r}")
        elif ins.op in ("load-local", "store-local"):
            lname, off = ins.args[0], ins.args[1]
            if lname not in sizes:
                raise _fail(f.name, f"undefined local {lname!r}")
            if off < 0 or off % 8 or off >= sizes[lname]:
                raise _fail(f.name, f"offset {off} outside local {lname!r}")
        elif ins.op == "call":
            callee = ins.args[0]
            if callee not in arity:
                raise _fail(f.name, f"undefined call target {callee!r}")
            if arity[callee] != len(ins.args) - 1:
                raise _fail(f.name, f"call to {callee!r} passes {len(ins.args) - 1} arguments, expected {arity[callee]}")
        elif ins.op == "eqpoint":
            if ins.args[0] in points:
                raise _fail(f.name, f"duplicate equivalence point {ins.args[0]}")
            points.add(ins.args[0])
        for v in ins.uses() + ins.defs():
            if v in sizes:
                raise _fail(f.name, f"{v!r} names a local, not a value")
    _check_defined_before_use(f)


def _check_defined_before_use(f: Function) -> None:
    """Forward must-be-defined dataflow; every use must be covered on all paths."""
    n = len(f.body)
    universe = frozenset(f.values())
    preds: list[list[int]] = [[] for _ in range(n)]
    for i in range(n):
        for s in f.successors(i):
            preds[s].append(i)
    entry = frozenset(f.params)
    out: list[frozenset] = [universe] * n
    changed = True
    while changed:
        changed = False
        for i in range(n):
            if i == 0:
                inn = entry
                for p in preds[i]:
                    inn = inn & out[p]
            elif preds[i]:
                inn = universe
                for p in preds[i]:
                    inn = inn & out[p]
            else:
                inn = universe  # unreachable code: vacuous
            new = inn | frozenset(f.body[i].defs())
            if new != out[i]:
                out[i] = new
                changed = True
    for i, ins in enumerate(f.body):
        if i == 0:
            inn = entry
            for p in preds[i]:
                inn = inn & out[p]
        elif preds[i]:
            inn = universe
            for p in preds[i]:
                inn = inn & out[p]
        else:
            continue
        for v in ins.uses():
            if v not in inn:
                raise _fail(f.name, f"value {v!r} may be used before definition (instruction {i})")


# ---------------------------------------------------------------------------
# Printing


def format_instruction(ins: Instruction) -> str:
    op, a = ins.op, ins.args
    if op == "const":
        body = f"const {a[0]}"
    elif op in ARITH_OPS:
        body = f"{op} {a[0]}, {a[1]}"
    elif op == "cmp":
        body = f"cmp {a[0]} {a[1]}, {a[2]}"
    elif op == "branch":
        body = f"branch {a[0]}, {a[1]}, {a[2]}"
    elif op == "jump":
        body = f"jump {a[0]}"
    elif op == "load-local":
        body = f"load-local {_local_ref(a[0], a[1])}"
    elif op == "store-local":
        body = f"store-local {_local_ref(a[0], a[1])}, {a[2]}"
    elif op == "call":
        body = f"call {a[0]}({', '.join(a[1:])})"
    else:  # return, eqpoint, print
        body = f"{op} {a[0]}"
    return f"{ins.dest} = {body}" if ins.dest is not None else body


def _local_ref(name: str, off: int) -> str:
    return f"{name}+{off}" if off else name


def print_function(f: Function) -> str:
    at: dict[int, list[str]] = {}
    for label, idx in f.labels.items():
        at.setdefault(idx, []).append(label)
    lines = [f"fn {f.name}({', '.join(f.params)}) {{"]
    for name, size in f.locals:
        lines.append(f"  local {name} {size}")
    for i, ins in enumerate(f.body):
        for label in sorted(at.get(i, ())):
            lines.append(f"{label}:")
        lines.append("  " + format_instruction(ins))
    lines.append("}")
    return "\n".join(lines) + "\n"


def print_program(p: Program) -> str:
    """Canonical text for ``p``; equal programs print identically."""
    return "\n".join(print_function(f) for f in p.functions)

"""Lowering from IR to machine code for one abstract ISA.

Machine instructions are tuples over physical registers (plain ``int``) and
frame memory operands (:class:`Mem`):

=====================  ==================================================
``("movi", d, imm)``   load an immediate (``d`` may be memory on CISC)
``("mov", d, s)``      register copy, load (``s`` memory) or store (``d``)
``("alu", op, d, a, b)`` ``d = a op b``; ``op`` is an arithmetic opcode or
                       a comparison predicate.  CISC allows one memory
                       operand, RISC none.
``("br", c, t, f)``    branch to pc ``t`` if ``c != 0`` else ``f``
``("jmp", t)``
``("call", k)``        call function index ``k``; pushes the return address
``("prologue", fs)``   save FP below the return address, FP = SP, SP -= fs
``("epilogue",)``      SP = FP, reload FP
``("ret",)``
``("eqp", id)``        equivalence point
``("print", s)``
=====================  ==================================================

Register-to-register moves are never elided, so dynamic instruction counts
depend only on whether each value lives in a register or a slot.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

from .frame import FrameLayout, compute_frame_layout
from .ir import ARITH_OPS, Function, Program
from .iropt import eliminate_redundant_loads
from .isa import CISC, CallingConvention, ISADescriptor
from .regalloc import AllocationResult, Loc, allocate_registers


class Mem(NamedTuple):
    base: int  # FP or SP register index
    off: int
    kind: str  # spill | local | save | arg | outarg


@dataclass(frozen=True)
class FrameDescriptor:
    """Where every live value of one frame sits at one resumable point.

    ``kind`` is ``"eqpoint"`` (point = equivalence-point id) or ``"callsite"``
    (point = index of the IR call instruction, the resume id of outer frames).
    Slot locations are FP-relative byte offsets.
    """

    function: str
    kind: str
    point: int
    live_values: tuple[tuple[str, Loc], ...]
    frame_size: int
    callee_saved_layout: tuple[tuple[int, int], ...]
    locals: tuple[tuple[str, int, int], ...]
    ra_offset: int = -8
    saved_fp_offset: int = -16

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.function, self.kind, self.point)

    @property
    def values(self) -> dict[str, Loc]:
        return dict(self.live_values)

    def to_dict(self) -> dict:
        return {
            "function": self.function,
            "kind": self.kind,
            "point": self.point,
            "frame_size": self.frame_size,
            "ra_offset": self.ra_offset,
            "saved_fp_offset": self.saved_fp_offset,
            "callee_saved": [{"reg": r, "offset": o} for r, o in self.callee_saved_layout],
            "locals": [{"local": n, "offset": o, "size": s} for n, o, s in self.locals],
            "entries": [{"value": v, "kind": loc.kind, "index_or_offset": loc.index}
                        for v, loc in self.live_values],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrameDescriptor":
        return cls(
            d["function"], d["kind"], d["point"],
            tuple((e["value"], Loc(e["kind"], e["index_or_offset"])) for e in d["entries"]),
            d["frame_size"],
            tuple((c["reg"], c["offset"]) for c in d["callee_saved"]),
            tuple((x["local"], x["offset"], x["size"]) for x in d["locals"]),
            d.get("ra_offset", -8), d.get("saved_fp_offset", -16),
        )


@dataclass
class FrameMetadata:
    """All descriptors of one lowered program plus the ABI they were built for."""

    isa: ISADescriptor
    convention: CallingConvention
    descriptors: list[FrameDescriptor]
    params: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        self._by_key = {d.key: d for d in self.descriptors}

    def get(self, function: str, kind: str, point: int) -> FrameDescriptor | None:
        return self._by_key.get((function, kind, point))

    def keys(self) -> list[tuple[str, str, int]]:
        return [d.key for d in self.descriptors]

    def eqpoint_descriptors(self) -> list[FrameDescriptor]:
        return [d for d in self.descriptors if d.kind == "eqpoint"]

    def to_json(self) -> str:
        """Canonical sidecar text; no ISA name, so uniform pairs compare byte for byte."""
        doc = {"format": "unistack-meta", "version": 1,
               "descriptors": [d.to_dict() for d in self.descriptors]}
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str, isa: ISADescriptor, cc: CallingConvention | None = None) -> "FrameMetadata":
        doc = json.loads(text)
        return cls(isa, cc or isa.convention, [FrameDescriptor.from_dict(d) for d in doc["descriptors"]])


@dataclass
class MachineFunction:
    name: str
    code: list[tuple]
    frame: FrameLayout
    allocation: AllocationResult
    arity: int
    callsites: dict[int, int]  # IR call index -> pc of the call instruction
    eqpoints: dict[int, int]  # point id -> pc of the eqp instruction

    def __post_init__(self):
        self.callsite_at_pc = {pc: i for i, pc in self.callsites.items()}


@dataclass
class MachineProgram:
    functions: list[MachineFunction]
    isa: ISADescriptor
    convention: CallingConvention
    entry: int

    def __post_init__(self):
        self.index = {f.name: k for k, f in enumerate(self.functions)}

    def function(self, name: str) -> MachineFunction:
        return self.functions[self.index[name]]

    def static_instruction_count(self) -> int:
        return sum(len(f.code) for f in self.functions)

    def to_json(self) -> str:
        def enc(x):
            if isinstance(x, Mem):
                return {"base": x.base, "off": x.off, "kind": x.kind}
            return x

        doc = {
            "format": "unistack-mprog",
            "version": 1,
            "isa": self.isa.to_dict(),
            "convention": self.convention.to_dict(),
            "entry": self.functions[self.entry].name,
            "functions": [
                {
                    "name": f.name,
                    "arity": f.arity,
                    "frame_size": f.frame.frame_size,
                    "code": [[enc(x) for x in ins] for ins in f.code],
                }
                for f in self.functions
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def render_operand(x, isa: ISADescriptor) -> str:
    if isinstance(x, Mem):
        return f"[{isa.reg_name(x.base)}{x.off:+d}]"
    return isa.reg_name(x)


def render_function(mf: MachineFunction, isa: ISADescriptor) -> str:
    """Assembly-like listing, for humans only."""
    lines = [f"{mf.name}:  ; frame {mf.frame.frame_size} bytes"]
    for pc, ins in enumerate(mf.code):
        op = ins[0]
        if op == "alu":
            text = f"{ins[1]} " + ", ".join(render_operand(x, isa) for x in ins[2:])
        elif op in ("mov", "print"):
            text = f"{op} " + ", ".join(render_operand(x, isa) for x in ins[1:])
        elif op == "movi":
            text = f"movi {render_operand(ins[1], isa)}, {ins[2]}"
        else:
            text = " ".join(str(x) for x in ins)
        lines.append(f"  {pc:4d}  {text}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------


def _is_mem(x) -> bool:
    return type(x) is not int


def parallel_move(moves: list[tuple], s0: int, s1: int) -> list[tuple]:
    """Sequence simultaneous ``(dst, src)`` moves.

    Memory destinations go first (they only read), then register-to-register
    moves with cycles broken through ``s0``, then loads and immediates.  A
    memory-to-memory move goes through ``s1``.  ``src`` may be ``("imm", k)``.
    Memory destinations must not alias memory sources (callers only write
    outgoing-argument or fresh frame slots).
    """
    out: list[tuple] = []
    regs: dict[int, int] = {}
    late: list[tuple] = []
    for d, s in moves:
        imm = isinstance(s, tuple) and not isinstance(s, Mem)
        if _is_mem(d):
            if imm:
                out.append(("movi", s1, s[1]))
                out.append(("mov", d, s1))
            elif _is_mem(s):
                out.append(("mov", s1, s))
                out.append(("mov", d, s1))
            else:
                out.append(("mov", d, s))
        elif imm:
            late.append(("movi", d, s[1]))
        elif _is_mem(s):
            late.append(("mov", d, s))
        else:
            if d in regs:
                raise ValueError(f"register {d} written twice in a parallel move")
            regs[d] = s
    for d in [d for d, s in regs.items() if d == s]:
        out.append(("mov", d, d))
        del regs[d]
    while regs:
        sources = set(regs.values())
        ready = [d for d in regs if d not in sources]
        if ready:
            d = ready[0]
            out.append(("mov", d, regs.pop(d)))
            continue
        d = next(iter(regs))
        out.append(("mov", s0, d))
        for k, s in regs.items():
            if s == d:
                regs[k] = s0
    out.extend(late)
    return out


class _FunctionLowering:
    def __init__(self, f: Function, isa: ISADescriptor, cc: CallingConvention, index: dict[str, int],
                 arities: dict[str, int]):
        self.f = f
        self.isa = isa
        self.cc = cc
        self.index = index
        self.arities = arities
        self.cisc = isa.style == CISC
        self.fp = isa.frame_pointer
        self.sp = isa.stack_pointer
        self.s0, self.s1 = cc.scratch_registers
        self.alloc = allocate_registers(f, isa, cc)
        self.frame = compute_frame_layout(f, self.alloc, cc)
        self.code: list[tuple] = []
        self.fixups: list[tuple[int, int, str]] = []  # (pc, operand position, label)
        self.callsites: dict[int, int] = {}
        self.eqpoints: dict[int, int] = {}

    def loc(self, v: str):
        loc = self.alloc.locations[v]
        if loc.is_reg:
            return loc.index
        return Mem(self.fp, self.frame.spill_slots[loc.index], "spill")

    def desc_loc(self, v: str) -> Loc:
        loc = self.alloc.locations[v]
        return loc if loc.is_reg else Loc("slot", self.frame.spill_slots[loc.index])

    def emit(self, *ins) -> None:
        self.code.append(tuple(ins))

    def reg_operand(self, x, scratch: int):
        """Bring ``x`` into a register for RISC (or for an extra CISC memory operand)."""
        if _is_mem(x):
            self.emit("mov", scratch, x)
            return scratch
        return x

    def lower_alu(self, op: str, d: str, a: str, b: str) -> None:
        ld, la, lb = self.loc(d), self.loc(a), self.loc(b)
        if self.cisc:
            mems = _is_mem(ld) + _is_mem(la) + _is_mem(lb)
            if mems <= 1:
                self.emit("alu", op, ld, la, lb)
                return
            if _is_mem(la) and _is_mem(lb):
                lb = self.reg_operand(lb, self.s1)
            if _is_mem(ld) and (_is_mem(la) or _is_mem(lb)):
                self.emit("alu", op, self.s0, la, lb)
                self.emit("mov", ld, self.s0)
            else:
                self.emit("alu", op, ld, la, lb)
            return
        la = self.reg_operand(la, self.s0)
        lb = self.reg_operand(lb, self.s1)
        dst = self.s0 if _is_mem(ld) else ld
        self.emit("alu", op, dst, la, lb)
        if _is_mem(ld):
            self.emit("mov", ld, self.s0)

    def copy(self, d, s) -> None:
        if _is_mem(d) and _is_mem(s):
            self.emit("mov", self.s0, s)
            self.emit("mov", d, self.s0)
        else:
            self.emit("mov", d, s)

    def lower(self) -> MachineFunction:
        f, cc, frame = self.f, self.cc, self.frame
        nargs = len(cc.arg_registers)
        self.emit("prologue", frame.frame_size)
        for r, off in frame.callee_saved:
            self.emit("mov", Mem(self.fp, off, "save"), r)
        entry_moves = []
        for j, p in enumerate(f.params):
            if p not in self.alloc.locations:
                continue  # never used
            src = cc.arg_registers[j] if j < nargs else Mem(self.fp, 8 * (j - nargs), "arg")
            entry_moves.append((self.loc(p), src))
        self.code.extend(parallel_move(entry_moves, self.s0, self.s1))

        label_pc: dict[str, int] = {}
        at_label: dict[int, list[str]] = {}
        for lab, idx in f.labels.items():
            at_label.setdefault(idx, []).append(lab)
        for i, ins in enumerate(f.body):
            for lab in at_label.get(i, ()):
                label_pc[lab] = len(self.code)
            self.lower_instruction(i, ins)
        for lab, idx in f.labels.items():
            label_pc.setdefault(lab, len(self.code))
        for pc, pos, lab in self.fixups:
            ins = list(self.code[pc])
            ins[pos] = label_pc[lab]
            self.code[pc] = tuple(ins)
        return MachineFunction(f.name, self.code, frame, self.alloc, len(f.params),
                               self.callsites, self.eqpoints)

    def lower_instruction(self, i: int, ins) -> None:
        op, a = ins.op, ins.args
        cc = self.cc
        if op == "const":
            d = self.loc(ins.dest)
            if _is_mem(d) and not self.cisc:
                self.emit("movi", self.s0, a[0])
                self.emit("mov", d, self.s0)
            else:
                self.emit("movi", d, a[0])
        elif op in ARITH_OPS:
            self.lower_alu(op, ins.dest, a[0], a[1])
        elif op == "cmp":
            self.lower_alu(a[0], ins.dest, a[1], a[2])
        elif op == "branch":
            c = self.loc(a[0])
            if not self.cisc:
                c = self.reg_operand(c, self.s0)
            self.fixups.append((len(self.code), 2, a[1]))
            self.fixups.append((len(self.code), 3, a[2]))
            self.emit("br", c, None, None)
        elif op == "jump":
            self.fixups.append((len(self.code), 1, a[0]))
            self.emit("jmp", None)
        elif op == "load-local":
            m = Mem(self.fp, self.frame.local_offset(a[0]) + a[1], "local")
            self.copy(self.loc(ins.dest), m)
        elif op == "store-local":
            m = Mem(self.fp, self.frame.local_offset(a[0]) + a[1], "local")
            self.copy(m, self.loc(a[2]))
        elif op == "call":
            nargs = len(cc.arg_registers)
            moves = []
            for j, v in enumerate(a[1:]):
                dst = cc.arg_registers[j] if j < nargs else Mem(self.sp, 8 * (j - nargs), "outarg")
                moves.append((dst, self.loc(v)))
            self.code.extend(parallel_move(moves, self.s0, self.s1))
            self.callsites[i] = len(self.code)
            self.emit("call", self.index[a[0]])
            if ins.dest is not None and ins.dest in self.alloc.locations:
                self.emit("mov", self.loc(ins.dest), cc.return_register)
        elif op == "return":
            if isinstance(a[0], int):
                self.emit("movi", cc.return_register, a[0])
            else:
                self.emit("mov", cc.return_register, self.loc(a[0]))
            for r, off in self.frame.callee_saved:
                self.emit("mov", r, Mem(self.fp, off, "save"))
            self.emit("epilogue")
            self.emit("ret")
        elif op == "eqpoint":
            self.eqpoints[a[0]] = len(self.code)
            self.emit("eqp", a[0])
        elif op == "print":
            v = self.loc(a[0])
            if not self.cisc:
                v = self.reg_operand(v, self.s0)
            self.emit("print", v)
        else:  # pragma: no cover - validate() rejects unknown opcodes
            raise ValueError(f"cannot lower {op}")

    def descriptors(self) -> list[FrameDescriptor]:
        f, live = self.f, self.alloc.live
        out = []
        common = (self.frame.frame_size, self.frame.callee_saved, self.frame.locals)

        def make(kind, point, values):
            entries = tuple((v, self.desc_loc(v)) for v in sorted(values))
            return FrameDescriptor(f.name, kind, point, entries, *common)

        points = sorted((ins.args[0], i) for i, ins in enumerate(f.body) if ins.op == "eqpoint")
        for pid, i in points:
            out.append(make("eqpoint", pid, live.live_in[i]))
        for i, ins in enumerate(f.body):
            if ins.op == "call":
                out.append(make("callsite", i, live.live_out[i] - frozenset(ins.defs())))
        return out


def lower(p: Program, isa: ISADescriptor, cc: CallingConvention | None = None,
          load_elim: bool = False) -> tuple[MachineProgram, FrameMetadata]:
    """Lower ``p`` for ``isa`` under ``cc`` (default: the ISA's own convention)."""
    cc = cc or isa.convention
    if load_elim:
        p = eliminate_redundant_loads(p)
    index = {f.name: k for k, f in enumerate(p.functions)}
    arities = {f.name: len(f.params) for f in p.functions}
    funcs, descs = [], []
    for f in p.functions:
        fl = _FunctionLowering(f, isa, cc, index, arities)
        funcs.append(fl.lower())
        descs.extend(fl.descriptors())
    mp = MachineProgram(funcs, isa, cc, index[p.entry])
    meta = FrameMetadata(isa, cc, descs, {f.name: f.params for f in p.functions})
    return mp, meta

"""Machine-code interpreter with dynamic metrics, pause/resume and snapshots.

Stack memory is a list of 64-bit words addressed in bytes (address ``a`` is
word ``a >> 3``); the stack grows down from the top.  A return address is
encoded as ``function_index * 2**20 + pc``; ``HALT`` marks the entry frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .ir import div64, eval_cmp, wrap64
from .lower import FrameDescriptor, FrameMetadata, MachineProgram, Mem
from .snapshot import ActivationRecord, Binding, StackSnapshot

HALT = -1
RA_SHIFT = 20
RA_MASK = (1 << RA_SHIFT) - 1
DEFAULT_STACK_BYTES = 1 << 20


class VMError(RuntimeError):
    """Runtime trap with the function and pc where it happened."""

    def __init__(self, message: str, function: str | None = None, pc: int | None = None):
        where = f" in {function} at pc {pc}" if function is not None else ""
        super().__init__(message + where)
        self.function = function
        self.pc = pc


class StackOverflow(VMError):
    pass


class DivisionByZero(VMError):
    pass


class MemoryFault(VMError):
    pass


class AlignmentFault(VMError):
    pass


class SnapshotMismatch(VMError):
    pass


@dataclass
class RunMetrics:
    dynamic_instruction_count: int = 0
    dynamic_load_count: int = 0
    dynamic_store_count: int = 0
    dynamic_spill_load_count: int = 0
    dynamic_spill_store_count: int = 0
    max_call_depth: int = 0
    equivalence_points_hit: int = 0
    loads_by_kind: dict[str, int] = field(default_factory=dict)
    stores_by_kind: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "dynamic_instruction_count": self.dynamic_instruction_count,
            "dynamic_load_count": self.dynamic_load_count,
            "dynamic_store_count": self.dynamic_store_count,
            "dynamic_spill_load_count": self.dynamic_spill_load_count,
            "dynamic_spill_store_count": self.dynamic_spill_store_count,
            "max_call_depth": self.max_call_depth,
            "equivalence_points_hit": self.equivalence_points_hit,
        }


@dataclass
class MachineState:
    program: MachineProgram
    regs: list[int]
    mem: list[int]
    func: int
    pc: int
    depth: int
    output: list[int] = field(default_factory=list)
    metrics: RunMetrics = field(default_factory=RunMetrics)
    checked: bool = True
    halted: bool = False
    exit_value: int | None = None
    last_point: tuple[str, int] | None = None

    @property
    def stack_bytes(self) -> int:
        return len(self.mem) * 8

    @property
    def sp(self) -> int:
        return self.regs[self.program.isa.stack_pointer]

    @property
    def fp(self) -> int:
        return self.regs[self.program.isa.frame_pointer]

    def read_word(self, addr: int) -> int:
        if addr % 8 or not 0 <= addr < self.stack_bytes:
            raise MemoryFault(f"bad stack address {addr}")
        return self.mem[addr >> 3]


class ProgramTerminated(Exception):
    """The program finished before the stop predicate fired."""

    def __init__(self, exit_value: int, output: list[int], metrics: RunMetrics):
        super().__init__(f"program terminated with exit value {exit_value} before the stop point")
        self.exit_value = exit_value
        self.output = output
        self.metrics = metrics


Stop = Callable[[int, str, int], bool]


def nth_hit(k: int) -> Stop:
    """Stop predicate firing on the ``k``-th equivalence-point hit (1-based)."""
    return lambda hits, function, point: hits == k


def _round16(n: int) -> int:
    return (n + 15) // 16 * 16


def _entry_sp(mp: MachineProgram, stack_bytes: int) -> int:
    nargs = len(mp.convention.arg_registers)
    over = max(0, mp.functions[mp.entry].arity - nargs)
    return stack_bytes - _round16(8 * over)


def initial_state(mp: MachineProgram, inputs=(), stack_bytes: int = DEFAULT_STACK_BYTES,
                  checked: bool = True) -> MachineState:
    entry = mp.functions[mp.entry]
    if len(inputs) != entry.arity:
        raise VMError(f"{entry.name} expects {entry.arity} inputs, got {len(inputs)}")
    if stack_bytes % 16 or stack_bytes < 64:
        raise VMError("stack size must be a multiple of 16 and at least 64 bytes")
    isa, cc = mp.isa, mp.convention
    regs = [0] * isa.gpr_count
    mem = [0] * (stack_bytes // 8)
    sp = _entry_sp(mp, stack_bytes)
    nargs = len(cc.arg_registers)
    for j, x in enumerate(inputs):
        if j < nargs:
            regs[cc.arg_registers[j]] = wrap64(x)
        else:
            mem[(sp + 8 * (j - nargs)) >> 3] = wrap64(x)
    mem[(sp - 8) >> 3] = HALT
    regs[isa.stack_pointer] = sp
    regs[isa.frame_pointer] = stack_bytes
    st = MachineState(mp, regs, mem, mp.entry, 0, 1, checked=checked)
    st.metrics.max_call_depth = 1
    return st


def execute(st: MachineState, stop: Stop | None = None, max_steps: int = 50_000_000) -> MachineState:
    """Run ``st`` until it halts or ``stop`` fires right after an ``eqp``."""
    if st.halted:
        return st
    mp = st.program
    funcs = mp.functions
    regs, mem, m = st.regs, st.mem, st.metrics
    SP, FP = mp.isa.stack_pointer, mp.isa.frame_pointer
    ret_reg = mp.convention.return_register
    checked = st.checked
    nbytes = len(mem) * 8
    loads, stores = m.loads_by_kind, m.stores_by_kind
    func, pc = st.func, st.pc
    code = funcs[func].code
    steps = 0
    depth = st.depth

    def fault(exc, msg):
        return exc(msg, funcs[func].name, pc - 1)

    def addr_of(x: Mem) -> int:
        a = regs[x.base] + x.off
        if checked and (a & 7 or a < 0 or a >= nbytes):
            raise fault(MemoryFault, f"out-of-bounds stack access at {a}")
        return a >> 3

    try:
        while True:
            ins = code[pc]
            pc += 1
            steps += 1
            op = ins[0]
            if op == "mov":
                d, s = ins[1], ins[2]
                if type(s) is int:
                    val = regs[s]
                else:
                    val = mem[addr_of(s)]
                    loads[s.kind] = loads.get(s.kind, 0) + 1
                if type(d) is int:
                    regs[d] = val
                else:
                    mem[addr_of(d)] = val
                    stores[d.kind] = stores.get(d.kind, 0) + 1
            elif op == "alu":
                o, d, a, b = ins[1], ins[2], ins[3], ins[4]
                if type(a) is int:
                    x = regs[a]
                else:
                    x = mem[addr_of(a)]
                    loads[a.kind] = loads.get(a.kind, 0) + 1
                if type(b) is int:
                    y = regs[b]
                else:
                    y = mem[addr_of(b)]
                    loads[b.kind] = loads.get(b.kind, 0) + 1
                if o == "add":
                    r = wrap64(x + y)
                elif o == "sub":
                    r = wrap64(x - y)
                elif o == "mul":
                    r = wrap64(x * y)
                elif o == "div":
                    if y == 0:
                        raise fault(DivisionByZero, "division by zero")
                    r = div64(x, y)
                else:
                    r = eval_cmp(o, x, y)
                if type(d) is int:
                    regs[d] = r
                else:
                    mem[addr_of(d)] = r
                    stores[d.kind] = stores.get(d.kind, 0) + 1
            elif op == "movi":
                d = ins[1]
                if type(d) is int:
                    regs[d] = wrap64(ins[2])
                else:
                    mem[addr_of(d)] = wrap64(ins[2])
                    stores[d.kind] = stores.get(d.kind, 0) + 1
            elif op == "br":
                c = ins[1]
                if type(c) is int:
                    val = regs[c]
                else:
                    val = mem[addr_of(c)]
                    loads[c.kind] = loads.get(c.kind, 0) + 1
                pc = ins[2] if val != 0 else ins[3]
            elif op == "jmp":
                pc = ins[1]
            elif op == "call":
                sp = regs[SP]
                if checked and sp % 16:
                    raise fault(AlignmentFault, f"sp {sp} not 16-byte aligned at call")
                if sp - 8 < 0:
                    raise fault(StackOverflow, "stack overflow")
                mem[(sp - 8) >> 3] = func << RA_SHIFT | pc
                stores["frame"] = stores.get("frame", 0) + 1
                depth += 1
                if depth > m.max_call_depth:
                    m.max_call_depth = depth
                func = ins[1]
                code = funcs[func].code
                pc = 0
            elif op == "prologue":
                sp = regs[SP]
                new_sp = sp - ins[1]
                if new_sp < 0:
                    raise fault(StackOverflow, f"stack overflow (need {ins[1]} bytes below {sp})")
                mem[(sp - 16) >> 3] = regs[FP]
                stores["frame"] = stores.get("frame", 0) + 1
                regs[FP] = sp
                regs[SP] = new_sp
            elif op == "epilogue":
                fp = regs[FP]
                regs[SP] = fp
                regs[FP] = mem[(fp - 16) >> 3]
                loads["frame"] = loads.get("frame", 0) + 1
            elif op == "ret":
                ra = mem[(regs[SP] - 8) >> 3]
                loads["frame"] = loads.get("frame", 0) + 1
                depth -= 1
                if ra == HALT:
                    st.halted = True
                    st.exit_value = regs[ret_reg]
                    break
                func, pc = ra >> RA_SHIFT, ra & RA_MASK
                code = funcs[func].code
            elif op == "eqp":
                m.equivalence_points_hit += 1
                name = funcs[func].name
                st.last_point = (name, ins[1])
                if stop is not None and stop(m.equivalence_points_hit, name, ins[1]):
                    break
            elif op == "print":
                s = ins[1]
                if type(s) is int:
                    st.output.append(regs[s])
                else:
                    st.output.append(mem[addr_of(s)])
                    loads[s.kind] = loads.get(s.kind, 0) + 1
            else:
                raise fault(VMError, f"bad opcode {op!r}")
            if steps > max_steps:
                raise fault(VMError, "step limit exceeded")
    finally:
        st.func, st.pc, st.depth = func, pc, depth
        m.dynamic_instruction_count += steps
        m.dynamic_load_count = sum(loads.values())
        m.dynamic_store_count = sum(stores.values())
        m.dynamic_spill_load_count = loads.get("spill", 0)
        m.dynamic_spill_store_count = stores.get("spill", 0)
    return st


def run(mp: MachineProgram, inputs=(), stack_bytes: int = DEFAULT_STACK_BYTES,
        checked: bool = True) -> tuple[int, list[int], RunMetrics]:
    st = execute(initial_state(mp, inputs, stack_bytes, checked))
    return st.exit_value, st.output, st.metrics


def run_until_point(mp: MachineProgram, inputs=(), stop: Stop | None = None,
                    stack_bytes: int = DEFAULT_STACK_BYTES, checked: bool = True) -> tuple[MachineState, RunMetrics]:
    """Run until ``stop`` fires at an equivalence point.

    Raises :class:`ProgramTerminated` if the program finishes first; with
    ``stop=None`` that always happens.
    """
    st = execute(initial_state(mp, inputs, stack_bytes, checked), stop)
    if st.halted:
        raise ProgramTerminated(st.exit_value, st.output, st.metrics)
    return st, st.metrics


def resume(st: MachineState, stop: Stop | None = None) -> MachineState:
    return execute(st, stop)


# ---------------------------------------------------------------------------
# Snapshots


def _frames(st: MachineState) -> list[tuple[int, str, int, int]]:
    """Unwind the FP chain: ``(function index, kind, point, fp)`` innermost first."""
    mp = st.program
    if st.halted or st.pc == 0 or mp.functions[st.func].code[st.pc - 1][0] != "eqp":
        raise SnapshotMismatch("state is not halted at an equivalence point")
    fp = st.fp
    frames = [(st.func, "eqpoint", mp.functions[st.func].code[st.pc - 1][1], fp)]
    while True:
        ra = st.read_word(fp - 8)
        if ra == HALT:
            break
        k, rpc = ra >> RA_SHIFT, ra & RA_MASK
        mf = mp.functions[k]
        site = mf.callsite_at_pc.get(rpc - 1)
        if site is None:
            raise SnapshotMismatch(f"return address {ra} is not a call site", mf.name, rpc)
        fp = st.read_word(fp - 16)
        frames.append((k, "callsite", site, fp))
    return frames


def canonical_saves(descs: list[FrameDescriptor]) -> list[dict[int, int | None]]:
    """Which binding each save-area word must hold, outermost first.

    Returns for each frame a map register -> index into ``descs`` of the
    frame whose register-resident value it preserves paired with that
    value id, or ``None`` when no live value depends on the word.
    """
    view: dict[int, tuple[int, str]] = {}
    out = []
    for j, d in enumerate(descs):
        saved = {}
        for r, _ in d.callee_saved_layout:
            saved[r] = view.pop(r, None)
        out.append(saved)
        for v, loc in d.live_values:
            if loc.is_reg:
                view[loc.index] = (j, v)
    return out


def resolve_saves(descs: list[FrameDescriptor], values: list[dict[str, int]]) -> list[dict[int, int]]:
    """Concrete save-area contents implied by the bindings (0 where nothing is live)."""
    out = []
    for saved in canonical_saves(descs):
        out.append({r: (0 if src is None else values[src[0]][src[1]]) for r, src in saved.items()})
    return out


def final_registers(descs: list[FrameDescriptor], values: list[dict[str, int]]) -> dict[int, int]:
    view: dict[int, int] = {}
    for j, d in enumerate(descs):
        for r, _ in d.callee_saved_layout:
            view.pop(r, None)
        for v, loc in d.live_values:
            if loc.is_reg:
                view[loc.index] = values[j][v]
    return view


def capture_snapshot(st: MachineState, meta: FrameMetadata) -> StackSnapshot:
    """Read every live value of every frame through the frame metadata."""
    mp = st.program
    frames = _frames(st)
    descs: list[FrameDescriptor] = []
    for k, kind, point, _ in frames:
        d = meta.get(mp.functions[k].name, kind, point)
        if d is None:
            raise SnapshotMismatch(f"no frame descriptor for {mp.functions[k].name} {kind} {point}")
        descs.append(d)

    # register contents as seen by each frame, innermost first
    reg_view = list(st.regs)
    per_frame_regs = []
    for (k, kind, point, fp), d in zip(frames, descs):
        per_frame_regs.append(list(reg_view))
        for r, off in d.callee_saved_layout:
            reg_view[r] = st.read_word(fp + off)

    frames, descs, per_frame_regs = frames[::-1], descs[::-1], per_frame_regs[::-1]
    values: list[dict[str, int]] = []
    raw_locals = []
    for (k, kind, point, fp), d, regs in zip(frames, descs, per_frame_regs):
        vals = {}
        for v, loc in d.live_values:
            vals[v] = regs[loc.index] if loc.is_reg else st.read_word(fp + loc.index)
        values.append(vals)
        words = {}
        for name, off, size in d.locals:
            for w in range(0, size, 8):
                words[(name, w)] = st.read_word(fp + off + w)
        raw_locals.append(words)

    saves = resolve_saves(descs, values)
    for (k, kind, point, fp), d, saved, srcs in zip(frames, descs, saves, canonical_saves(descs)):
        for r, off in d.callee_saved_layout:
            if srcs[r] is not None and st.read_word(fp + off) != saved[r]:
                raise SnapshotMismatch(f"save slot of register {r} disagrees with the live value it preserves",
                                       d.function)

    records = []
    for d, vals, words, saved in zip(descs, values, raw_locals, saves):
        bindings = {v: Binding(vals[v], loc) for v, loc in d.live_values}
        records.append(ActivationRecord(d.function, d.kind, d.point, d.frame_size, bindings, words, saved))
    return StackSnapshot(tuple(records))


def check_snapshot(snap: StackSnapshot, meta: FrameMetadata) -> list[FrameDescriptor]:
    """Match every record to its descriptor; raise on any disagreement."""
    if not snap.records:
        raise SnapshotMismatch("empty snapshot cannot be restored")
    descs = []
    for j, rec in enumerate(snap.records):
        want = "eqpoint" if j == len(snap.records) - 1 else "callsite"
        if rec.kind != want:
            raise SnapshotMismatch(f"record {j} ({rec.function}) should be a {want} record")
        d = meta.get(rec.function, rec.kind, rec.point)
        if d is None:
            raise SnapshotMismatch(f"unknown point: {rec.function} {rec.kind} {rec.point}")
        expected = d.values
        missing = sorted(set(expected) - set(rec.bindings))
        extra = sorted(set(rec.bindings) - set(expected))
        if missing:
            raise SnapshotMismatch(f"missing binding for value {missing[0]!r} in {rec.function} {rec.kind} {rec.point}")
        if extra:
            raise SnapshotMismatch(f"unexpected binding for value {extra[0]!r} in {rec.function} {rec.kind} {rec.point}")
        for v, b in rec.bindings.items():
            if b.loc != expected[v]:
                raise SnapshotMismatch(f"value {v!r} in {rec.function}: snapshot location {tuple(b.loc)} "
                                       f"differs from metadata {tuple(expected[v])}")
        if rec.frame_size != d.frame_size:
            raise SnapshotMismatch(f"frame size of {rec.function} differs from metadata")
        descs.append(d)
    return descs


def restore_snapshot(snap: StackSnapshot, mp: MachineProgram, meta: FrameMetadata,
                     stack_bytes: int = DEFAULT_STACK_BYTES, checked: bool = True) -> MachineState:
    """Build a machine state on ``mp`` that resumes right after the snapshot's point."""
    descs = check_snapshot(snap, meta)
    isa = mp.isa
    regs = [0] * isa.gpr_count
    mem = [0] * (stack_bytes // 8)

    def put(addr: int, word: int) -> None:
        if addr % 8 or not 0 <= addr < stack_bytes:
            raise StackOverflow("snapshot does not fit in the destination stack")
        mem[addr >> 3] = word

    fp_prev, fp = stack_bytes, _entry_sp(mp, stack_bytes)
    caller_ra = HALT
    for j, (rec, d) in enumerate(zip(snap.records, descs)):
        put(fp - 8, caller_ra)
        put(fp - 16, fp_prev)
        for v, loc in d.live_values:
            if not loc.is_reg:
                put(fp + loc.index, rec.bindings[v].value)
        for name, off, size in d.locals:
            for w in range(0, size, 8):
                put(fp + off + w, rec.locals.get((name, w), 0))
        for r, off in d.callee_saved_layout:
            put(fp + off, rec.saved_callee.get(r, 0))
        if j < len(descs) - 1:
            mf = mp.function(rec.function)
            caller_ra = mp.index[rec.function] << RA_SHIFT | (mf.callsites[rec.point] + 1)
            fp_prev, fp = fp, fp - d.frame_size
    inner = descs[-1]
    values = [r.values() for r in snap.records]
    for r, val in final_registers(descs, values).items():
        regs[r] = val
    regs[isa.frame_pointer] = fp
    regs[isa.stack_pointer] = fp - inner.frame_size
    if regs[isa.stack_pointer] < 0:
        raise StackOverflow("snapshot does not fit in the destination stack")
    mf = mp.function(inner.function)
    st = MachineState(mp, regs, mem, mp.index[inner.function], mf.eqpoints[inner.point] + 1,
                      len(descs), checked=checked)
    st.metrics.max_call_depth = len(descs)
    st.last_point = (inner.function, inner.point)
    return st

"""Frame layout computation.

Offsets are relative to the frame pointer, which holds the stack pointer
value at the call instruction (the canonical frame address).  From high to
low addresses::

    FP + 8k        incoming overflow argument k
    FP - 8         return address
    FP - 16        saved FP
    ...            callee-saved save area, ascending register index
    ...            spill slots, ascending slot id
    ...            locals, declaration order
    (padding)
    SP + 8k        outgoing overflow argument k

``frame_size`` spans the return address down to SP and is a multiple of 16.
"""
from __future__ import annotations

from dataclasses import dataclass

from .ir import Function
from .isa import CallingConvention
from .regalloc import AllocationResult

RA_OFFSET = -8
SAVED_FP_OFFSET = -16


@dataclass(frozen=True)
class FrameLayout:
    frame_size: int
    callee_saved: tuple[tuple[int, int], ...]  # (register, offset)
    spill_slots: tuple[int, ...]  # offset of slot id i
    locals: tuple[tuple[str, int, int], ...]  # (name, offset, size)
    incoming_args: int
    outgoing_args: int
    ra_offset: int = RA_OFFSET
    saved_fp_offset: int = SAVED_FP_OFFSET

    def regions(self) -> list[tuple[str, int, int]]:
        """``(name, low, high)`` byte ranges (high exclusive), high to low address."""
        out = []
        if self.incoming_args:
            out.append(("incoming-args", 0, 8 * self.incoming_args))
        out.append(("return-address", -8, 0))
        out.append(("saved-fp", -16, -8))
        for r, off in self.callee_saved:
            out.append((f"save:{r}", off, off + 8))
        for i, off in enumerate(self.spill_slots):
            out.append((f"spill:{i}", off, off + 8))
        for name, off, size in self.locals:
            out.append((f"local:{name}", off, off + size))
        if self.outgoing_args:
            lo = -self.frame_size
            out.append(("outgoing-args", lo, lo + 8 * self.outgoing_args))
        return out

    def local_offset(self, name: str) -> int:
        for n, off, _ in self.locals:
            if n == name:
                return off
        raise KeyError(name)

    def save_offset(self, reg: int) -> int:
        return dict(self.callee_saved)[reg]


def _round16(n: int) -> int:
    return (n + 15) // 16 * 16


def compute_frame_layout(f: Function, alloc: AllocationResult, cc: CallingConvention) -> FrameLayout:
    nargs = len(cc.arg_registers)
    saves = sorted(r for r in alloc.used_registers if r in cc.callee_saved)
    cursor = SAVED_FP_OFFSET
    save_slots = []
    for r in saves:
        cursor -= 8
        save_slots.append((r, cursor))
    spill_slots = []
    for _ in range(alloc.spill_slot_count):
        cursor -= 8
        spill_slots.append(cursor)
    local_slots = []
    for name, size in f.locals:
        cursor -= size
        local_slots.append((name, cursor, size))
    outgoing = max((len(ins.args) - 1 - nargs for ins in f.body if ins.op == "call"), default=0)
    outgoing = max(outgoing, 0)
    incoming = max(len(f.params) - nargs, 0)
    size = _round16(-cursor + 8 * outgoing)
    return FrameLayout(size, tuple(save_slots), tuple(spill_slots), tuple(local_slots), incoming, outgoing)

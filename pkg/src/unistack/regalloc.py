"""Linear-scan register allocation with furthest-end spilling.

Intervals come from instruction-level liveness on a doubled position scale:
position ``2i`` is "reading the operands of instruction i", ``2i + 1`` is
"writing its result".  A value whose last use is at ``i`` can therefore share
a register with the value defined at ``i``.  Parameters start at position -1.

Each value gets one location for its whole lifetime (a value register or a
spill slot).  Values live across a call may only use callee-saved registers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from .ir import Function
from .isa import ISADescriptor, CallingConvention
from .liveness import Liveness, liveness


class AllocationError(ValueError):
    pass


class Loc(NamedTuple):
    kind: str  # "reg" or "slot"
    index: int

    @property
    def is_reg(self) -> bool:
        return self.kind == "reg"


@dataclass(frozen=True)
class Interval:
    value: str
    start: int
    end: int
    crosses_call: bool


@dataclass
class AllocationResult:
    function: str
    locations: dict[str, Loc]
    intervals: dict[str, Interval]
    spill_slot_count: int
    static_spill_store_count: int
    static_spill_load_count: int
    live: Liveness = field(repr=False)

    @property
    def spilled(self) -> list[str]:
        return [v for v, loc in self.locations.items() if not loc.is_reg]

    @property
    def used_registers(self) -> set[int]:
        return {loc.index for loc in self.locations.values() if loc.is_reg}

    def assignment_at(self, i: int) -> dict[str, Loc]:
        """Locations of the values live into instruction ``i``."""
        return {v: self.locations[v] for v in self.live.live_in[i]}


def build_intervals(f: Function, live: Liveness) -> dict[str, Interval]:
    pos: dict[str, list[int]] = {}
    crossing: set[str] = set()
    entry_live = live.live_in[0] if f.body else frozenset()
    for p in f.params:
        if p in entry_live:
            pos.setdefault(p, []).append(-1)
    for i, ins in enumerate(f.body):
        for v in live.live_in[i]:
            pos.setdefault(v, []).append(2 * i)
        for v in live.live_out[i] | frozenset(ins.defs()):
            pos.setdefault(v, []).append(2 * i + 1)
        if ins.op == "call":
            crossing |= live.live_in[i] & (live.live_out[i] - frozenset(ins.defs()))
    order = {v: k for k, v in enumerate(f.values())}
    out = {}
    for v in sorted(pos, key=order.__getitem__):
        ps = pos[v]
        out[v] = Interval(v, min(ps), max(ps), v in crossing)
    return out


def allocatable_count(isa: ISADescriptor) -> int:
    return isa.gpr_count - len(isa.specials)


def allocate_registers(f: Function, isa: ISADescriptor, cc: CallingConvention | None = None) -> AllocationResult:
    cc = cc or isa.convention
    if allocatable_count(isa) < 2:
        raise AllocationError(f"{isa.name}: fewer than 2 allocatable registers")
    live = liveness(f)
    intervals = build_intervals(f, live)
    order = list(cc.allocation_order)
    rank = {r: k for k, r in enumerate(order)}
    callee = set(cc.callee_saved)

    free = set(order)
    active: list[Interval] = []
    where: dict[str, int] = {}
    spilled: list[str] = []

    seq = sorted(intervals.values(), key=lambda iv: (iv.start, iv.end))
    for iv in seq:
        for old in [a for a in active if a.end < iv.start]:
            active.remove(old)
            free.add(where[old.value])
        eligible = (lambda r: r in callee) if iv.crosses_call else (lambda r: True)
        candidates = [r for r in free if eligible(r)]
        if candidates:
            r = min(candidates, key=rank.__getitem__)
            free.discard(r)
            where[iv.value] = r
            active.append(iv)
            continue
        holders = [a for a in active if eligible(where[a.value])]
        victim = max(holders, key=lambda a: (a.end, a.start), default=None)
        if victim is not None and victim.end > iv.end:
            r = where.pop(victim.value)
            active.remove(victim)
            spilled.append(victim.value)
            where[iv.value] = r
            active.append(iv)
        else:
            spilled.append(iv.value)

    locations: dict[str, Loc] = {}
    spill_set = set(spilled)
    slot = 0
    for iv in seq:
        if iv.value in spill_set:
            locations[iv.value] = Loc("slot", slot)
            slot += 1
        else:
            locations[iv.value] = Loc("reg", where[iv.value])

    loads = sum(1 for ins in f.body for v in ins.uses() if v in spill_set)
    stores = sum(1 for ins in f.body for v in ins.defs() if v in spill_set)
    stores += sum(1 for p in f.params if p in spill_set)
    return AllocationResult(f.name, locations, intervals, slot, stores, loads, live)

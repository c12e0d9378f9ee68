"""Instruction-level backward liveness analysis."""
from __future__ import annotations

from dataclasses import dataclass

from .ir import Function


@dataclass(frozen=True)
class Liveness:
    live_in: tuple[frozenset, ...]
    live_out: tuple[frozenset, ...]

    def pressure(self, i: int) -> int:
        return len(self.live_in[i])

    @property
    def max_pressure(self) -> int:
        return max((len(s) for s in self.live_in), default=0)

    def across(self, i: int) -> frozenset:
        """Values live both before and after instruction ``i`` (and not redefined by it)."""
        return self.live_in[i] & self.live_out[i]


def liveness(f: Function) -> Liveness:
    """Iterate ``in = use | (out - def)`` to a fixed point over the instruction CFG."""
    n = len(f.body)
    succ = [f.successors(i) for i in range(n)]
    uses = [frozenset(ins.uses()) for ins in f.body]
    defs = [frozenset(ins.defs()) for ins in f.body]
    live_in = [frozenset()] * n
    live_out = [frozenset()] * n
    changed = True
    while changed:
        changed = False
        for i in range(n - 1, -1, -1):
            out = frozenset().union(*(live_in[s] for s in succ[i])) if succ[i] else frozenset()
            inn = uses[i] | (out - defs[i])
            if inn != live_in[i] or out != live_out[i]:
                live_in[i], live_out[i] = inn, out
                changed = True
    return Liveness(tuple(live_in), tuple(live_out))


def max_pressure(f: Function) -> int:
    return liveness(f).max_pressure

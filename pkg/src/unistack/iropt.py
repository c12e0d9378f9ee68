"""Block-local redundant load elimination.

A ``load-local`` whose word was stored or loaded earlier in the same basic
block, with no intervening store to that word, is removed and its uses are
rewritten to the value already known to hold the word.  Locals are private to
their frame, so calls do not invalidate anything.
"""
from __future__ import annotations

from dataclasses import replace

from .ir import Function, Instruction, Program
from .liveness import liveness


def _blocks(f: Function) -> list[tuple[int, int]]:
    leaders = {0} | set(f.labels.values())
    for i, ins in enumerate(f.body):
        if ins.is_terminator and i + 1 < len(f.body):
            leaders.add(i + 1)
    starts = sorted(leaders)
    return [(s, e) for s, e in zip(starts, starts[1:] + [len(f.body)])]


def _rename_uses(ins: Instruction, old: str, new: str) -> Instruction:
    if old not in ins.uses():
        return ins
    op, a = ins.op, ins.args
    sub = lambda v: new if v == old else v  # noqa: E731
    if op in ("add", "sub", "mul", "div"):
        args = (sub(a[0]), sub(a[1]))
    elif op == "cmp":
        args = (a[0], sub(a[1]), sub(a[2]))
    elif op == "branch":
        args = (sub(a[0]), a[1], a[2])
    elif op == "store-local":
        args = (a[0], a[1], sub(a[2]))
    elif op == "call":
        args = (a[0], *map(sub, a[1:]))
    else:  # return, print
        args = (sub(a[0]),)
    return replace(ins, args=args)


def _can_forward(body: list[Instruction], load: int, end: int, d: str, u: str, live_at_end: frozenset) -> bool:
    """True if every use reached by ``body[load]`` lies in the block and ``u`` survives until then."""
    last_use = None
    redefined = False
    for j in range(load + 1, end):
        ins = body[j]
        if d in ins.uses():
            last_use = j
        if d in ins.defs():
            redefined = True
            break
    if not redefined and d in live_at_end:
        return False
    if last_use is None:
        return True
    return not any(u in body[j].defs() for j in range(load + 1, last_use))


def _optimize_function(f: Function) -> Function:
    if not f.locals:
        return f
    live = liveness(f)
    body = list(f.body)
    keep = [True] * len(body)
    for start, end in _blocks(f):
        live_at_end = live.live_out[end - 1]
        known: dict[tuple[str, int], str] = {}
        renames: dict[str, str] = {}
        for i in range(start, end):
            ins = body[i]
            for old, new in list(renames.items()):
                ins = _rename_uses(ins, old, new)
            body[i] = ins
            for d in ins.defs():
                renames.pop(d, None)
            if ins.op == "load-local":
                key, d = (ins.args[0], ins.args[1]), ins.dest
                u = known.get(key)
                if u == d:
                    keep[i] = False
                    continue
                if u is not None and _can_forward(body, i, end, d, u, live_at_end):
                    keep[i] = False
                    renames[d] = u
                    _drop_value(known, d)
                    continue
                _drop_value(known, d)
                known[key] = d
            elif ins.op == "store-local":
                known[(ins.args[0], ins.args[1])] = ins.args[2]
            else:
                for d in ins.defs():
                    _drop_value(known, d)
                    for old in [o for o, n in renames.items() if n == d]:
                        del renames[old]
    if all(keep):
        return f
    new_index: list[int] = []
    count = 0
    for k in keep:
        new_index.append(count)
        count += k
    labels = {lab: new_index[idx] for lab, idx in f.labels.items()}
    new_body = tuple(ins for ins, k in zip(body, keep) if k)
    return replace(f, body=new_body, labels=labels)


def _drop_value(known: dict, v: str) -> None:
    for key in [k for k, val in known.items() if val == v]:
        del known[key]


def eliminate_redundant_loads(p: Program) -> Program:
    funcs = tuple(_optimize_function(f) for f in p.functions)
    if all(a is b for a, b in zip(funcs, p.functions)):
        return p
    return replace(p, functions=funcs)


def count_loads(p: Program) -> int:
    return sum(ins.op == "load-local" for f in p.functions for ins in f.body)

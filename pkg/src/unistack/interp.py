"""Reference interpreter that executes IR directly.

It knows nothing about registers, frames or calling conventions, which makes it
an independent oracle for the lowered code run by :mod:`unistack.vm`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .ir import ARITH_OPS, Program, div64, eval_cmp, wrap64


class IRRuntimeError(RuntimeError):
    pass


@dataclass
class Trace:
    exit_value: int
    output: list[int]
    eqpoint_hits: int = 0
    max_depth: int = 0
    steps: int = 0
    hits: list[tuple[str, int]] = field(default_factory=list)


@dataclass
class _Frame:
    func: object
    pc: int
    env: dict
    mem: dict
    ret_dest: str | None = None


def interpret(prog: Program, inputs=(), max_steps: int = 10_000_000, max_depth: int = 10_000) -> Trace:
    funcs = {f.name: f for f in prog.functions}
    entry = funcs[prog.entry]
    if len(inputs) != len(entry.params):
        raise IRRuntimeError(f"{prog.entry} expects {len(entry.params)} inputs, got {len(inputs)}")
    stack = [_Frame(entry, 0, dict(zip(entry.params, map(wrap64, inputs))), {})]
    trace = Trace(0, [], max_depth=1)
    steps = 0
    while True:
        fr = stack[-1]
        ins = fr.func.body[fr.pc]
        steps += 1
        if steps > max_steps:
            raise IRRuntimeError("step limit exceeded")
        op, a, env = ins.op, ins.args, fr.env
        fr.pc += 1
        if op == "const":
            env[ins.dest] = wrap64(a[0])
        elif op in ARITH_OPS:
            x, y = env[a[0]], env[a[1]]
            if op == "add":
                env[ins.dest] = wrap64(x + y)
            elif op == "sub":
                env[ins.dest] = wrap64(x - y)
            elif op == "mul":
                env[ins.dest] = wrap64(x * y)
            else:
                if y == 0:
                    raise IRRuntimeError(f"division by zero in {fr.func.name}")
                env[ins.dest] = div64(x, y)
        elif op == "cmp":
            env[ins.dest] = eval_cmp(a[0], env[a[1]], env[a[2]])
        elif op == "branch":
            fr.pc = fr.func.labels[a[1] if env[a[0]] != 0 else a[2]]
        elif op == "jump":
            fr.pc = fr.func.labels[a[0]]
        elif op == "load-local":
            key = (a[0], a[1])
            if key not in fr.mem:
                raise IRRuntimeError(f"read of uninitialised local {a[0]}+{a[1]} in {fr.func.name}")
            env[ins.dest] = fr.mem[key]
        elif op == "store-local":
            fr.mem[(a[0], a[1])] = env[a[2]]
        elif op == "call":
            callee = funcs[a[0]]
            args = [env[v] for v in a[1:]]
            if len(stack) >= max_depth:
                raise IRRuntimeError("call depth limit exceeded")
            stack.append(_Frame(callee, 0, dict(zip(callee.params, args)), {}, ins.dest))
            trace.max_depth = max(trace.max_depth, len(stack))
        elif op == "return":
            val = a[0] if isinstance(a[0], int) else env[a[0]]
            val = wrap64(val)
            done = stack.pop()
            if not stack:
                trace.exit_value = val
                trace.steps = steps
                return trace
            if done.ret_dest is not None:
                stack[-1].env[done.ret_dest] = val
        elif op == "eqpoint":
            trace.eqpoint_hits += 1
            trace.hits.append((fr.func.name, a[0]))
        elif op == "print":
            trace.output.append(env[a[0]])
        if fr.pc >= len(fr.func.body) and stack and stack[-1] is fr:
            raise IRRuntimeError(f"fell off the end of {fr.func.name}")

"""Deterministic random generator of terminating integer IR programs."""
from __future__ import annotations

import random
from dataclasses import dataclass

from .ir import Function, Instruction, Program, validate
from .liveness import max_pressure


class InfeasibleConfig(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    functions: tuple[int, int] = (1, 4)
    call_depth: tuple[int, int] = (1, 3)
    pressure: tuple[int, int] = (3, 20)
    loop_iters: tuple[int, int] = (1, 3)
    # knobs that shape, but do not bound, the program
    call_in_loop: float = 0.25
    local_prob: float = 0.6
    wide_call_prob: float = 0.1

    def check(self) -> None:
        for name in ("functions", "call_depth", "pressure", "loop_iters"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise InfeasibleConfig(f"{name} range is empty: {lo}..{hi}")
            if lo < 1:
                raise InfeasibleConfig(f"{name} range must start at 1 or above, got {lo}")


class _Builder:
    def __init__(self, name: str, params: list[str]):
        self.name = name
        self.params = params
        self.body: list[Instruction] = []
        self.labels: dict[str, int] = {}
        self.locals: list[tuple[str, int]] = []
        self.counter = 0
        self.points = 0

    def fresh(self, prefix: str = "v") -> str:
        self.counter += 1
        return f"{prefix}{self.counter}"

    def emit(self, op: str, dest: str | None, *args) -> None:
        self.body.append(Instruction(op, dest, tuple(args)))

    def label(self, name: str) -> None:
        self.labels[name] = len(self.body)

    def eqpoint(self) -> None:
        self.emit("eqpoint", None, self.points)
        self.points += 1

    def function(self) -> Function:
        return Function(self.name, tuple(self.params), tuple(self.locals), tuple(self.body), dict(self.labels))


@dataclass
class _Plan:
    name: str
    arity: int
    pressure: int
    callees: list[int]


def _call_args(rng: random.Random, pool: list[str], arity: int) -> list[str]:
    return [rng.choice(pool) for _ in range(arity)]


def _build_function(plan: _Plan, plans: list[_Plan], pool_size: int, use_loop: bool,
                    cfg: GeneratorConfig, seed: int) -> Function:
    rng = random.Random(seed)
    b = _Builder(plan.name, [f"p{j}" for j in range(plan.arity)])
    pool = list(b.params)
    while len(pool) < pool_size:
        d = b.fresh()
        if pool and rng.random() < 0.6:
            b.emit(rng.choice(("add", "sub", "mul")), d, rng.choice(pool), rng.choice(pool))
        else:
            b.emit("const", d, rng.randint(-50, 100))
        pool.append(d)

    words = 0
    if rng.random() < cfg.local_prob:
        words = rng.randint(1, 3)
        b.locals.append(("buf", 8 * words))
        for j in range(words):
            b.emit("store-local", None, "buf", 8 * j, rng.choice(pool))
        # reload right after the store: the pattern the load-elimination pass targets
        t = b.fresh("t")
        b.emit("load-local", t, "buf", 0)
        z = rng.randrange(len(pool))
        d = b.fresh()
        b.emit("add", d, pool[z], t)
        pool[z] = d

    in_loop = [c for c in plan.callees if use_loop and rng.random() < cfg.call_in_loop]
    prefix = [c for c in plan.callees if c not in in_loop]

    def emit_call(callee: int) -> None:
        target = plans[callee]
        r = b.fresh("r")
        b.emit("call", r, target.name, *_call_args(rng, pool, target.arity))
        b.eqpoint()
        z = rng.randrange(len(pool))
        b.emit("add", pool[z], pool[z], r)

    for c in prefix:
        emit_call(c)

    if use_loop:
        i, n, one = b.fresh("i"), b.fresh("n"), b.fresh("k")
        b.emit("const", i, 0)
        b.emit("const", n, rng.randint(*cfg.loop_iters))
        b.emit("const", one, 1)
        b.label("L0")
        b.eqpoint()
        c = b.fresh("c")
        b.emit("cmp", c, "lt", i, n)
        b.emit("branch", None, c, "L1", "L2")
        b.label("L1")
        for _ in range(rng.randint(1, 3)):
            kind = rng.random()
            z = rng.randrange(len(pool))
            x, y = rng.choice(pool), rng.choice(pool)
            t = b.fresh("t")
            if kind < 0.15:
                sq, den = b.fresh("t"), b.fresh("t")
                b.emit("mul", sq, y, y)
                b.emit("add", den, sq, one)  # y*y + 1 is never 0 mod 2**64
                b.emit("div", t, x, den)
            elif kind < 0.35 and words:
                off = 8 * rng.randrange(words)
                b.emit("load-local", t, "buf", off)
                b.emit("store-local", None, "buf", off, x)
            else:
                b.emit(rng.choice(("add", "sub", "mul")), t, x, y)
            b.emit(rng.choice(("add", "sub")), pool[z], pool[z], t)
        for cc in in_loop:
            emit_call(cc)
        b.emit("add", i, i, one)
        b.emit("jump", None, "L0")
        b.label("L2")
    elif not plan.callees:
        b.eqpoint()

    if words:
        t = b.fresh("t")
        b.emit("load-local", t, "buf", 8 * (words - 1))
        z = rng.randrange(len(pool))
        b.emit("add", pool[z], pool[z], t)
    acc = pool[0]
    if len(pool) > 1:
        acc = b.fresh("acc")
        b.emit("add", acc, pool[0], pool[1])
        for v in pool[2:]:
            b.emit("add", acc, acc, v)
    b.emit("print", None, acc)
    b.emit("return", None, acc)
    return b.function()


def _fit_function(plan: _Plan, plans: list[_Plan], cfg: GeneratorConfig, seed: int) -> Function:
    lo, hi = cfg.pressure
    best: tuple[int, Function] | None = None
    variants = [True, False] if plan.pressure >= 5 else [False, True]
    for use_loop in variants:
        overhead = 4 if use_loop else 1
        guess = max(1, plan.pressure - overhead)
        for s in sorted(range(max(1, plan.arity), plan.pressure + 3), key=lambda s: (abs(s - guess), s)):
            f = _build_function(plan, plans, s, use_loop, cfg, seed)
            m = max_pressure(f)
            if lo <= m <= hi and (best is None or abs(m - plan.pressure) < best[0]):
                best = (abs(m - plan.pressure), f)
                if m == plan.pressure:
                    return f
        if best is not None:
            return best[1]
    raise InfeasibleConfig(
        f"cannot build {plan.name} with pressure in {lo}..{hi} (arity {plan.arity}, {len(plan.callees)} calls)"
    )


def generate_program(cfg: GeneratorConfig) -> Program:
    """Build a valid, terminating program from ``cfg``.

    Calls only go from a function at call level ``l`` to one at level ``l + 1``,
    so the dynamic call depth is bounded by the sampled depth and reached by the
    chain ``main -> f1 -> ... -> f{D-1}``.
    """
    cfg.check()
    rng = random.Random(cfg.seed)
    depth = rng.randint(*cfg.call_depth)
    count = 1 if depth == 1 else max(depth, rng.randint(*cfg.functions))
    levels = [1] + list(range(2, depth + 1)) + [rng.randint(2, depth) for _ in range(count - depth)]

    plans: list[_Plan] = []
    lo, hi = cfg.pressure
    for idx, level in enumerate(levels):
        pressure = rng.randint(lo, hi)
        if idx == 0:
            arity = 0
        elif pressure >= 10 and rng.random() < cfg.wide_call_prob:
            arity = rng.choice((7, 9))
        else:
            arity = rng.randint(0, min(3, max(0, pressure - 2)))
        plans.append(_Plan("main" if idx == 0 else f"f{idx}", min(arity, pressure), pressure, []))
    for idx in range(1, count):
        if idx < depth:
            caller = idx - 1
        else:
            candidates = [j for j, lv in enumerate(levels) if lv == levels[idx] - 1]
            caller = rng.choice(candidates)
        plans[caller].callees.append(idx)

    funcs = []
    for idx, plan in enumerate(plans):
        funcs.append(_fit_function(plan, plans, cfg, cfg.seed * 7919 + idx))
    prog = Program(tuple(funcs), "main")
    validate(prog)
    return prog

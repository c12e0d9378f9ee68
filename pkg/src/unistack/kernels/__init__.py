"""The shipped kernel suite and the recursion-scaling program builder."""
from __future__ import annotations

from importlib import resources

from ..ir import Function, Instruction, Program, parse_program, validate

KERNELS = ("dense", "recursive", "pressure", "stencil", "callheavy", "mixed")

DESCRIPTIONS = {
    "dense": "triple-nested loop accumulating into stack locals",
    "recursive": "recursive reduction, 13 frames deep",
    "pressure": "20 long-lived values combined every iteration",
    "stencil": "3-point stencil over two local arrays",
    "callheavy": "loop with two levels of small calls",
    "mixed": "division, locals and a call inside a loop",
}


def kernel_source(name: str) -> str:
    if name not in KERNELS:
        raise KeyError(f"unknown kernel {name!r} (have: {', '.join(KERNELS)})")
    return resources.files(__package__).joinpath(f"{name}.ir").read_text(encoding="utf-8")


def load_kernel(name: str) -> Program:
    return parse_program(kernel_source(name))


def kernel_suite() -> dict[str, Program]:
    return {name: load_kernel(name) for name in KERNELS}


PINS = 10


def scaling_program(k: int, pins: int = PINS) -> Program:
    """``main(n)`` recurses into itself until ``n <= 1`` and stops at eqpoint 0.

    Exactly ``k`` values are live at the base-case equivalence point and across
    the recursive call, so a stack of ``max(n, 1)`` frames carries ``k`` live
    values per frame.  ``pins`` values are kept live across a helper call, which
    forces every frame to use (and save) all callee-saved registers of a target
    with at most ``pins`` of them, independent of ``k``.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    body: list[Instruction] = []
    emit = lambda op, dest, *args: body.append(Instruction(op, dest, tuple(args)))  # noqa: E731
    emit("const", "one", 1)
    vs = [f"v{j}" for j in range(k)]
    for j, v in enumerate(vs):
        emit("const", "c", j + 2)
        emit("mul", v, "n", "c")
    ps = [f"p{j}" for j in range(pins)]
    for j, p in enumerate(ps):
        emit("const", p, 3 * j + 1)
    emit("call", "h", "helper", ps[0])
    emit("add", "h", "h", ps[0])
    for p in ps[1:]:
        emit("add", "h", "h", p)
    emit("print", None, "h")
    emit("cmp", "c", "le", "n", "one")
    labels = {}
    emit("branch", None, "c", "Lbase", "Lrec")
    labels["Lbase"] = len(body)
    emit("eqpoint", None, 0)
    _sum(emit, vs, "acc")
    emit("return", None, "acc")
    labels["Lrec"] = len(body)
    emit("sub", "m", "n", "one")
    emit("call", "r", "main", "m")
    emit("eqpoint", None, 1)
    _sum(emit, vs, "acc")
    emit("add", "acc", "acc", "r")
    emit("return", None, "acc")
    main = Function("main", ("n",), (), tuple(body), labels)
    helper = Function("helper", ("x",), (), (
        Instruction("add", "y", ("x", "x")),
        Instruction("return", None, ("y",)),
    ), {})
    prog = Program((main, helper), "main")
    validate(prog)
    return prog


def _sum(emit, vs: list[str], dest: str) -> None:
    emit("const", dest, 0)
    for v in vs:
        emit("add", dest, dest, v)

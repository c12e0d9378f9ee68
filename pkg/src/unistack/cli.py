"""``unistack`` command line.

Exit codes: 0 success, 1 property violation, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .harness import ConfigError, ExperimentConfig, regdepth_sweep, transform_scaling, uniform_verify
from .interp import IRRuntimeError
from .ir import ParseError, Program, parse_program, print_program
from .irgen import GeneratorConfig, InfeasibleConfig, generate_program
from .isa import ISAError, inject_convention_fault, load_isa, make_uniform_abi, restrict_registers
from .kernels import kernel_suite, load_kernel
from .lower import lower, render_function
from .migration import MigrationError, diff_layout, migrate, prepare
from .regalloc import AllocationError
from .vm import VMError, run

OK, VIOLATION, USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def write_atomic(files: dict[str, str]) -> None:
    """Write every file or none: stage to temporaries, then rename."""
    staged = []
    try:
        for path, text in files.items():
            d = os.path.dirname(os.path.abspath(path))
            os.makedirs(d, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=d, prefix=".unistack-", suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            staged.append((tmp, path))
        for tmp, path in staged:
            os.replace(tmp, path)
    except BaseException:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise


def emit(text: str, out: str | None) -> None:
    if out:
        write_atomic({out: text})
    else:
        sys.stdout.write(text)


def load_program(spec: str) -> Program:
    """A file path, or ``kernel:NAME`` for a shipped kernel."""
    if spec.startswith("kernel:"):
        try:
            return load_kernel(spec.split(":", 1)[1])
        except KeyError as e:
            raise UsageError(str(e.args[0])) from None
    try:
        text = Path(spec).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read {spec}: {e.strerror}") from None
    try:
        return parse_program(text)
    except ParseError as e:
        raise UsageError(f"{spec}:{e}") from None


def parse_range(text: str) -> tuple[int, int]:
    if ":" in text:
        lo, hi = text.split(":", 1)
        return int(lo), int(hi)
    return int(text), int(text)


def parse_ints(text: str) -> list[int]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            lo, hi = parse_range(part)
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    return out


def on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def isas(args, count: int) -> list:
    names = args.isa or []
    defaults = ["x86like", "armlike"]
    if len(names) > count:
        raise UsageError(f"at most {count} --isa flags expected")
    if count == 2:
        names = names + defaults[len(names):]
    elif not names:
        names = defaults[:1]
    out = [load_isa(n) for n in names]
    if args.regs is not None:
        out = [restrict_registers(i, args.regs) for i in out]
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_compile(args) -> int:
    p = load_program(args.program)
    prefix = args.out or os.path.splitext(args.program.replace("kernel:", ""))[0]
    files = {}
    if args.uniform:
        a, b = isas(args, 2)
        ua, ub, _, _ = make_uniform_abi(a, b)
        if args.inject_fault:
            ub = inject_convention_fault(ub)
        targets = [ua, ub]
        suffix = lambda isa: f".{isa.name}"  # noqa: E731
    else:
        targets = isas(args, 1)
        suffix = lambda isa: ""  # noqa: E731
    for isa in targets:
        mp, meta = lower(p, isa, isa.convention, args.load_elim)
        files[f"{prefix}{suffix(isa)}.mprog.json"] = mp.to_json()
        files[f"{prefix}{suffix(isa)}.meta.json"] = meta.to_json()
        if args.listing:
            for mf in mp.functions:
                sys.stdout.write(render_function(mf, isa))
    write_atomic(files)
    for path in files:
        print(path)
    return OK


def cmd_run(args) -> int:
    p = load_program(args.program)
    (isa,) = isas(args, 1)
    mp, _ = lower(p, isa, isa.convention, args.load_elim)
    ex, out, m = run(mp, args.inputs, checked=args.checked)
    if args.report == "json":
        doc = {"isa": isa.name, "exit_value": ex, "output": out, "metrics": m.to_dict()}
        emit(json.dumps(doc, sort_keys=True, indent=1) + "\n", args.out)
    elif args.report == "csv":
        cols = list(m.to_dict())
        text = ",".join(["isa", "exit_value"] + cols) + "\n"
        text += ",".join([isa.name, str(ex)] + [str(v) for v in m.to_dict().values()]) + "\n"
        emit(text, args.out)
    else:
        lines = [str(v) for v in out] + [f"exit {ex}"]
        lines += [f"{k}: {v}" for k, v in m.to_dict().items()]
        emit("\n".join(lines) + "\n", args.out)
    return OK


def cmd_migrate(args) -> int:
    p = load_program(args.program)
    a, b = isas(args, 2)
    mode = "uniform" if args.uniform else "transform"
    stop_k = args.stop_at_point

    def stop(hits, fn, pt):
        return stop_k > 0 and hits == stop_k

    ex, out, rep = migrate(p, a, b, stop, args.inputs, mode=mode, load_elim=args.load_elim, checked=args.checked)
    if args.report == "json":
        emit(rep.to_json(), args.out)
    else:
        text = "\n".join(rep.trace) + "\n"
        text += "output: " + " ".join(map(str, out)) + f"\nexit: {ex}\n"
        text += rep.to_json()
        emit(text, args.out)
    return OK if rep.semantic_check else VIOLATION


def cmd_diff(args) -> int:
    p = load_program(args.program)
    a, b = isas(args, 2)
    mode = "uniform" if args.uniform else "transform"
    t = prepare(p, a, b, mode, args.load_elim, fault=bool(args.inject_fault))
    d = diff_layout(t.src[1], t.dst[1], t.rmap)
    emit(d.to_json() if args.report == "json" else d.table(), args.out)
    return VIOLATION if (args.uniform and not d.empty) else OK


def _programs_for(args, default_kernels: bool) -> dict[str, Program]:
    progs: dict[str, Program] = {}
    for spec in args.programs:
        progs[spec] = load_program(spec)
    if getattr(args, "kernels", False):
        progs.update(kernel_suite())
    count = getattr(args, "generate", None)
    if count is not None:
        seed0 = args.seed or 0
        for s in range(seed0, seed0 + count):
            progs[f"seed{s}"] = generate_program(GeneratorConfig(seed=s))
    elif not progs and default_kernels:
        progs = kernel_suite()
    return progs


def _report(res, args) -> int:
    emit(res.to_json() if args.report == "json" else res.to_csv(), args.out)
    for f in res.failures:
        print(f"FAIL {f}", file=sys.stderr)
    return OK if res.passed else VIOLATION


def cmd_sweep(args) -> int:
    lo, hi = parse_range(args.regs) if args.regs else (4, 32)
    cfg = ExperimentConfig("regdepth-sweep", _programs_for(args, True), regs=(lo, hi),
                           load_elim=args.load_elim, checked=args.checked, seed=args.seed)
    return _report(regdepth_sweep(cfg), args)


def cmd_scale(args) -> int:
    a, b = isas(args, 2)
    cfg = ExperimentConfig("transform-scaling", src=a, dst=b, ks=tuple(parse_ints(args.k)),
                           depths=tuple(parse_ints(args.depths)), repetitions=args.reps, seed=args.seed,
                           stack_bytes=args.stack_bytes, timing=args.timing)
    return _report(transform_scaling(cfg), args)


def cmd_verify(args) -> int:
    a, b = isas(args, 2)
    cfg = ExperimentConfig("uniform-verify", _programs_for(args, True), src=a, dst=b, seed=args.seed,
                           load_elim=args.load_elim, checked=args.checked, fault=bool(args.inject_fault),
                           max_stops=args.max_stops)
    return _report(uniform_verify(cfg), args)


def cmd_gen(args) -> int:
    kw = {"seed": args.seed or 0}
    for name in ("functions", "call_depth", "pressure", "loop_iters"):
        val = getattr(args, name)
        if val:
            kw[name] = parse_range(val)
    emit(print_program(generate_program(GeneratorConfig(**kw))), args.out)
    return OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="unistack", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"unistack {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, isa=True):
        if isa:
            p.add_argument("--isa", action="append", metavar="NAME|FILE",
                           help="target preset (x86like, armlike, armlike-reduced) or isa.json; repeat for pairs")
        p.add_argument("--load-elim", type=on_off, default=False, metavar="on|off")
        p.add_argument("--checked", type=on_off, default=True, metavar="on|off")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--report", choices=("json", "csv", "text"), default=None)
        p.add_argument("--out", metavar="PATH")

    p = sub.add_parser("compile", help="lower a program and write .mprog.json and .meta.json")
    p.add_argument("program")
    common(p)
    p.add_argument("--uniform", action="store_true")
    p.add_argument("--regs", type=int)
    p.add_argument("--inject-fault", choices=("convention",))
    p.add_argument("--listing", action="store_true", help="also print an assembly listing")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("run", help="lower and execute a program")
    p.add_argument("program")
    common(p)
    p.add_argument("--regs", type=int)
    p.add_argument("--inputs", type=parse_ints, default=[])
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("migrate", help="run, capture, transform or skip, restore, finish")
    p.add_argument("program")
    common(p)
    p.add_argument("--uniform", action="store_true")
    p.add_argument("--regs", type=int)
    p.add_argument("--stop-at-point", type=int, default=1, metavar="K", help="migrate at the K-th eqpoint hit")
    p.add_argument("--inputs", type=parse_ints, default=[])
    p.set_defaults(func=cmd_migrate)

    p = sub.add_parser("diff", help="compare frame metadata of two targets")
    p.add_argument("program")
    common(p)
    p.add_argument("--uniform", action="store_true")
    p.add_argument("--regs", type=int)
    p.add_argument("--inject-fault", choices=("convention",))
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("sweep-regs", help="register-depth sweep on ARMLIKE")
    p.add_argument("programs", nargs="*", help="program files or kernel:NAME (default: kernel suite)")
    common(p, isa=False)
    p.add_argument("--regs", metavar="LO:HI")
    p.add_argument("--kernels", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("scale-transform", help="transformation cost over recursion depth and live values")
    common(p)
    p.add_argument("--regs", type=int)
    p.add_argument("--k", default="0,2,4,8", metavar="LIST")
    p.add_argument("--depths", default="1:100", metavar="LIST")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--stack-bytes", type=int, default=1 << 20)
    p.add_argument("--timing", type=on_off, default=True, metavar="on|off")
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("verify-uniform", help="check that uniform layouts need no transformation")
    p.add_argument("programs", nargs="*", help="program files or kernel:NAME (default: kernel suite)")
    common(p)
    p.add_argument("--regs", type=int)
    p.add_argument("--kernels", action="store_true")
    p.add_argument("--generate", type=int, metavar="COUNT", help="add COUNT generated programs from --seed")
    p.add_argument("--inject-fault", choices=("convention",))
    p.add_argument("--max-stops", type=int, default=0, metavar="N",
                   help="cap migrations per direction (0: every equivalence-point hit)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen", help="print a generated program")
    common(p, isa=False)
    p.add_argument("--functions", metavar="LO:HI")
    p.add_argument("--call-depth", metavar="LO:HI")
    p.add_argument("--pressure", metavar="LO:HI")
    p.add_argument("--loop-iters", metavar="LO:HI")
    p.set_defaults(func=cmd_gen)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MigrationError as e:
        print(f"unistack: {e}", file=sys.stderr)
        return VIOLATION
    except (UsageError, ParseError, ISAError, InfeasibleConfig, ConfigError, AllocationError, ValueError,
            VMError, IRRuntimeError) as e:
        print(f"unistack: {e}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Move a deep recursion from the x86-like target to the ARM-like target.

Native layouts differ, so every live value of every frame is rewritten.
The same stop under the uniform ABI rewrites nothing.

    python3 demos/migrate_story.py [depth]
"""
from __future__ import annotations

import argparse

from unistack.interp import interpret
from unistack.isa import ARMLIKE, X86LIKE
from unistack.kernels import scaling_program
from unistack.migration import diff_layout, migrate, prepare


def at_base_case(hits, fn, pt):
    return fn == "main" and pt == 0


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("depth", type=int, nargs="?", default=6)
    ap.add_argument("--live", type=int, default=4, help="values live across each recursive call")
    args = ap.parse_args()

    p = scaling_program(args.live)
    ref = interpret(p, [args.depth])
    print(f"reference run: exit {ref.exit_value}, output {ref.output}")

    t = prepare(p, X86LIKE, ARMLIKE, "transform")
    d = diff_layout(t.src[1], t.dst[1], t.rmap)
    print(f"\nnative layouts disagree in {len(d.entries)} places ({', '.join(sorted(d.causes()))}):")
    rows = d.table().splitlines()
    print("\n".join(rows[:14]))
    if len(rows) > 14:
        print(f"... {len(rows) - 14} more")

    ex, out, rep = migrate(p, X86LIKE, ARMLIKE, at_base_case, [args.depth], targets=t)
    print("transform mode:")
    for line in rep.trace:
        print("  " + line)
    s = rep.stats
    print(f"  {rep.frames} frames, {s.values_moved} values moved, {s.callee_saved_moved} saves rebuilt, "
          f"op_count {s.op_count}, same result: {rep.semantic_check}")

    ex2, out2, rep2 = migrate(p, X86LIKE, ARMLIKE, at_base_case, [args.depth], mode="uniform")
    print("\nuniform mode:")
    print(f"  {rep2.frames} frames, {rep2.stats.values_moved} values moved, "
          f"{rep2.stats.bytes_written} bytes written, same result: {(ex2, out2) == (ex, out)}")


if __name__ == "__main__":
    main()

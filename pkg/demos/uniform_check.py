"""Under a uniform ABI both targets lay frames out identically.

Verifies a batch of generated programs, then breaks the convention on one
side to show the check catching it.
"""
from __future__ import annotations

import argparse

from unistack.harness import ExperimentConfig, uniform_verify
from unistack.irgen import GeneratorConfig, generate_program
from unistack.isa import ARMLIKE, X86LIKE, make_uniform_abi
from unistack.kernels import load_kernel
from unistack.migration import diff_layout, prepare


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--count", type=int, default=20)
    args = ap.parse_args()

    ua, ub, _, rmap = make_uniform_abi(X86LIKE, ARMLIKE)
    print(f"uniform pair {ua.name} / {ub.name}:")
    print("  " + "  ".join(f"{a}/{b}" for a, b in rmap.names))

    programs = {f"gen{s}": generate_program(GeneratorConfig(seed=s)) for s in range(args.count)}
    res = uniform_verify(ExperimentConfig("uniform-verify", programs, max_stops=0))
    moved = sum(r["values_moved"] for r in res.rows)
    runs = sum(r["migrations"] for r in res.rows)
    print(f"\n{len(programs)} programs, {runs} migrations, {moved} values moved, passed: {res.passed}")

    t = prepare(load_kernel("callheavy"), X86LIKE, ARMLIKE, "uniform", fault=True)
    d = diff_layout(t.src[1], t.dst[1], t.rmap)
    print(f"\nwith argument and callee-saved roles swapped on one side ({len(d.entries)} divergences):")
    print(d.table())


if __name__ == "__main__":
    main()

"""How much does losing registers cost each kernel?

Sweeps the ARM-like target from 32 down to 4 registers and prints the
dynamic-instruction overhead against the 32-register run.

    python3 demos/register_depth.py [--csv sweep.csv]
"""
from __future__ import annotations

import argparse

from unistack.harness import ExperimentConfig, regdepth_sweep
from unistack.kernels import kernel_suite

SHOWN = (32, 24, 17, 12, 8, 6, 4)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--csv", help="also write the full sweep here")
    args = ap.parse_args()

    res = regdepth_sweep(ExperimentConfig("regdepth-sweep", kernel_suite()))
    by = {(r["kernel"], r["regs"]): r for r in res.rows}
    kernels = sorted({r["kernel"] for r in res.rows})
    print("overhead % (spill slots) by register count\n")
    print(f"{'kernel':<10} {'pressure':>8}  " + "".join(f"{n:>14}" for n in SHOWN))
    for k in kernels:
        cells = "".join(f"{by[k, n]['overhead_pct']:>8.1f} ({by[k, n]['spill_slots']:>2})" for n in SHOWN)
        print(f"{k:<10} {by[k, 32]['max_pressure']:>8}  {cells}")
    print("\nvalue registers left:", {n: by[kernels[0], n]["value_regs"] for n in SHOWN})
    print("checks passed:", res.passed)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            fh.write(res.to_csv())


if __name__ == "__main__":
    main()

"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are written
straight to the terminal so they survive output capture.
"""
from __future__ import annotations

import json
import math
import time

import pytest

from conftest import generated
from oracles import min_spills, path_liveness
from unistack.cli import main
from unistack.harness import ExperimentConfig, regdepth_sweep, transform_checks, transform_scaling, uniform_verify
from unistack.irgen import GeneratorConfig, generate_program
from unistack.isa import ARMLIKE, X86LIKE, restrict_registers
from unistack.kernels import KERNELS, kernel_suite
from unistack.liveness import max_pressure
from unistack.regalloc import allocate_registers

CORPUS = range(200)
MINI = GeneratorConfig(functions=(1, 3), call_depth=(1, 2), pressure=(2, 7))
MINI_REGS = (4, 5, 6, 8, 17)


@pytest.fixture
def verdict(capsys):
    def report(name: str, ok: bool, detail: str = "") -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name}" + (f" ({detail})" if detail else ""))
        assert ok, detail
    return report


@pytest.fixture(scope="module")
def transformed():
    """Transform-mode round trip and semantics for every hit, both directions."""
    t0 = time.perf_counter()
    results = {s: transform_checks(generated(s), X86LIKE, ARMLIKE, max_stops=0) for s in CORPUS}
    return results, time.perf_counter() - t0


def test_uniform_layout_verification(verdict):
    programs = {f"gen{s}": generated(s) for s in CORPUS}
    t0 = time.perf_counter()
    res = uniform_verify(ExperimentConfig("uniform-verify", programs, max_stops=0))
    secs = time.perf_counter() - t0
    rows = res.rows
    ok = (res.passed and len(rows) == 2 * len(CORPUS)
          and all(r["diff_entries"] == 0 and r["values_moved"] == 0 and r["semantic_ok"] for r in rows)
          and all(r["migrations"] == r["eqpoint_hits"] for r in rows)
          and secs < 120)
    migrations = sum(r["migrations"] for r in rows)
    verdict("uniform layout: empty diffs, zero values moved, identical output",
            ok, f"{len(CORPUS)} programs, {migrations} migrations, {secs:.1f}s; {res.failures[:3]}")


def test_transform_round_trip(verdict, transformed):
    results, secs = transformed
    bad = {s: r["roundtrip_failures"] for s, r in results.items() if r["roundtrip_failures"]}
    total = sum(r["migrations"] for r in results.values())
    verdict("transform round trip A->B->A byte-identical", not bad and total > 0,
            f"{total} snapshots, {secs:.1f}s; failures {dict(list(bad.items())[:3])}")


def test_transform_semantic_preservation(verdict, transformed):
    results, _ = transformed
    bad = {s: r["semantic_failures"] for s, r in results.items() if r["semantic_failures"]}
    moved = sum(r["values_moved"] for r in results.values())
    verdict("transform migration preserves exit value and output", not bad and moved > 0,
            f"{sum(r['migrations'] for r in results.values())} migrations; failures {dict(list(bad.items())[:3])}")


def test_transform_cost_linear(verdict):
    t0 = time.perf_counter()
    res = transform_scaling(ExperimentConfig("transform-scaling", ks=(0, 1, 2, 4, 8, 16),
                                             depths=tuple(range(1, 101)), timing=False))
    secs = time.perf_counter() - t0
    alpha = {int(k): a for k, a in res.summary["alpha"].items()}
    exact = all(r["status"] == "ok" and r["op_count"] == alpha[r["k"]] * r["n"] for r in res.rows)
    ok = res.passed and exact and len(res.rows) == 6 * 100 and len(alpha) == 6 and secs < 30
    verdict("transform cost op_count = alpha*n exactly, alpha affine in k", ok,
            f"alpha={alpha}, slope={res.summary.get('alpha_slope')}, {secs:.1f}s; {res.failures[:3]}")


def test_register_depth_properties(verdict):
    t0 = time.perf_counter()
    res = regdepth_sweep(ExperimentConfig("regdepth-sweep", kernel_suite()))
    secs = time.perf_counter() - t0
    problems = list(res.failures)
    for name in KERNELS:
        rows = [r for r in res.rows if r["kernel"] == name]
        if [r["regs"] for r in rows] != list(range(4, 33)):
            problems.append(f"{name}: incomplete sweep")
        spills = [r["spill_slots"] for r in rows]
        if any(a < b for a, b in zip(spills, spills[1:])):
            problems.append(f"(a) {name}: spills {spills}")
        for r in rows:
            if (r["regs"] == 32 or r["max_pressure"] <= r["value_regs"]) and r["overhead_pct"] != 0:
                problems.append(f"(b) {name} at {r['regs']}: {r['overhead_pct']}")
    at17 = res.summary["overhead_pct_at_17"]
    if set(at17) != set(KERNELS) or not all(math.isfinite(v) for v in at17.values()):
        problems.append(f"(c) overhead at 17: {at17}")
    verdict("register-depth sweep (a) monotone spills (b) zero overhead when it fits (c) finite 17-vs-32",
            not problems and secs < 60, f"at17={ {k: round(v, 2) for k, v in at17.items()} }, {secs:.1f}s; "
            f"{problems[:3]}")


def test_allocator_within_oracle_bound(verdict):
    t0 = time.perf_counter()
    funcs = []
    for s in range(50):
        for f in generate_program(GeneratorConfig(seed=s, functions=MINI.functions, call_depth=MINI.call_depth,
                                                  pressure=MINI.pressure)).functions:
            values = set(f.params) | {v for ins in f.body for v in (*ins.uses(), *ins.defs())}
            if len(values) <= 12:
                funcs.append(f)
    problems, worst, cases = [], 0, 0
    for f in funcs:
        live = path_liveness(f)
        pressure = max_pressure(f)
        for base in (X86LIKE, ARMLIKE):
            for n in MINI_REGS:
                isa = restrict_registers(base, n)
                cc = isa.convention
                order = cc.allocation_order
                spilled = len(allocate_registers(f, isa).spilled)
                best = min_spills(f, len(order), len(set(order) & set(cc.callee_saved)), live)
                cases += 1
                worst = max(worst, spilled - best)
                if spilled < pressure - len(order):
                    problems.append(f"{f.name} {isa.name}: {spilled} < {pressure} - {len(order)}")
                if spilled > best + 2:
                    problems.append(f"{f.name} {isa.name}: {spilled} > oracle {best} + 2")
    secs = time.perf_counter() - t0
    verdict("allocator spills >= pressure - registers and <= exhaustive oracle + 2",
            not problems and cases > 0 and secs < 60,
            f"{len(funcs)} functions, {cases} cases, worst excess {worst}, {secs:.1f}s; {problems[:3]}")


def test_fault_injection_fails_verification(verdict, capsys):
    problems = []
    for name in KERNELS:
        code = main(["verify-uniform", f"kernel:{name}", "--inject-fault", "convention", "--report", "json"])
        doc = json.loads(capsys.readouterr().out)
        causes = {c for r in doc["rows"] for c in r["causes"].split(";") if c}
        if code != 1 or "convention" not in causes or doc["passed"]:
            problems.append(f"{name}: exit {code}, causes {sorted(causes)}")
    verdict("injected convention fault fails verify-uniform with exit 1 on every kernel", not problems,
            f"{len(KERNELS)} kernels; {problems[:3]}")

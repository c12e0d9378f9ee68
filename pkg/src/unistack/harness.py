"""Experiment drivers behind the CLI: register-depth sweep, transformation
scaling, uniform-layout verification and the migration demo.

Every driver returns an :class:`ExperimentResult` whose rows are ordered by
config point and whose CSV/JSON renderings are canonical.
"""
from __future__ import annotations

import csv
import io
import json
import math
import re
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .interp import interpret
from .ir import Program
from .isa import ARMLIKE, X86LIKE, ISADescriptor, restrict_registers
from .kernels import scaling_program
from .liveness import max_pressure
from .lower import lower
from .migration import TransformStats, diff_layout, migrate, prepare, transform_stack
from .vm import DEFAULT_STACK_BYTES, StackOverflow, capture_snapshot, run, run_until_point

KINDS = ("regdepth-sweep", "transform-scaling", "uniform-verify", "migrate-demo")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    programs: dict[str, Program] = field(default_factory=dict)
    src: ISADescriptor = X86LIKE
    dst: ISADescriptor = ARMLIKE
    regs: tuple[int, int] = (4, 32)
    ks: tuple[int, ...] = (0, 2, 4, 8)
    depths: tuple[int, ...] = tuple(range(1, 101))
    repetitions: int = 1
    seed: int | None = None
    load_elim: bool = False
    checked: bool = True
    fault: bool = False
    max_stops: int = 0
    stack_bytes: int = DEFAULT_STACK_BYTES
    timing: bool = True

    def check(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        lo, hi = self.regs
        if lo > hi:
            raise ConfigError(f"empty register range {lo}..{hi}")
        if lo < 4:
            raise ConfigError(f"infeasible register count {lo} (< 4)")
        if hi > 32:
            raise ConfigError("register sweep is limited to 32")
        if not self.ks or not self.depths:
            raise ConfigError("scaling grid needs at least one k and one depth")
        if min(self.ks) < 0 or min(self.depths) < 0:
            raise ConfigError("k and depth must be nonnegative")

    def stamp(self) -> dict:
        return {
            "kind": self.kind,
            "programs": sorted(self.programs),
            "src": self.src.name,
            "dst": self.dst.name,
            "regs": list(self.regs),
            "ks": list(self.ks),
            "depths": [min(self.depths), max(self.depths), len(self.depths)],
            "repetitions": self.repetitions,
            "seed": self.seed,
            "load_elim": self.load_elim,
            "fault": self.fault,
            "max_stops": self.max_stops,
        }


@dataclass
class ExperimentResult:
    kind: str
    columns: list[str]
    rows: list[dict]
    config: dict
    passed: bool = True
    failures: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def fail(self, message: str) -> None:
        self.passed = False
        self.failures.append(message)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_cell(r.get(c)) for c in self.columns])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "experiment": self.kind,
            "environment": {"tool": "unistack", "version": __version__, "seed": self.config.get("seed")},
            "config": self.config,
            "columns": self.columns,
            "rows": [{c: r.get(c) for c in self.columns} for r in self.rows],
            "passed": self.passed,
            "failures": self.failures,
            "summary": self.summary,
        }
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(round(x, 6))
    return str(x)


def overhead_pct(reduced: int, baseline: int) -> float:
    if baseline <= 0:
        raise ValueError("baseline metric must be positive")
    return 100.0 * (reduced - baseline) / baseline


# ---------------------------------------------------------------------------
# Register-depth sweep

SWEEP_COLUMNS = ["kernel", "regs", "value_regs", "max_pressure", "fits", "spill_slots", "static_spill_loads",
                 "static_spill_stores", "dyn_instructions", "dyn_loads", "dyn_stores", "dyn_spill_loads",
                 "dyn_spill_stores", "overhead_pct"]


def regdepth_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    """Lower and run every program on ARMLIKE restricted to each register count.

    Overhead is relative to the full 32-register restriction (same allocation
    order, so a kernel that fits is lowered identically).  Checks: spill
    counts never grow with more registers, overhead is 0 at the baseline and
    wherever the kernel's pressure fits the value registers, and the overhead
    is finite everywhere.
    """
    cfg.check()
    base_isa = ARMLIKE
    lo, hi = cfg.regs
    res = ExperimentResult(cfg.kind, SWEEP_COLUMNS, [], cfg.stamp())
    for name in sorted(cfg.programs):
        p = cfg.programs[name]
        ref = interpret(p)
        pressure = max((max_pressure(f) for f in p.functions), default=0)
        base_mp, _ = lower(p, restrict_registers(base_isa, base_isa.gpr_count), load_elim=cfg.load_elim)
        _, _, base_m = run(base_mp, checked=cfg.checked, stack_bytes=cfg.stack_bytes)
        rows = []
        for n in range(lo, hi + 1):
            isa = restrict_registers(base_isa, n)
            mp, _ = lower(p, isa, load_elim=cfg.load_elim)
            ex, out, m = run(mp, checked=cfg.checked, stack_bytes=cfg.stack_bytes)
            if (ex, out) != (ref.exit_value, ref.output):
                res.fail(f"{name}: output differs from the reference at {n} registers")
            value_regs = len(isa.convention.allocation_order)
            rows.append({
                "kernel": name,
                "regs": n,
                "value_regs": value_regs,
                "max_pressure": pressure,
                "fits": pressure <= value_regs,
                "spill_slots": sum(f.allocation.spill_slot_count for f in mp.functions),
                "static_spill_loads": sum(f.allocation.static_spill_load_count for f in mp.functions),
                "static_spill_stores": sum(f.allocation.static_spill_store_count for f in mp.functions),
                "dyn_instructions": m.dynamic_instruction_count,
                "dyn_loads": m.dynamic_load_count,
                "dyn_stores": m.dynamic_store_count,
                "dyn_spill_loads": m.dynamic_spill_load_count,
                "dyn_spill_stores": m.dynamic_spill_store_count,
                "overhead_pct": overhead_pct(m.dynamic_instruction_count, base_m.dynamic_instruction_count),
            })
        for a, b in zip(rows, rows[1:]):
            if b["spill_slots"] > a["spill_slots"]:
                res.fail(f"{name}: spills grow from {a['spill_slots']} to {b['spill_slots']} "
                         f"going from {a['regs']} to {b['regs']} registers")
        for r in rows:
            if not math.isfinite(r["overhead_pct"]):
                res.fail(f"{name}: non-finite overhead at {r['regs']} registers")
            if (r["regs"] == base_isa.gpr_count or r["fits"]) and r["overhead_pct"] != 0:
                res.fail(f"{name}: overhead {r['overhead_pct']:.3f}% at {r['regs']} registers "
                         f"although pressure {pressure} fits {r['value_regs']} value registers")
        res.rows.extend(rows)
    at17 = {r["kernel"]: r["overhead_pct"] for r in res.rows if r["regs"] == 17}
    res.summary = {"overhead_pct_at_17": at17}
    return res


# ---------------------------------------------------------------------------
# Transformation scaling

SCALING_COLUMNS = ["k", "n", "status", "frames", "values_moved", "callee_saved_moved", "bytes_written",
                   "op_count", "alpha", "wall_seconds"]


def scaling_point(k: int, n: int, src: ISADescriptor = X86LIKE, dst: ISADescriptor = ARMLIKE,
                  stack_bytes: int = DEFAULT_STACK_BYTES, repetitions: int = 1, targets=None):
    """Capture the depth-``n`` recursion at its base case and transform it.

    Returns ``(stats, seconds)``; seconds is the best of ``repetitions``.
    """
    p = scaling_program(k)
    t = targets or prepare(p, src, dst, "transform")
    (mp_a, meta_a), (_, meta_b) = t.src, t.dst
    st, _ = run_until_point(mp_a, [n], lambda hits, fn, pt: fn == "main" and pt == 0, stack_bytes=stack_bytes)
    snap = capture_snapshot(st, meta_a)
    best = math.inf
    stats = TransformStats()
    for _ in range(repetitions):
        t0 = time.perf_counter()
        _, stats = transform_stack(snap, meta_a, meta_b, t.rmap)
        best = min(best, time.perf_counter() - t0)
    return stats, best


def transform_scaling(cfg: ExperimentConfig) -> ExperimentResult:
    """Grid over live-value count ``k`` and recursion depth ``n``.

    Verifies op_count = alpha(k) * n exactly for every n >= 1 and that
    alpha is affine in k (exact integer arithmetic).  Wall time is reported
    for information only.
    """
    cfg.check()
    cols = SCALING_COLUMNS if cfg.timing else SCALING_COLUMNS[:-1]
    res = ExperimentResult(cfg.kind, cols, [], cfg.stamp())
    alphas: dict[int, int] = {}
    for k in sorted(set(cfg.ks)):
        targets = prepare(scaling_program(k), cfg.src, cfg.dst, "transform")
        row_alpha = None
        times = []
        for n in sorted(set(cfg.depths)):
            row = {"k": k, "n": n}
            try:
                stats, secs = scaling_point(k, n, cfg.src, cfg.dst, cfg.stack_bytes, cfg.repetitions, targets)
            except StackOverflow as e:
                row.update(status="stack-overflow")
                res.rows.append(row)
                res.summary.setdefault("errors", []).append(f"k={k} n={n}: {e}")
                continue
            frames = stats.frames_processed
            row.update(status="ok", frames=frames, values_moved=stats.values_moved,
                       callee_saved_moved=stats.callee_saved_moved, bytes_written=stats.bytes_written,
                       op_count=stats.op_count)
            if frames != max(n, 1):
                res.fail(f"k={k} n={n}: {frames} frames processed, expected {max(n, 1)}")
            if n >= 1:
                if stats.op_count % n:
                    res.fail(f"k={k} n={n}: op_count {stats.op_count} is not a multiple of n")
                alpha = stats.op_count // n
                row["alpha"] = alpha
                if row_alpha is None:
                    row_alpha = alpha
                elif alpha != row_alpha or stats.op_count != row_alpha * n:
                    res.fail(f"k={k} n={n}: op_count {stats.op_count} != {row_alpha} * {n}")
            if cfg.timing:
                row["wall_seconds"] = secs
                times.append((n, secs))
            res.rows.append(row)
        if row_alpha is not None:
            alphas[k] = row_alpha
        if cfg.timing and len(times) >= 2:
            ns, ts = np.array(times, dtype=float).T
            slope, intercept = np.polyfit(ns, ts, 1)
            res.summary.setdefault("wall_fit", {})[str(k)] = {"slope": float(slope), "intercept": float(intercept)}
    ks = sorted(alphas)
    if len(ks) >= 2:
        k0, k1 = ks[0], ks[1]
        for k in ks[2:]:
            if (alphas[k] - alphas[k0]) * (k1 - k0) != (alphas[k1] - alphas[k0]) * (k - k0):
                res.fail(f"alpha is not affine in k: {alphas}")
                break
        slope = (alphas[k1] - alphas[k0]) / (k1 - k0)
        res.summary["alpha_slope"] = slope
        res.summary["alpha_intercept"] = alphas[k0] - slope * k0
    res.summary["alpha"] = {str(k): a for k, a in alphas.items()}
    return res


# ---------------------------------------------------------------------------
# Uniform verification

VERIFY_COLUMNS = ["program", "direction", "diff_entries", "causes", "eqpoint_hits", "migrations",
                  "values_moved", "semantic_ok", "passed"]


def stop_schedule(hits: list[tuple[str, int]], limit: int) -> list[int]:
    """1-based hit indices to migrate at: all of them, or at most ``limit``.

    When capped, the first hit of every distinct point is always included and
    the rest are spread evenly.
    """
    total = len(hits)
    if limit <= 0 or total <= limit:
        return list(range(1, total + 1))
    chosen = {}
    for i, h in enumerate(hits, 1):
        chosen.setdefault(h, i)
    picks = set(chosen.values())
    spare = max(0, limit - len(picks))
    if spare:
        picks.update(int(x) for x in np.linspace(1, total, spare).round())
    return sorted(picks)


def uniform_verify(cfg: ExperimentConfig) -> ExperimentResult:
    """Uniform layouts must be identical and migration must move nothing.

    For each program and each direction: the layout diff under the shared
    ABI is empty; migrating at every scheduled equivalence-point hit moves
    zero values and reproduces the unmigrated output.
    """
    cfg.check()
    res = ExperimentResult(cfg.kind, VERIFY_COLUMNS, [], cfg.stamp())
    for name in sorted(cfg.programs, key=_natural):
        p = cfg.programs[name]
        ref = interpret(p)
        for a, b in ((cfg.src, cfg.dst), (cfg.dst, cfg.src)):
            row = _verify_direction(name, p, a, b, ref, cfg)
            res.rows.append(row)
            if not row["passed"]:
                res.fail(f"{name} {row['direction']}: {row.pop('_why')}")
            row.pop("_why", None)
    res.summary = {"programs": len(cfg.programs), "failed": len(res.failures)}
    return res


def _verify_direction(name, p, a, b, ref, cfg) -> dict:
    row = {"program": name, "direction": f"{a.name}->{b.name}", "eqpoint_hits": ref.eqpoint_hits,
           "migrations": 0, "values_moved": 0, "semantic_ok": True, "passed": True}
    t = prepare(p, a, b, "uniform", cfg.load_elim, fault=cfg.fault)
    d = diff_layout(t.src[1], t.dst[1], t.rmap)
    row["diff_entries"] = len(d.entries)
    row["causes"] = ";".join(sorted(d.causes()))
    if not d.empty:
        row.update(passed=False, semantic_ok=None, _why=f"layout diff not empty ({row['causes']})")
        return row
    ex, out, _ = run(t.src[0], checked=cfg.checked, stack_bytes=cfg.stack_bytes)
    if (ex, out) != (ref.exit_value, ref.output):
        row.update(passed=False, semantic_ok=False, _why="single-ISA run disagrees with the reference")
        return row
    for k in stop_schedule(ref.hits, cfg.max_stops):
        ex, out, rep = migrate(p, a, b, lambda hits, fn, pt, k=k: hits == k, mode="uniform", targets=t,
                               reference=(ex, out), checked=cfg.checked, stack_bytes=cfg.stack_bytes)
        row["migrations"] += 1
        row["values_moved"] += rep.stats.values_moved
        if not rep.semantic_check:
            row.update(semantic_ok=False, passed=False, _why=f"output differs after migrating at hit {k}")
            return row
    if row["values_moved"]:
        row.update(passed=False, _why="uniform migration moved values")
    return row


def _natural(name: str):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", name)]


# ---------------------------------------------------------------------------
# Transform-mode corpus checks


def transform_checks(p: Program, a: ISADescriptor, b: ISADescriptor, max_stops: int = 0) -> dict:
    """Round trip and semantic preservation of transform-mode migration at every scheduled hit."""
    ref = interpret(p)
    t_ab = prepare(p, a, b, "transform")
    t_ba = prepare(p, b, a, "transform")
    out = {"migrations": 0, "roundtrip_failures": [], "semantic_failures": [], "values_moved": 0}
    for k in stop_schedule(ref.hits, max_stops):
        stop = lambda hits, fn, pt, k=k: hits == k  # noqa: E731
        for t, back in ((t_ab, t_ba), (t_ba, t_ab)):
            st, _ = run_until_point(t.src[0], (), stop)
            snap = capture_snapshot(st, t.src[1])
            there, stats = transform_stack(snap, t.src[1], t.dst[1], t.rmap)
            again, _ = transform_stack(there, back.src[1], back.dst[1], back.rmap)
            if again.to_json() != snap.to_json() or again.to_bytes() != snap.to_bytes():
                out["roundtrip_failures"].append(k)
            ex, res_out, rep = migrate(p, t.src_isa, t.dst_isa, stop, mode="transform", targets=t,
                                       reference=(ref.exit_value, ref.output))
            out["migrations"] += 1
            out["values_moved"] += rep.stats.values_moved
            if not rep.semantic_check:
                out["semantic_failures"].append(k)
    return out


# ---------------------------------------------------------------------------
# Migration demo


def migrate_demo(p: Program, src: ISADescriptor, dst: ISADescriptor, mode: str, stop_hit: int,
                 inputs=(), load_elim: bool = False, checked: bool = True):
    """Run one migration and return ``(exit, output, report)`` with a per-phase trace."""
    stop = None if stop_hit <= 0 else (lambda hits, fn, pt: hits == stop_hit)
    if stop is None:
        stop = lambda hits, fn, pt: False  # noqa: E731
    return migrate(p, src, dst, stop, inputs, mode=mode, load_elim=load_elim, checked=checked)


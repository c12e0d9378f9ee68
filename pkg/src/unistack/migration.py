"""Stack transformation, layout diffing and the end-to-end migration driver."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

from .ir import Program
from .isa import ISADescriptor, RegisterMap, identity_map, inject_convention_fault, make_uniform_abi, role_map
from .lower import FrameDescriptor, FrameMetadata, lower
from .regalloc import Loc
from .snapshot import ActivationRecord, Binding, StackSnapshot
from .vm import (DEFAULT_STACK_BYTES, ProgramTerminated, Stop, capture_snapshot, execute, resolve_saves,
                 restore_snapshot, run, run_until_point)

# fixed per-frame work: return-address slot, saved FP, frame-size bookkeeping
FRAME_OPS = 3
FRAME_BYTES = 16


class MigrationError(RuntimeError):
    pass


class MetadataIncompatible(MigrationError):
    pass


class UniformityViolation(MigrationError):
    def __init__(self, diff: "LayoutDiff"):
        first = diff.entries[0]
        super().__init__(f"uniform layouts differ at {first.function} {first.kind} {first.point}: "
                         f"{first.value} ({first.cause})")
        self.diff = diff


@dataclass
class TransformStats:
    frames_processed: int = 0
    values_moved: int = 0
    callee_saved_moved: int = 0
    bytes_written: int = 0
    op_count: int = 0
    frame_ops: int = FRAME_OPS

    def to_dict(self) -> dict:
        return {
            "frames_processed": self.frames_processed,
            "values_moved": self.values_moved,
            "callee_saved_moved": self.callee_saved_moved,
            "bytes_written": self.bytes_written,
            "op_count": self.op_count,
            "frame_ops": self.frame_ops,
        }


def _map_loc(loc: Loc, rmap: RegisterMap) -> Loc:
    return Loc("reg", rmap.forward(loc.index)) if loc.is_reg else loc


def _same_under_map(a: FrameDescriptor, b: FrameDescriptor, rmap: RegisterMap) -> bool:
    try:
        mapped_vals = tuple((v, _map_loc(loc, rmap)) for v, loc in a.live_values)
        mapped_saves = tuple(sorted((rmap.forward(r), o) for r, o in a.callee_saved_layout))
    except Exception:
        return False
    return (mapped_vals == b.live_values and mapped_saves == tuple(sorted(b.callee_saved_layout))
            and a.frame_size == b.frame_size and a.locals == b.locals
            and a.ra_offset == b.ra_offset and a.saved_fp_offset == b.saved_fp_offset)


def _lookup(meta: FrameMetadata, rec: ActivationRecord, side: str) -> FrameDescriptor:
    d = meta.get(rec.function, rec.kind, rec.point)
    if d is None:
        raise MetadataIncompatible(f"{side} metadata has no descriptor for {rec.function} {rec.kind} {rec.point}")
    return d


def transform_stack(snap: StackSnapshot, src_meta: FrameMetadata, dst_meta: FrameMetadata,
                    rmap: RegisterMap) -> tuple[StackSnapshot, TransformStats]:
    """Rewrite every activation record from the source layout to the destination layout.

    When every frame's descriptor is identical on both sides once registers
    are mapped, nothing needs to move: the records are returned with only
    their register names translated and all counters at zero.
    """
    pairs = []
    for rec in snap.records:
        s, d = _lookup(src_meta, rec, "source"), _lookup(dst_meta, rec, "destination")
        if set(rec.bindings) != set(s.values):
            raise MetadataIncompatible(f"snapshot bindings of {rec.function} {rec.kind} {rec.point} "
                                       "do not match the source descriptor")
        dv = d.values
        for v in s.values:
            if v not in dv:
                raise MetadataIncompatible(f"value {v!r} of {rec.function} {rec.kind} {rec.point} "
                                           "has no destination location")
        extra = sorted(set(dv) - set(s.values))
        if extra:
            raise MetadataIncompatible(f"value {extra[0]!r} of {rec.function} {rec.kind} {rec.point} "
                                       "has no source location")
        pairs.append((rec, s, d))

    if all(_same_under_map(s, d, rmap) for _, s, d in pairs):
        records = tuple(
            replace(rec,
                    bindings={v: Binding(b.value, _map_loc(b.loc, rmap)) for v, b in rec.bindings.items()},
                    saved_callee={rmap.forward(r): w for r, w in rec.saved_callee.items()})
            for rec, _, _ in pairs
        )
        return StackSnapshot(records), TransformStats()

    stats = TransformStats()
    dst_descs = [d for _, _, d in pairs]
    values = [rec.values() for rec, _, _ in pairs]
    saves = resolve_saves(dst_descs, values)
    records = []
    for (rec, _, d), saved in zip(pairs, saves):
        bindings = {v: Binding(rec.bindings[v].value, loc) for v, loc in d.live_values}
        local_words = {}
        for name, _, size in d.locals:
            for w in range(0, size, 8):
                local_words[(name, w)] = rec.locals.get((name, w), 0)
        records.append(ActivationRecord(d.function, d.kind, d.point, d.frame_size, bindings, local_words, saved))
        stats.frames_processed += 1
        stats.values_moved += len(bindings) + len(local_words)
        stats.callee_saved_moved += len(saved)
    stats.bytes_written = 8 * (stats.values_moved + stats.callee_saved_moved) + FRAME_BYTES * stats.frames_processed
    stats.op_count = stats.values_moved + stats.callee_saved_moved + FRAME_OPS * stats.frames_processed
    return StackSnapshot(tuple(records)), stats


# ---------------------------------------------------------------------------
# Layout diff

CAUSES = ("convention", "register-depth", "spill-order", "style")
FRAME_ENTRY = "@frame"


@dataclass(frozen=True)
class Divergence:
    function: str
    kind: str
    point: int
    value: str
    loc_a: str
    loc_b: str
    cause: str

    def to_dict(self) -> dict:
        return {"function": self.function, "kind": self.kind, "point": self.point, "value": self.value,
                "loc_a": self.loc_a, "loc_b": self.loc_b, "cause": self.cause}


@dataclass
class LayoutDiff:
    entries: list[Divergence] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.entries

    def causes(self) -> set[str]:
        return {e.cause for e in self.entries}

    def functions(self) -> list[str]:
        return sorted({e.function for e in self.entries})

    def to_json(self) -> str:
        return json.dumps({"divergences": [e.to_dict() for e in self.entries]}, sort_keys=True, indent=1) + "\n"

    def table(self) -> str:
        head = ("function", "point", "value", "A", "B", "cause")
        rows = [(e.function, f"{e.kind}:{e.point}", e.value, e.loc_a, e.loc_b, e.cause) for e in self.entries]
        widths = [max(len(str(r[i])) for r in [head] + rows) for i in range(len(head))]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        lines = [fmt.format(*head), fmt.format(*("-" * w for w in widths))]
        lines += [fmt.format(*r) for r in rows]
        lines = [ln.rstrip() for ln in lines]
        return "\n".join(lines) + "\n"


def _fmt_loc(loc: Loc | None, isa: ISADescriptor) -> str:
    if loc is None:
        return "-"
    if loc.is_reg:
        return f"{isa.reg_name(loc.index)}(r{loc.index})"
    return f"[fp{loc.index:+d}]"


def _role_class(role: str) -> str:
    return role.split("+")[0]


def _incoming(meta: FrameMetadata, j: int):
    args = meta.convention.arg_registers
    return ("reg", args[j]) if j < len(args) else ("stack", j - len(args))


def _classify(v: str, a: Loc | None, b: Loc | None, fn: str, ma: FrameMetadata, mb: FrameMetadata,
              rmap: RegisterMap) -> str:
    ca, cb = ma.convention, mb.convention
    if a is not None and b is not None and a.is_reg and b.is_reg:
        try:
            ra_on_b = rmap.forward(a.index)
            rb_on_a = rmap.backward(b.index)
        except Exception:
            return "convention"
        if (_role_class(ca.role(a.index)) != _role_class(cb.role(ra_on_b))
                or _role_class(cb.role(b.index)) != _role_class(ca.role(rb_on_a))):
            return "convention"
    params = ma.params.get(fn, ())
    if v in params:
        j = params.index(v)
        ia, ib = _incoming(ma, j), _incoming(mb, j)
        if ia[0] != ib[0]:
            return "convention"
        if ia[0] == "reg":
            try:
                if rmap.forward(ia[1]) != ib[1]:
                    return "convention"
            except Exception:
                return "convention"
    if a is None or b is None or a.is_reg != b.is_reg:
        return "register-depth"
    if not a.is_reg:
        return "spill-order"
    return "style"


def _frame_divergence(a: FrameDescriptor, b: FrameDescriptor, rmap: RegisterMap) -> str | None:
    try:
        saves_a = tuple(sorted((rmap.forward(r), o) for r, o in a.callee_saved_layout))
    except Exception:
        return "convention"
    if saves_a != tuple(sorted(b.callee_saved_layout)):
        return "convention"
    slots_a = sum(1 for _, loc in a.live_values if not loc.is_reg)
    slots_b = sum(1 for _, loc in b.live_values if not loc.is_reg)
    if a.frame_size != b.frame_size:
        return "register-depth" if slots_a != slots_b else "spill-order"
    if a.locals != b.locals:
        return "spill-order"
    if (a.ra_offset, a.saved_fp_offset) != (b.ra_offset, b.saved_fp_offset):
        return "style"
    return None


def _describe_frame(d: FrameDescriptor, isa: ISADescriptor) -> str:
    saves = ",".join(isa.reg_name(r) for r, _ in d.callee_saved_layout) or "none"
    return f"size={d.frame_size} saves={saves}"


def diff_layout(meta_a: FrameMetadata, meta_b: FrameMetadata, rmap: RegisterMap | None = None) -> LayoutDiff:
    """Every place where the two layouts disagree once registers are mapped.

    Cause, first match wins: ``convention`` when a register's role is not
    preserved by the map, a parameter arrives differently, or the save area
    differs; ``register-depth`` when one side keeps the value in a register and
    the other in a slot; ``spill-order`` when both use slots at different
    offsets; ``style`` otherwise.
    """
    rmap = rmap or identity_map(meta_a.isa)
    out = LayoutDiff()
    keys = list(dict.fromkeys(meta_a.keys() + meta_b.keys()))
    for key in keys:
        fn, kind, point = key
        da, db = meta_a.get(*key), meta_b.get(*key)
        if da is None or db is None:
            out.entries.append(Divergence(fn, kind, point, FRAME_ENTRY,
                                          "present" if da else "-", "present" if db else "-", "convention"))
            continue
        cause = _frame_divergence(da, db, rmap)
        if cause is not None:
            out.entries.append(Divergence(fn, kind, point, FRAME_ENTRY, _describe_frame(da, meta_a.isa),
                                          _describe_frame(db, meta_b.isa), cause))
        va, vb = da.values, db.values
        for v in sorted(set(va) | set(vb)):
            a, b = va.get(v), vb.get(v)
            if a is not None and b is not None:
                try:
                    if _map_loc(a, rmap) == b:
                        continue
                except Exception:
                    pass
            out.entries.append(Divergence(fn, kind, point, v, _fmt_loc(a, meta_a.isa), _fmt_loc(b, meta_b.isa),
                                          _classify(v, a, b, fn, meta_a, meta_b, rmap)))
    return out


# ---------------------------------------------------------------------------
# Driver


@dataclass
class MigrationReport:
    source: str
    destination: str
    mode: str
    taken: bool
    stats: TransformStats
    semantic_check: bool
    transform_seconds: float
    stop_hit: int | None = None
    stop_point: tuple[str, int] | None = None
    frames: int = 0
    trace: list[str] = field(default_factory=list)

    def to_dict(self, timing: bool = True) -> dict:
        d = {
            "source": self.source,
            "destination": self.destination,
            "mode": self.mode,
            "taken": self.taken,
            "stats": self.stats.to_dict(),
            "semantic_check": self.semantic_check,
            "stop_hit": self.stop_hit,
            "stop_point": list(self.stop_point) if self.stop_point else None,
            "frames": self.frames,
        }
        if timing:
            d["transform_seconds"] = self.transform_seconds
        return d

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), sort_keys=True, indent=1) + "\n"


@dataclass
class Targets:
    """The two lowered programs and the register map between them."""

    src_isa: ISADescriptor
    dst_isa: ISADescriptor
    rmap: RegisterMap
    src: tuple
    dst: tuple


def prepare(p: Program, src: ISADescriptor, dst: ISADescriptor, mode: str, load_elim: bool = False,
            fault: bool = False) -> Targets:
    """Lower ``p`` for both sides of a migration.

    ``uniform`` builds the shared ABI and lowers both sides under it; with
    ``fault`` the destination's convention is deliberately perturbed.
    """
    if mode == "uniform":
        ua, ub, cc, rmap = make_uniform_abi(src, dst)
        if fault:
            ub = inject_convention_fault(ub)
        return Targets(ua, ub, rmap, lower(p, ua, ua.convention, load_elim), lower(p, ub, ub.convention, load_elim))
    if mode != "transform":
        raise ValueError(f"unknown migration mode {mode!r}")
    rmap = role_map(src, dst)
    return Targets(src, dst, rmap, lower(p, src, src.convention, load_elim), lower(p, dst, dst.convention, load_elim))


def migrate(p: Program, src: ISADescriptor, dst: ISADescriptor, stop: Stop, inputs=(), mode: str = "transform",
            load_elim: bool = False, stack_bytes: int = DEFAULT_STACK_BYTES, checked: bool = True,
            targets: Targets | None = None, reference: tuple[int, list[int]] | None = None):
    """Run on ``src`` until ``stop``, move the stack to ``dst`` and finish there.

    Returns ``(exit_value, output, report)``.  The semantic check compares
    against an uninterrupted run on ``src`` (pass ``reference`` to reuse one).
    """
    t = targets or prepare(p, src, dst, mode, load_elim)
    (mp_a, meta_a), (mp_b, meta_b) = t.src, t.dst
    trace = []
    if reference is None:
        ex, out, _ = run(mp_a, inputs, stack_bytes, checked)
        reference = (ex, out)
    report = MigrationReport(t.src_isa.name, t.dst_isa.name, mode, False, TransformStats(), False, 0.0, trace=trace)
    if mode == "uniform":
        diff = diff_layout(meta_a, meta_b, t.rmap)
        if not diff.empty:
            raise UniformityViolation(diff)
        trace.append("verify: layouts identical under the register map")
    try:
        st, metrics = run_until_point(mp_a, inputs, stop, stack_bytes, checked)
    except ProgramTerminated as done:
        trace.append(f"run: program finished on {t.src_isa.name} before the stop point")
        report.semantic_check = (done.exit_value, done.output) == tuple(reference)
        return done.exit_value, done.output, report
    report.taken = True
    report.stop_hit = metrics.equivalence_points_hit
    report.stop_point = st.last_point
    trace.append(f"run: stopped on {t.src_isa.name} at {st.last_point[0]} eqpoint {st.last_point[1]} "
                 f"(hit {report.stop_hit}), {len(st.output)} values printed")
    snap = capture_snapshot(st, meta_a)
    report.frames = snap.depth
    trace.append(f"capture: {snap.depth} frame(s), {sum(len(r.bindings) for r in snap.records)} live values")
    t0 = time.perf_counter()
    new, stats = transform_stack(snap, meta_a, meta_b, t.rmap)
    if stats.frames_processed == 0:
        trace.append("transform: skipped, layouts are identical")
    else:
        trace.append(f"transform: {stats.values_moved} values, {stats.callee_saved_moved} saved registers, "
                     f"{stats.op_count} ops")
    report.transform_seconds = time.perf_counter() - t0
    report.stats = stats
    st_b = restore_snapshot(new, mp_b, meta_b, stack_bytes, checked)
    trace.append(f"restore: resumed on {t.dst_isa.name}")
    execute(st_b)
    output = list(st.output) + st_b.output
    trace.append(f"finish: exit value {st_b.exit_value}, {len(output)} values printed")
    report.semantic_check = (st_b.exit_value, output) == (reference[0], list(reference[1]))
    return st_b.exit_value, output, report

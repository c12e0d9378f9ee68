from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import corpus, generated, seeds
from unistack.interp import interpret
from unistack.ir import parse_program
from unistack.isa import ARMLIKE, X86LIKE, make_uniform_abi, restrict_registers
from unistack.kernels import kernel_suite, load_kernel, scaling_program
from unistack.lower import Mem, lower
from unistack.regalloc import Loc
from unistack.snapshot import ActivationRecord, Binding, SnapshotError, StackSnapshot
from unistack.vm import (AlignmentFault, DivisionByZero, MemoryFault, ProgramTerminated, SnapshotMismatch,
                         StackOverflow, VMError, capture_snapshot, execute, nth_hit, restore_snapshot, resume,
                         run, run_until_point)

TWO_LIVE = """fn main() {
  a = const 6
  b = const 7
  eqpoint 0
  print a
  c = mul a, b
  return c
}
"""


def test_trivial_run():
    mp, _ = lower(parse_program("fn main() { return 0 }"), X86LIKE)
    ex, out, m = run(mp)
    assert ex == 0 and out == []
    assert m.dynamic_instruction_count >= 1


def test_inputs_reach_entry():
    p = parse_program("fn main(a, b) {\n  c = sub a, b\n  return c\n}")
    for isa in (X86LIKE, ARMLIKE):
        assert run(lower(p, isa)[0], [10, 3])[0] == 7


def test_overflow_arguments_on_stack():
    params = ", ".join(f"p{i}" for i in range(9))
    body = "  s = add p0, p8\n  t = sub s, p6\n  return t\n"
    p = parse_program(f"fn main({params}) {{\n{body}}}")
    q = parse_program("fn main() {\n" + "".join(f"  v{i} = const {i * 3}\n" for i in range(9))
                      + f"  r = call f({', '.join(f'v{i}' for i in range(9))})\n  return r\n}}\n"
                      f"fn f({params}) {{\n{body}}}")
    for isa in (X86LIKE, ARMLIKE):
        assert run(lower(p, isa)[0], list(range(1, 10)))[0] == 1 + 9 - 7
        assert run(lower(q, isa)[0])[0] == interpret(q).exit_value


def test_wrong_arity_rejected():
    mp, _ = lower(parse_program("fn main(a) { return 0 }"), X86LIKE)
    with pytest.raises(VMError):
        run(mp)


@given(seeds)
def test_cross_isa_and_metric_sanity(seed):
    p = generated(seed)
    ref = interpret(p)
    for isa in (X86LIKE, ARMLIKE):
        ex, out, m = run(lower(p, isa)[0])
        assert (ex, out) == (ref.exit_value, ref.output)
        assert m.dynamic_spill_load_count <= m.dynamic_load_count
        assert m.dynamic_spill_store_count <= m.dynamic_store_count
        assert m.equivalence_points_hit == ref.eqpoint_hits
        assert m.max_call_depth == ref.max_depth
        assert all(v >= 0 for v in m.to_dict().values())


def test_cross_isa_100_generated():
    for p in corpus(100):
        ref = interpret(p)
        for isa in (X86LIKE, ARMLIKE):
            assert run(lower(p, isa)[0])[:2] == (ref.exit_value, ref.output)


def test_fewer_registers_never_fewer_dynamic_spills():
    progs = list(kernel_suite().values()) + corpus(10)
    for p in progs:
        spills = []
        for n in range(4, 33, 2):
            m = run(lower(p, restrict_registers(ARMLIKE, n))[0])[2]
            spills.append(m.dynamic_spill_load_count + m.dynamic_spill_store_count)
        assert all(a >= b for a, b in zip(spills, spills[1:])), spills


def test_division_by_zero_trap_has_context():
    p = parse_program("fn main() {\n  a = const 1\n  z = const 0\n  q = div a, z\n  return q\n}")
    with pytest.raises(DivisionByZero) as e:
        run(lower(p, ARMLIKE)[0])
    assert e.value.function == "main" and e.value.pc is not None


def test_stack_overflow():
    p = scaling_program(2)
    mp, _ = lower(p, X86LIKE)
    with pytest.raises(StackOverflow):
        run(mp, [200], stack_bytes=4096)


def test_out_of_bounds_access():
    mp, _ = lower(parse_program("fn main() {\n  a = const 1\n  print a\n  return a\n}"), X86LIKE)
    code = mp.functions[0].code
    code.insert(1, ("mov", Mem(X86LIKE.frame_pointer, 1 << 24, "spill"), 0))
    with pytest.raises(MemoryFault):
        run(mp)


def test_misaligned_call_detected_in_checked_mode():
    p = parse_program("fn main() {\n  r = call f()\n  return r\n}\nfn f() { return 3 }")
    mp, _ = lower(p, ARMLIKE)
    code = mp.functions[0].code
    assert code[0][0] == "prologue"
    code[0] = ("prologue", code[0][1] + 8)
    with pytest.raises(AlignmentFault):
        run(mp)
    assert run(mp, checked=False)[0] == 3


@given(seeds)
def test_alignment_holds_in_checked_mode(seed):
    p = generated(seed)
    for isa in (X86LIKE, ARMLIKE, restrict_registers(ARMLIKE, 7)):
        run(lower(p, isa)[0], checked=True)


# stopping


def test_stop_first_hit_before_any_print():
    mp, _ = lower(parse_program(TWO_LIVE), X86LIKE)
    st, m = run_until_point(mp, (), nth_hit(1))
    assert st.output == [] and m.equivalence_points_hit == 1


def test_stop_never_equals_run():
    mp, _ = lower(load_kernel("mixed"), ARMLIKE)
    ex, out, m = run(mp)
    with pytest.raises(ProgramTerminated) as e:
        run_until_point(mp, (), lambda *_: False)
    assert (e.value.exit_value, e.value.output) == (ex, out)
    assert e.value.metrics.to_dict() == m.to_dict()


def test_stop_third_hit():
    mp, _ = lower(load_kernel("dense"), X86LIKE)
    st, m = run_until_point(mp, (), nth_hit(3))
    assert m.equivalence_points_hit == 3


# snapshots


def test_capture_two_live_values():
    mp, meta = lower(parse_program(TWO_LIVE), X86LIKE)
    st, _ = run_until_point(mp, (), nth_hit(1))
    snap = capture_snapshot(st, meta)
    assert snap.depth == 1
    assert snap.innermost.values() == {"a": 6, "b": 7}


def test_capture_empty_live_set():
    src = "fn main() {\n  eqpoint 0\n  a = const 1\n  return a\n}"
    mp, meta = lower(parse_program(src), X86LIKE)
    st, _ = run_until_point(mp, (), nth_hit(1))
    snap = capture_snapshot(st, meta)
    assert snap.innermost.bindings == {}
    ex, out, _ = run(mp)
    end = execute(restore_snapshot(snap, mp, meta))
    assert end.exit_value == ex


@pytest.mark.parametrize("n", [1, 2, 7, 30])
def test_recursion_depth_n_gives_n_records(n):
    p = scaling_program(3)
    mp, meta = lower(p, ARMLIKE)
    st, _ = run_until_point(mp, [n], lambda hits, fn, pt: pt == 0)
    snap = capture_snapshot(st, meta)
    assert snap.depth == n
    assert [r.kind for r in snap.records] == ["callsite"] * (n - 1) + ["eqpoint"]
    # outermost first (v0 = 2n), so the recursion argument shrinks inward
    assert [r.values()["v0"] // 2 for r in snap.records] == list(range(n, 0, -1))


def test_capture_not_at_eqpoint_rejected():
    mp, meta = lower(parse_program(TWO_LIVE), X86LIKE)
    st, _ = run_until_point(mp, (), nth_hit(1))
    st.pc += 1
    with pytest.raises(SnapshotMismatch):
        capture_snapshot(st, meta)


def snapshots(p, isa, limit=12):
    mp, meta = lower(p, isa)
    total = interpret(p).eqpoint_hits
    for k in range(1, min(total, limit) + 1):
        st, _ = run_until_point(mp, (), nth_hit(k))
        yield k, st, capture_snapshot(st, meta), mp, meta


@given(seeds)
def test_captured_values_agree_across_isas(seed):
    p = generated(seed)
    a = list(snapshots(p, X86LIKE))
    b = list(snapshots(p, ARMLIKE))
    for (_, _, sa, _, _), (_, _, sb, _, _) in zip(a, b):
        assert [r.key for r in sa.records] == [r.key for r in sb.records]
        assert [r.values() for r in sa.records] == [r.values() for r in sb.records]
        assert [r.locals for r in sa.records] == [r.locals for r in sb.records]


@given(seeds)
def test_pause_resume_transparent(seed):
    p = generated(seed)
    ref = interpret(p)
    for isa in (X86LIKE, ARMLIKE):
        for k, state, snap, mp, meta in snapshots(p, isa):
            end = execute(restore_snapshot(snap, mp, meta))
            assert (end.exit_value, state.output + end.output) == (ref.exit_value, ref.output), k
            # resuming the paused state itself also finishes identically
            again = resume(state)
            assert (again.exit_value, again.output) == (ref.exit_value, ref.output)


def test_pause_resume_every_hit_on_kernels():
    for name, p in kernel_suite().items():
        ref = interpret(p)
        for isa in (X86LIKE, make_uniform_abi(X86LIKE, ARMLIKE)[1]):
            for k, state, snap, mp, meta in snapshots(p, isa, limit=10_000):
                end = execute(restore_snapshot(snap, mp, meta))
                assert (end.exit_value, state.output + end.output) == (ref.exit_value, ref.output), (name, k)


def test_restore_missing_binding_names_value():
    mp, meta = lower(parse_program(TWO_LIVE), X86LIKE)
    st, _ = run_until_point(mp, (), nth_hit(1))
    snap = capture_snapshot(st, meta)
    rec = snap.innermost
    broken = ActivationRecord(rec.function, rec.kind, rec.point, rec.frame_size,
                              {"a": rec.bindings["a"]}, rec.locals, rec.saved_callee)
    with pytest.raises(SnapshotMismatch, match="'b'"):
        restore_snapshot(StackSnapshot((broken,)), mp, meta)


def test_restore_unknown_point():
    mp, meta = lower(parse_program(TWO_LIVE), X86LIKE)
    rec = ActivationRecord("main", "eqpoint", 9, 16, {}, {}, {})
    with pytest.raises(SnapshotMismatch, match="unknown point"):
        restore_snapshot(StackSnapshot((rec,)), mp, meta)


def test_restore_too_deep_for_stack():
    p = scaling_program(2)
    mp, meta = lower(p, X86LIKE)
    st, _ = run_until_point(mp, [40], lambda hits, fn, pt: pt == 0)
    snap = capture_snapshot(st, meta)
    with pytest.raises(StackOverflow):
        restore_snapshot(snap, mp, meta, stack_bytes=1024)


# serialization


@given(seeds)
def test_snapshot_serialization_round_trip(seed):
    for _, _, snap, _, _ in snapshots(generated(seed), ARMLIKE, limit=4):
        text = snap.to_json()
        assert StackSnapshot.from_json(text) == snap
        assert StackSnapshot.from_json(text).to_json() == text
        data = snap.to_bytes()
        assert StackSnapshot.from_bytes(data) == snap
        assert StackSnapshot.from_bytes(data).to_bytes() == data


@given(st.lists(st.integers(min_value=-(2**63), max_value=2**63 - 1), min_size=0, max_size=5),
       st.integers(min_value=0, max_value=3))
def test_binary_format_handles_extreme_words(words, depth):
    recs = []
    for j in range(depth + 1):
        kind = "eqpoint" if j == depth else "callsite"
        b = {f"v{i}": Binding(w, Loc("slot", -8 * (i + 3)) if i % 2 else Loc("reg", i)) for i, w in enumerate(words)}
        recs.append(ActivationRecord(f"f{j}", kind, j, 32 + 16 * j, b, {("loc", 0): words[0] if words else 0},
                                     {3: words[-1] if words else 0}))
    snap = StackSnapshot(tuple(recs))
    assert StackSnapshot.from_bytes(snap.to_bytes()) == snap
    assert StackSnapshot.from_json(snap.to_json()) == snap


def test_binary_rejects_garbage():
    with pytest.raises(SnapshotError):
        StackSnapshot.from_bytes(b"NOPE" + bytes(12))
    good = StackSnapshot((ActivationRecord("main", "eqpoint", 0, 16, {}, {}, {}),)).to_bytes()
    with pytest.raises(SnapshotError):
        StackSnapshot.from_bytes(good[:-3])
    with pytest.raises(SnapshotError):
        StackSnapshot.from_bytes(good + b"\x00")

from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import generated, seeds
from unistack.interp import interpret
from unistack.isa import (ARMLIKE, ARMLIKE_REDUCED, CISC, PRESETS, RISC, X86LIKE, ISADescriptor, ISAError,
                          RegisterMap, check_isa, inject_convention_fault, load_isa, make_uniform_abi,
                          map_register, restrict_registers, role_map)
from unistack.lower import lower
from unistack.regalloc import allocatable_count
from unistack.vm import run


def toy(n: int, platform: bool = False) -> ISADescriptor:
    d = {"name": f"toy{n}", "style": RISC, "gpr_count": n,
         "register_names": [f"t{i}" for i in range(n)],
         "stack_pointer": n - 1, "frame_pointer": n - 2,
         "platform_register": n - 3 if platform else None}
    return ISADescriptor.from_dict(d)


def test_presets():
    assert X86LIKE.gpr_count == 17 and X86LIKE.style == CISC and X86LIKE.platform_register is None
    assert ARMLIKE.gpr_count == 32 and ARMLIKE.style == RISC and ARMLIKE.platform_register is not None
    assert ARMLIKE_REDUCED.gpr_count == 17 and ARMLIKE_REDUCED.style == RISC
    assert ARMLIKE_REDUCED.platform_register is not None
    assert set(PRESETS) == {"x86like", "armlike", "armlike-reduced"}


@pytest.mark.parametrize("isa", list(PRESETS.values()), ids=list(PRESETS))
def test_convention_well_formed(isa):
    check_isa(isa)
    cc = isa.convention
    assert not set(cc.arg_registers) & set(cc.callee_saved)
    covered = set(cc.callee_saved) | set(cc.caller_saved) | {isa.stack_pointer}
    if isa.platform_register is not None:
        covered.add(isa.platform_register)
    assert covered == set(range(isa.gpr_count))
    assert cc.return_register in cc.caller_saved
    assert cc.stack_alignment_bytes == 16
    assert isa.stack_pointer not in cc.allocation_order
    assert isa.frame_pointer not in cc.allocation_order


def test_uniform_x86_arm():
    ua, ub, cc, m = make_uniform_abi(X86LIKE, ARMLIKE)
    assert ua.gpr_count == ub.gpr_count == 17
    assert ua.convention is cc and ub.convention is cc
    assert len(cc.arg_registers) == 6
    assert len([r for r in cc.callee_saved if r != ua.frame_pointer]) == 5
    assert sorted(m.forward(r) for r in range(17)) == list(range(17))
    assert m.forward(ua.stack_pointer) == ub.stack_pointer
    assert m.forward(ua.frame_pointer) == ub.frame_pointer
    # ARM's platform register sits in the reserved slot; x86 reserves one too
    assert ub.reg_name(ub.platform_register) == "x18"
    assert ua.platform_register == ub.platform_register
    assert ua.platform_register not in cc.allocation_order


def test_uniform_same_isa_is_identity():
    ua, ub, cc, m = make_uniform_abi(X86LIKE, X86LIKE)
    assert ua == ub == X86LIKE
    assert m.is_identity()
    assert cc == X86LIKE.convention


def test_uniform_symmetric_and_deterministic():
    ua, ub, cc, m = make_uniform_abi(X86LIKE, ARMLIKE)
    vb, va, cc2, m2 = make_uniform_abi(ARMLIKE, X86LIKE)
    assert (ua, ub, cc) == (va, vb, cc2)
    assert m2.pairs == m.inverse().pairs
    assert make_uniform_abi(X86LIKE, ARMLIKE) == (ua, ub, cc, m)


def test_uniform_six_register_toy_still_lowers():
    ua, ub, cc, m = make_uniform_abi(toy(6), ARMLIKE)
    assert ua.gpr_count == ub.gpr_count == 6
    p = generated(3)
    ref = interpret(p)
    spills = []
    for isa in (ua, ub):
        mp, _ = lower(p, isa)
        ex, out, metrics = run(mp)
        assert (ex, out) == (ref.exit_value, ref.output)
        spills.append(metrics.dynamic_spill_store_count)
    big, _ = lower(p, ARMLIKE)
    assert spills[1] >= run(big)[2].dynamic_spill_store_count


def test_uniform_below_four_rejected():
    with pytest.raises(ISAError):
        make_uniform_abi(X86LIKE, ISADescriptor("tiny", RISC, 3, ("a", "b", "c"), 2, 1))


def test_map_register_directions():
    _, _, _, m = make_uniform_abi(X86LIKE, ARMLIKE)
    for r in range(17):
        assert map_register(m, map_register(m, r, "a->b"), "b->a") == r
    with pytest.raises(ISAError):
        map_register(m, 40)


def test_register_map_rejects_non_injective():
    with pytest.raises(ISAError):
        RegisterMap(((0, 1), (2, 1)))


def test_role_map_pins_specials():
    m = role_map(X86LIKE, ARMLIKE)
    assert m.forward(X86LIKE.stack_pointer) == ARMLIKE.stack_pointer
    assert m.forward(X86LIKE.frame_pointer) == ARMLIKE.frame_pointer
    assert m.forward(X86LIKE.convention.return_register) == ARMLIKE.convention.return_register
    for r in X86LIKE.convention.arg_registers:
        assert m.forward(r) in ARMLIKE.convention.arg_registers
    assert sorted(m.backward(r) for _, r in m.pairs) == sorted(a for a, _ in m.pairs)


def every_pair():
    out = [(a, b) for a in PRESETS.values() for b in PRESETS.values()]
    out += [(toy(n), ARMLIKE) for n in (4, 5, 6, 9)]
    out += [(restrict_registers(ARMLIKE, n), X86LIKE) for n in (5, 8, 12)]
    return out


@pytest.mark.parametrize("a, b", every_pair())
def test_uniform_outputs_well_formed_and_bijective(a, b):
    ua, ub, cc, m = make_uniform_abi(a, b)
    check_isa(ua)
    check_isa(ub)
    n = min(a.gpr_count, b.gpr_count)
    assert ua.gpr_count == ub.gpr_count == n
    assert [m.backward(m.forward(r)) for r in range(n)] == list(range(n))
    assert sorted(m.forward(r) for r in range(n)) == list(range(n))
    assert (ua.platform_register is None) == (ub.platform_register is None)


def test_isa_json_round_trip(tmp_path):
    for isa in PRESETS.values():
        path = tmp_path / f"{isa.name}.json"
        path.write_text(isa.to_json())
        assert load_isa(str(path)) == isa
    doc = json.loads(X86LIKE.to_json())
    assert doc["convention"]["arg_registers"] == [7, 6, 2, 1, 8, 9]


def test_isa_json_without_convention_gets_generic(tmp_path):
    t = toy(9, platform=True)
    check_isa(t)
    assert len(t.convention.arg_registers) >= 1


def test_unknown_isa():
    with pytest.raises(ISAError):
        load_isa("no-such-isa")


def test_malformed_isa_rejected():
    d = json.loads(X86LIKE.to_json())
    d["convention"]["callee_saved"].append(7)  # also an argument register
    with pytest.raises(ISAError):
        ISADescriptor.from_dict(d)


def test_fault_injection_breaks_convention_equality():
    ua, ub, cc, _ = make_uniform_abi(X86LIKE, ARMLIKE)
    bad = inject_convention_fault(ub)
    check_isa(bad)
    assert bad.convention != cc
    assert bad.convention.arg_registers[0] in cc.callee_saved


@given(st.integers(min_value=4, max_value=32))
def test_restrict_registers(n):
    r = restrict_registers(ARMLIKE, n)
    check_isa(r)
    assert r.gpr_count == n
    assert (r.platform_register is not None) == (n >= 5)
    assert allocatable_count(r) == n - len(r.specials)


def test_restrict_below_four_rejected():
    with pytest.raises(ISAError):
        restrict_registers(ARMLIKE, 3)


def test_restrict_full_keeps_allocation_capacity():
    r = restrict_registers(ARMLIKE, 32)
    assert len(r.convention.allocation_order) == len(ARMLIKE.convention.allocation_order)


@given(seeds)
def test_cross_isa_semantic_equality(seed):
    p = generated(seed)
    ref = interpret(p)
    ua, ub, _, _ = make_uniform_abi(X86LIKE, ARMLIKE)
    for isa in (X86LIKE, ARMLIKE, ARMLIKE_REDUCED, ua, ub):
        mp, _ = lower(p, isa)
        assert run(mp)[:2] == (ref.exit_value, ref.output)

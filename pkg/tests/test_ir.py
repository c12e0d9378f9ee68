from __future__ import annotations

import pytest
from hypothesis import given

from conftest import corpus, generated, seeds
from unistack.interp import IRRuntimeError, interpret
from unistack.ir import Instruction, ParseError, parse_program, print_program, validate
from unistack.irgen import GeneratorConfig, InfeasibleConfig, generate_program
from unistack.iropt import count_loads, eliminate_redundant_loads
from unistack.liveness import liveness, max_pressure
from unistack.lower import lower
from unistack.isa import X86LIKE
from unistack.vm import run

from oracles import path_liveness


def test_minimal_program():
    p = parse_program("fn main() { return 0 }")
    assert len(p.functions) == 1
    assert len(p.functions[0].body) == 1
    assert p.entry == "main"


def test_undefined_call_target_names_callee_and_position():
    src = "fn main() {\n  x = call foo()\n  return x\n}\n"
    with pytest.raises(ParseError) as e:
        parse_program(src)
    assert "foo" in str(e.value)
    assert e.value.line == 2


@pytest.mark.parametrize("src, needle", [
    ("fn main() {\n  x = frob 1\n  return x\n}\n", "frob"),
    ("fn main() { return 0 }\nfn main() { return 1 }\n", "main"),
    ("fn main( { return 0 }", ""),
    ("fn f() { return 0 }", "main"),
])
def test_parse_errors(src, needle):
    with pytest.raises(ParseError) as e:
        parse_program(src)
    assert needle in str(e.value)


def test_use_before_definition_rejected():
    with pytest.raises(ParseError):
        parse_program("fn main() {\n  y = add x, x\n  return y\n}\n")


def test_duplicate_eqpoint_rejected():
    with pytest.raises(ParseError):
        parse_program("fn main() {\n  eqpoint 0\n  eqpoint 0\n  return 0\n}\n")


def test_locals_and_labels_round_trip():
    src = (
        "fn main() {\n  local buf 16\n  i = const 0\n  n = const 3\nL0:\n  eqpoint 0\n"
        "  c = cmp lt i, n\n  branch c, L1, L2\nL1:\n  store-local buf+8, i\n"
        "  t = load-local buf+8\n  print t\n  one = const 1\n  i = add i, one\n  jump L0\n"
        "L2:\n  return i\n}\n"
    )
    p = parse_program(src)
    assert print_program(p) == src
    tr = interpret(p)
    assert tr.output == [0, 1, 2]
    assert tr.exit_value == 3
    assert tr.eqpoint_hits == 4


def test_print_is_deterministic_for_equal_programs():
    a = parse_program("fn main() {\n  x = const 4\n  return x\n}")
    b = parse_program("fn main()   {\n\n  x = const 4   # comment\n  return x }")
    assert print_program(a) == print_program(b)


def test_empty_body_function_prints_stably():
    from unistack.ir import Function, Program
    p = Program((Function("main", (), (), (Instruction("return", None, (0,)),), {}),
                 Function("idle", (), (), (), {})), "main")
    assert print_program(p) == print_program(p)
    assert "fn idle() {\n}" in print_program(p)


@given(seeds)
def test_round_trip_property(seed):
    p = generated(seed)
    text = print_program(p)
    assert parse_program(text) == p
    assert print_program(parse_program(text)) == text


def test_round_trip_100_generated():
    for p in corpus(100):
        assert parse_program(print_program(p)) == p


@given(seeds)
def test_generator_determinism(seed):
    cfg = GeneratorConfig(seed=seed)
    assert print_program(generate_program(cfg)) == print_program(generate_program(cfg))


@given(seeds)
def test_generated_programs_are_valid_and_have_eqpoints(seed):
    p = generated(seed)
    validate(p)
    for f in p.functions:
        assert f.eqpoints()
    lo, hi = GeneratorConfig().pressure
    assert lo <= max(max_pressure(f) for f in p.functions) <= hi


def test_generator_pressure_20():
    for s in range(5):
        p = generate_program(GeneratorConfig(seed=s, pressure=(20, 20)))
        peak = max(max(len(x) for x in path_liveness(f)) for f in p.functions)
        assert peak >= 20


def test_generator_call_depth_reaches_5_on_vm():
    for s in range(5):
        p = generate_program(GeneratorConfig(seed=s, call_depth=(5, 5)))
        mp, _ = lower(p, X86LIKE)
        assert run(mp)[2].max_call_depth == 5


@pytest.mark.parametrize("field, value", [("pressure", (0, 3)), ("functions", (3, 2)), ("loop_iters", (0, 0))])
def test_generator_infeasible(field, value):
    with pytest.raises(InfeasibleConfig):
        generate_program(GeneratorConfig(**{field: value}))


def test_division_by_zero_traps():
    p = parse_program("fn main() {\n  a = const 1\n  z = const 0\n  q = div a, z\n  return q\n}")
    with pytest.raises(IRRuntimeError):
        interpret(p)


def test_division_truncates_toward_zero():
    p = parse_program("fn main() {\n  a = const -7\n  b = const 2\n  q = div a, b\n  return q\n}")
    assert interpret(p).exit_value == -3


def test_arithmetic_wraps_at_64_bits():
    p = parse_program(
        "fn main() {\n  a = const 9223372036854775807\n  b = const 1\n  c = add a, b\n  return c\n}")
    assert interpret(p).exit_value == -(2**63)


# load elimination


def test_store_then_load_is_forwarded():
    p = parse_program("fn main() {\n  local x 8\n  v = const 5\n  store-local x, v\n"
                      "  w = load-local x\n  print w\n  return w\n}")
    q = eliminate_redundant_loads(p)
    assert count_loads(q) == 0
    assert interpret(q).output == [5]


def test_load_after_intervening_store_kept():
    p = parse_program("fn main() {\n  local x 8\n  v = const 5\n  store-local x, v\n  a = load-local x\n"
                      "  b = add a, a\n  store-local x, b\n  c = load-local x\n  return c\n}")
    q = eliminate_redundant_loads(p)
    assert count_loads(q) == 0
    assert interpret(q).exit_value == 10


def test_no_locals_is_identity():
    p = parse_program("fn main() {\n  a = const 2\n  print a\n  return a\n}")
    assert eliminate_redundant_loads(p) == p


def test_load_elimination_preserves_100_generated():
    for p in corpus(100):
        q = eliminate_redundant_loads(p)
        validate(q)
        assert count_loads(q) <= count_loads(p)
        a, b = interpret(p), interpret(q)
        assert (a.exit_value, a.output) == (b.exit_value, b.output)
        mp, _ = lower(q, X86LIKE)
        assert run(mp)[:2] == (a.exit_value, a.output)


@given(seeds)
def test_load_elimination_property(seed):
    p = generated(seed)
    q = eliminate_redundant_loads(p)
    assert count_loads(q) <= count_loads(p)
    a, b = interpret(p), interpret(q)
    assert (a.exit_value, a.output) == (b.exit_value, b.output)


# liveness


def test_straight_line_liveness():
    p = parse_program("fn main() {\n  a = const 1\n  b = const 2\n  c = add a, b\n  return c\n}")
    lv = liveness(p.functions[0])
    assert [sorted(s) for s in lv.live_in] == [[], ["a"], ["a", "b"], ["c"]]


def test_dead_value_is_never_live():
    p = parse_program("fn main() {\n  d = const 9\n  a = const 1\n  return a\n}")
    lv = liveness(p.functions[0])
    assert all("d" not in s for s in lv.live_in)
    assert all("d" not in s for s in lv.live_out)


def test_liveness_matches_path_oracle():
    checked = 0
    seed = 0
    while checked < 50:
        for f in generated(seed, functions=(1, 3), pressure=(2, 6)).functions:
            if len(f.body) <= 30:
                assert list(liveness(f).live_in) == path_liveness(f)
                checked += 1
        seed += 1


@given(seeds)
def test_liveness_oracle_property(seed):
    for f in generated(seed).functions:
        assert list(liveness(f).live_in) == path_liveness(f)

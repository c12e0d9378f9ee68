from __future__ import annotations

import json
import subprocess
import sys

import pytest

from unistack.cli import main
from unistack.ir import parse_program
from unistack.isa import X86LIKE

MINIMAL = "fn main() {\n  a = const 4\n  eqpoint 0\n  print a\n  return a\n}\n"


@pytest.fixture
def prog(tmp_path):
    path = tmp_path / "p.ir"
    path.write_text(MINIMAL)
    return path


def test_compile_writes_two_files(prog, tmp_path, capsys):
    assert main(["compile", str(prog), "--out", str(tmp_path / "out")]) == 0
    mprog = json.loads((tmp_path / "out.mprog.json").read_text())
    meta = json.loads((tmp_path / "out.meta.json").read_text())
    assert mprog["functions"] and meta["descriptors"]


def test_compile_uniform_pair_identical_metadata(prog, tmp_path):
    assert main(["compile", str(prog), "--uniform", "--out", str(tmp_path / "u")]) == 0
    metas = sorted(tmp_path.glob("u.*.meta.json"))
    assert len(metas) == 2
    assert metas[0].read_bytes() == metas[1].read_bytes()


def test_compile_kernel_uniform_identical(tmp_path):
    assert main(["compile", "kernel:pressure", "--uniform", "--out", str(tmp_path / "k")]) == 0
    a, b = sorted(tmp_path.glob("k.*.meta.json"))
    assert a.read_bytes() == b.read_bytes()


def test_compile_invalid_program_leaves_nothing(tmp_path, capsys):
    bad = tmp_path / "bad.ir"
    bad.write_text("fn main() {\n  x = call foo()\n  return x\n}\n")
    out = tmp_path / "o"
    out.mkdir()
    assert main(["compile", str(bad), "--out", str(out / "bad")]) == 2
    assert list(out.iterdir()) == []
    assert "foo" in capsys.readouterr().err


def test_compile_missing_file(tmp_path):
    assert main(["compile", str(tmp_path / "none.ir")]) == 2


def test_run_reports(prog, capsys):
    assert main(["run", str(prog), "--report", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["exit_value"] == 4 and doc["output"] == [4]
    assert main(["run", str(prog), "--isa", "armlike", "--report", "csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("isa,exit_value,dynamic_instruction_count")
    assert lines[1].startswith("armlike,4,")


def test_run_with_restricted_registers(capsys):
    assert main(["run", "kernel:pressure", "--isa", "armlike", "--regs", "6"]) == 0
    assert "exit" in capsys.readouterr().out


def test_run_trap_is_input_error(tmp_path, capsys):
    p = tmp_path / "z.ir"
    p.write_text("fn main() {\n  a = const 1\n  z = const 0\n  q = div a, z\n  return q\n}\n")
    assert main(["run", str(p)]) == 2
    assert "division by zero" in capsys.readouterr().err


def test_migrate_text_and_json(capsys):
    assert main(["migrate", "kernel:callheavy", "--stop-at-point", "7"]) == 0
    text = capsys.readouterr().out
    for phase in ("run:", "capture:", "transform:", "restore:", "finish:"):
        assert phase in text
    assert main(["migrate", "kernel:callheavy", "--uniform", "--report", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["mode"] == "uniform" and doc["stats"]["values_moved"] == 0 and doc["semantic_check"]


def test_migrate_never_taken(capsys):
    assert main(["migrate", "kernel:mixed", "--stop-at-point", "0", "--report", "json"]) == 0
    assert json.loads(capsys.readouterr().out)["taken"] is False


def test_diff_outputs(capsys):
    assert main(["diff", "kernel:pressure"]) == 0
    assert "register-depth" in capsys.readouterr().out
    assert main(["diff", "kernel:pressure", "--uniform", "--report", "json"]) == 0
    assert json.loads(capsys.readouterr().out) == {"divergences": []}
    assert main(["diff", "kernel:dense", "--uniform", "--inject-fault", "convention"]) == 1
    assert "convention" in capsys.readouterr().out


def test_verify_uniform_exit_codes(capsys):
    assert main(["verify-uniform", "kernel:mixed", "kernel:recursive"]) == 0
    assert main(["verify-uniform", "kernel:mixed", "--inject-fault", "convention"]) == 1
    assert "FAIL" in capsys.readouterr().err


def test_verify_uniform_empty_set(capsys):
    assert main(["verify-uniform", "--generate", "0", "--report", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["rows"] == [] and doc["passed"]


def test_verify_uniform_generated(capsys):
    assert main(["verify-uniform", "--generate", "3", "--seed", "10", "--report", "csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1 + 3 * 2


def test_sweep_and_scale(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    assert main(["sweep-regs", "--regs", "8:12", "--out", str(out)]) == 0
    assert out.read_text().count("\n") == 1 + 6 * 5
    assert main(["sweep-regs", "--regs", "3:32"]) == 2
    assert main(["scale-transform", "--k", "0,4", "--depths", "0:6", "--timing", "off"]) == 0
    assert "alpha" in capsys.readouterr().out


def test_gen_is_deterministic(capsys, tmp_path):
    main(["gen", "--seed", "4"])
    a = capsys.readouterr().out
    main(["gen", "--seed", "4"])
    assert capsys.readouterr().out == a
    parse_program(a)
    assert main(["gen", "--pressure", "0:2"]) == 2


def test_custom_isa_file(tmp_path, capsys):
    f = tmp_path / "isa.json"
    f.write_text(X86LIKE.to_json())
    assert main(["run", "kernel:recursive", "--isa", str(f), "--report", "json"]) == 0
    assert main(["run", "kernel:recursive", "--isa", "nope"]) == 2


def test_bad_flag_value_is_usage_error():
    with pytest.raises(SystemExit) as e:
        main(["run", "kernel:mixed", "--checked", "maybe"])
    assert e.value.code == 2


def test_console_entry_points():
    r = subprocess.run([sys.executable, "-m", "unistack", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "unistack" in r.stdout
    r = subprocess.run([sys.executable, "-m", "unistack", "diff", "kernel:recursive", "--uniform"],
                       capture_output=True, text=True)
    assert r.returncode == 0

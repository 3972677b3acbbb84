import ast
from pathlib import Path

import pytest

import varex.vm as vm_module
from varex import harness
from varex.analysis import analyze_method
from varex.vir import parse_program
from varex.vm import VM, run

from conftest import load_fixture


def prog_with(body: str, nlocals: int = 2, extra: str = "") -> object:
    return parse_program(f"""
option A
entry M.main
class M {{
  field f
  method main(0) locals {nlocals} {{
{body}
  }}
{extra}
}}
""")


def test_constant_return():
    res = run(prog_with("    CONST 1\n    RETURNVAL"), {"A": False})
    assert (res.status, res.value, res.output) == ("normal", 1, [])


def test_wordpress_page_is_corrupted_with_both_filters():
    prog = harness.load_benchmark("wordpress")
    for f in (False, True):
        res = run(prog, {"SMILEY": True, "WEATHER": True, "FAHRENHEIT": f})
        assert "[:weather<img src=smile.png>" in res.output[2]
    ok = run(prog, {"SMILEY": False, "WEATHER": True, "FAHRENHEIT": True})
    assert ok.value == "Sunny again :] 77.0F"


def test_loop_block_sequence_matches_hand_simulation():
    prog = parse_program(harness.benchmark_source("fig2-loop").replace("entry Loop.main", "entry Loop.main"))
    meth = prog.method("Loop.loop")
    cfg, _, vblocks = analyze_method(meth)
    head_of = {cfg.blocks[v.head].start: v.id for v in vblocks}
    seen = []

    def tracer(ev, m, pc):
        if ev == "step" and m.qualname == "Loop.loop" and pc in head_of:
            seen.append(head_of[pc])

    VM(prog, {"ALPHA": False, "BETA": False, "GAMMA": False}, tracer=tracer).run("Loop.loop", (2, 3))
    # i=1 differs from a, i=2 hits a and prints, i=3 differs again, then exit
    assert seen == [0, 1, 2, 3, 1, 2, 4, 1, 2, 3, 1, 5]


def test_java_style_arithmetic():
    res = run(prog_with("    CONST -7\n    CONST 2\n    DIV\n    CONST -7\n    CONST 2\n    REM\n    ADD\n    RETURNVAL"), {"A": False})
    assert res.value == -4
    res = run(prog_with("    CONST 1\n    CONST 0\n    DIV\n    RETURNVAL"), {"A": False})
    assert (res.status, res.message) == ("exception", "ArithmeticException: / by zero")


def test_null_field_access_raises():
    res = run(prog_with("    CONST null\n    GETFIELD f\n    RETURNVAL"), {"A": False})
    assert res.status == "exception" and "NullPointerException" in res.message


def test_arrays():
    body = "\n".join([
        "    CONST 3", "    NEWARRAY", "    STORE 0",
        "    LOAD 0", "    CONST 1", "    CONST 42", "    ARRSTORE",
        "    LOAD 0", "    CONST 1", "    ARRLOAD",
        "    LOAD 0", "    ARRLEN", "    ADD", "    RETURNVAL"])
    assert run(prog_with(body), {"A": False}).value == 45
    bad = "    CONST 2\n    NEWARRAY\n    CONST 5\n    ARRLOAD\n    RETURNVAL"
    res = run(prog_with(bad), {"A": False})
    assert res.status == "exception" and "ArrayIndexOutOfBounds" in res.message


def test_handler_receives_message():
    body = "\n".join([
        "  s:", '    CONST "boom"', "    THROW", "  e:", "    CONST 0", "    RETURNVAL",
        "  h:", "    RETURNVAL", "    handler s e h"])
    assert run(prog_with(body), {"A": False}).value == "boom"


def test_fuel_exhaustion_aborts():
    res = run(prog_with("  top:\n    GOTO top"), {"A": False}, fuel=1000)
    assert res.status == "abort" and "fuel" in res.message


def test_deep_recursion_aborts():
    extra = "  method r(1) locals 1 {\n    LOAD 0\n    INVOKE M.r 1\n    RETURNVAL\n  }"
    res = run(prog_with("    CONST 0\n    INVOKE M.r 1\n    RETURNVAL", extra=extra), {"A": False})
    assert res.status == "abort"


def test_getoption_reads_configuration():
    p = prog_with("    GETOPTION A\n    RETURNVAL")
    assert run(p, {"A": True}).value is True
    assert run(p, {"A": False}).value is False


def test_lists_and_iterators():
    prog = load_fixture("vlist")
    res = run(prog, {"ALPHA": False, "BETA": True, "GAMMA": False})
    assert res.output == ["2", "4", "5"]
    assert res.value == 2


def test_unknown_intrinsic_aborts():
    res = run(prog_with("    INTRINSIC nope.nope 0\n    RETURNVAL"), {"A": False})
    assert res.status == "abort"


def test_interpreter_has_no_variability_imports():
    tree = ast.parse(Path(vm_module.__file__).read_text())
    imported = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            imported.update(a.name for a in node.names)
        elif isinstance(node, ast.ImportFrom):
            imported.add(("." * node.level) + (node.module or ""))
            imported.update(a.name for a in node.names)
    for banned in ("formula", "condval", "runtime", "engine", "transform"):
        assert not any(banned in name for name in imported), imported

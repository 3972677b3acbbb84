import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varex import condval as cv
from varex import formula as fm
from varex.condval import Choice, LeafFailure, One
from varex.engine import run_variational
from varex.formula import FALSE, TRUE, evaluate, is_satisfiable
from varex.runtime import (
    ABORT,
    MODELED,
    BarrierPolicy,
    BarrierViolation,
    Runtime,
    VListModel,
    VSetModel,
    invoke_across_barrier,
    vlist_add,
    vlist_get,
    vlist_iter,
    vlist_size,
    vset_add,
    vset_contains,
)
from varex.vm import VMThrow

from conftest import load_fixture
from strategies import OPTS, as_cfg, build, random_expr, rows

fm.declare(["ALPHA", "BETA", "GAMMA", "SMILEY"])
ALPHA, BETA, GAMMA, SMILEY = (fm.mk_option(n) for n in ("ALPHA", "BETA", "GAMMA", "SMILEY"))


def optional_list():
    lst = VListModel()
    for v, pres in ((1, ALPHA), (2, BETA), (3, GAMMA), (4, TRUE), (5, TRUE)):
        vlist_add(lst, pres, One(v))
    return lst


def test_get_first_builds_nested_chain():
    got = vlist_get(optional_list(), TRUE, One(0))
    assert got == Choice(ALPHA, One(1), Choice(BETA, One(2), Choice(GAMMA, One(3), One(4))))


def test_iter_yields_presences():
    assert vlist_iter(optional_list(), TRUE) == [(1, ALPHA), (2, BETA), (3, GAMMA), (4, TRUE), (5, TRUE)]
    assert vlist_iter(optional_list(), ~ALPHA) == [(2, BETA & ~ALPHA), (3, GAMMA & ~ALPHA), (4, ~ALPHA), (5, ~ALPHA)]
    assert vlist_iter(VListModel(), TRUE) == []


def test_get_out_of_range_fails_under_sub_context():
    lst = optional_list()
    with pytest.raises(LeafFailure) as info:
        vlist_get(lst, TRUE, One(4))
    # only configurations with all three optional entries have a fifth element
    assert info.value.ctx == ~(ALPHA & BETA & GAMMA)


def test_set_examples():
    s = VSetModel()
    assert vset_contains(s, TRUE, One("x")) == One(False)
    vset_add(s, BETA, One("x"))
    assert vset_contains(s, TRUE, One("x")) == Choice(BETA, One(True), One(False))
    vset_add(s, ~BETA, One("x"))
    assert vset_contains(s, TRUE, One("x")) == One(True)


# -- projection properties ------------------------------------------------------------

NV = 8


def random_ops(rng: random.Random, n: int):
    ops = []
    for _ in range(n):
        ctx = random_expr(rng, NV, 4)
        vctx = random_expr(rng, NV, 3)
        ops.append((ctx, vctx, rng.randint(0, 4), rng.randint(0, 4)))
    return ops


def materialize(op):
    ctx, vctx, x, y = op
    f = build(ctx)
    return f, cv.choice(build(vctx), One(x), One(y))


@settings(max_examples=40)
@given(st.integers(0, 2**32), st.integers(0, 6))
def test_vlist_projection_matches_plain_list(seed, n):
    rng = random.Random(seed)
    ops = [materialize(o) for o in random_ops(rng, n)]
    lst = VListModel()
    for f, v in ops:
        if is_satisfiable(f):
            vlist_add(lst, f, v)
    assert all(is_satisfiable(p) for _, p in lst.entries)
    size = vlist_size(lst, TRUE)
    idx = rng.randint(0, 3)
    try:
        got, fail_region = vlist_get(lst, TRUE, One(idx)), FALSE
    except LeafFailure as exc:
        got, fail_region = None, exc.ctx
    for row in rows(NV):
        cfg = as_cfg(row, NV)
        plain = [cv.select(v, cfg) for f, v in ops if evaluate(f, cfg)]
        assert [x for x, p in vlist_iter(lst, TRUE) if evaluate(p, cfg)] == plain
        assert cv.select(size, cfg) == len(plain)
        if idx < len(plain):
            assert not evaluate(fail_region, cfg)
            if got is not None:
                assert cv.select(got, cfg) == plain[idx]
        else:
            assert evaluate(fail_region, cfg)


@settings(max_examples=40)
@given(st.integers(0, 2**32), st.integers(0, 6))
def test_vset_projection_matches_plain_set(seed, n):
    rng = random.Random(seed)
    ops = [materialize(o) for o in random_ops(rng, n)]
    s = VSetModel()
    for f, v in ops:
        if is_satisfiable(f):
            vset_add(s, f, v)
    assert all(is_satisfiable(p) for _, p in s.items.values())
    probes = {k: vset_contains(s, TRUE, One(k)) for k in range(5)}
    for row in rows(NV):
        cfg = as_cfg(row, NV)
        plain = {cv.select(v, cfg) for f, v in ops if evaluate(f, cfg)}
        for k, res in probes.items():
            assert cv.select(res, cfg) == (k in plain)


# -- barrier -----------------------------------------------------------------------------


def test_side_effect_free_call_runs_per_leaf():
    rt = Runtime()
    page = Choice(SMILEY, One("a [:weather]"), One("b [:weather]"))
    out = rt.call("replace", TRUE, [page, One(":w"), One("W")])
    assert out == Choice(SMILEY, One("a [Weather]"), One("b [Weather]"))
    assert rt.barrier_log[-1][0] == "replace"


def test_modeled_print_records_contexts():
    rt = Runtime()
    invoke_across_barrier(rt, "print", SMILEY, [Choice(ALPHA, One("x"), One("y"))])
    assert sorted(rt.output, key=lambda e: e[0]) == [("x", SMILEY & ALPHA), ("y", SMILEY & ~ALPHA)]


def test_abort_allowed_only_when_shared():
    rt = Runtime()
    rt.call("raw_print", TRUE, [One("hello")])
    assert rt.output == [("hello", TRUE)]
    with pytest.raises(BarrierViolation):
        rt.call("raw_print", SMILEY, [One("hello")])
    with pytest.raises(BarrierViolation):
        rt.call("raw_print", TRUE, [Choice(SMILEY, One(1), One(2))])


def test_abort_allowed_inside_narrowed_run():
    # after an exception narrowed the run, the live region counts as shared
    rt = Runtime(TRUE)
    rt.G = ALPHA
    rt.call("raw_print", ALPHA, [One("ok")])
    assert rt.output == [("ok", ALPHA)]


def test_side_effect_free_failure_narrows_to_leaf():
    rt = Runtime()
    with pytest.raises(VMThrow):
        rt.call("replace", TRUE, [Choice(ALPHA, One(None), One("s")), One("a"), One("b")])
    assert rt.G == ALPHA


def test_policy_file_parsing():
    pol = BarrierPolicy.from_text("# comment\nintrinsic replace ABORT\nintrinsic print MODELED\n\n")
    assert pol.kind("replace") == ABORT
    assert pol.kind("print") == MODELED
    for bad in ("intrinsic replace MAYBE", "replace ABORT", "intrinsic nope ABORT", "intrinsic strlen MODELED"):
        with pytest.raises(ValueError):
            BarrierPolicy.from_text(bad)


def test_unclassified_intrinsic_aborts():
    from varex.vm import VMAbort

    with pytest.raises(VMAbort):
        BarrierPolicy({}).kind("print")


def test_abort_policy_violation_ends_run_in_program():
    from varex.vir import parse_program

    prog = parse_program("""
option A
entry P.main
class P {
  method main(0) locals 0 {
    GETOPTION A
    IFTRUE yes
    CONST 0
    RETURNVAL
  yes:
    CONST "raw"
    INTRINSIC raw_print 1
    RETURNVAL
  }
}
""")
    var = run_variational(prog)
    assert var.statuses[0] == "abort"
    assert "raw_print" in var.runs[0].message


def test_vlist_loop_body_runs_only_where_present():
    var = run_variational(load_fixture("vlist"))
    assert len(var.runs) == 1
    r = var.runs[0]
    printed = [(t, c) for t, c in r.output]
    assert printed == [("1", ALPHA), ("2", BETA), ("3", GAMMA), ("4", TRUE), ("5", TRUE)]

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varex import condval as cv
from varex import formula as fm
from varex.condval import Choice, LeafFailure, One
from varex.formula import FALSE, TRUE

from strategies import OPTS, as_cfg, build, ev, exprs, random_expr, rows

fm.declare(["a", "b", "c", "F", "M", "SMILEY", "A"])
a, b, c = (fm.mk_option(n) for n in "abc")


def test_one_and_select():
    assert cv.select(cv.one(5), {}) == 5
    assert cv.select(cv.one(None), {}) is None
    assert cv.one("done").to_text() == 'One("done")'


def test_choice_examples():
    assert cv.choice(TRUE, One(1), One(2)) == One(1)
    assert cv.choice(a, One(7), One(7)) == One(7)
    v = cv.choice(a, cv.choice(~b | c, One(1), One(3)), One(2))
    assert cv.select(v, {"a": True, "b": True, "c": False}) == 3
    assert cv.select(v, {"a": False, "b": True, "c": True}) == 2
    assert cv.select(v, {"a": True, "b": False, "c": False}) == 1


def test_smap_examples():
    F = fm.mk_option("F")
    assert cv.smap(TRUE, One(5), lambda x: x + 1) == One(6)
    v = cv.smap(TRUE, Choice(F, One(25), One(10)), lambda t: t * 1.8 + 32)
    assert v == Choice(F, One(77.0), One(50.0))
    assert cv.smap(a, Choice(a, One(1), One(2)), lambda x: x + 10) == One(11)


def test_binary_add_has_four_leaves():
    v = cv.combine(TRUE, Choice(a, One(1), One(2)), Choice(b, One(10), One(20)), lambda x, y: x + y)
    got = {cv.select(v, {"a": x, "b": y}) for x in (True, False) for y in (True, False)}
    assert got == {11, 21, 12, 22}
    assert len(v.leaves()) == 4
    assert cv.select(v, {"a": True, "b": False}) == 21


def test_sflatmap_identity():
    assert cv.sflatmap(TRUE, One(3), lambda x: One(x)) == One(3)


def test_write_under_examples():
    A = fm.mk_option("A")
    assert cv.write_under(A, One(1), One(2)) == Choice(A, One(2), One(1))
    assert cv.write_under(TRUE, Choice(a, One(1), One(2)), One(9)) == One(9)
    v = Choice(a, One(1), One(2))
    assert cv.write_under(FALSE, v, One(5)) == v


def test_when_true_examples():
    S, F, M = fm.mk_option("SMILEY"), fm.mk_option("F"), fm.mk_option("M")
    assert cv.when_true(TRUE, Choice(S, One(1), One(0))) == S
    assert cv.when_true(M, One(True)) == M
    assert cv.when_true(M, Choice(F, One(True), One(False))) == F & M
    with pytest.raises(TypeError):
        cv.when_true(TRUE, One("yes"))


def test_equal_values_merge_in_first_insertion_order():
    v = cv.from_leaves([(a & b, 1), (a & ~b, 2), (~a & b, 1), (~a & ~b, 3)])
    assert v.leaves()[0][1] == 1
    assert v.leaves()[0][0] == b
    assert len(v.leaves()) == 3


def test_nested_chain_layout():
    g = fm.mk_option("c")
    v = cv.from_leaves([(a, 1), (~a & b, 2), (~a & ~b & g, 3), (~a & ~b & ~g, 4)])
    assert v == Choice(a, One(1), Choice(b, One(2), Choice(g, One(3), One(4))))


def test_leaf_failure_carries_region():
    def boom(x):
        if x == 0:
            raise ZeroDivisionError("zero")
        return 10 // x

    with pytest.raises(LeafFailure) as info:
        cv.smap(TRUE, Choice(a, One(0), One(2)), boom, (ZeroDivisionError,))
    assert info.value.ctx == a
    with pytest.raises(LeafFailure) as info:
        cv.combine(b, Choice(a, One(1), One(2)), Choice(c, One(0), One(1)), lambda x, y: x // y, (ZeroDivisionError,))
    assert info.value.ctx == a & b & c


def test_objects_are_keyed_by_identity():
    x, y = object(), object()
    v = cv.from_leaves([(a, x), (~a, y)])
    assert len(v.leaves()) == 2
    assert cv.from_leaves([(a, x), (~a, x)]) == One(x)


# -- properties -------------------------------------------------------------------


def random_cv(rng, nvars: int, leaves: int):
    if leaves <= 1 or rng.random() < 0.3:
        return ("one", rng.randint(-3, 3))
    k = rng.randint(1, leaves - 1)
    return ("choice", random_expr(rng, nvars, 4), random_cv(rng, nvars, k), random_cv(rng, nvars, leaves - k))


def cond_values(nvars: int):
    return st.integers(0, 2**32).map(lambda seed: random_cv(random.Random(seed), nvars, 6))


def build_cv(t):
    if t[0] == "one":
        return One(t[1])
    return cv.choice(build(t[1]), build_cv(t[2]), build_cv(t[3]))


def eval_cv(t, row):
    if t[0] == "one":
        return t[1]
    return eval_cv(t[2], row) if ev(t[1], row) else eval_cv(t[3], row)


@st.composite
def setting(draw):
    n = draw(st.integers(1, 8))
    return n, draw(exprs(n, 6)), draw(cond_values(n)), draw(cond_values(n))


@settings(max_examples=1000)
@given(setting())
def test_projection_homomorphism(case):
    n, ctx_e, t1, t2 = case
    ctx, v, w = build(ctx_e), build_cv(t1), build_cv(t2)

    def fn(x):
        return x * 3 - 1

    def gfn(x):
        return cv.choice(fm.mk_option(OPTS[abs(x) % n]), One(x + 1), One(x * 2))

    mapped = cv.smap(ctx, v, fn)
    flat = cv.sflatmap(ctx, v, gfn)
    written = cv.write_under(ctx, v, w)
    summed = cv.combine(ctx, v, w, lambda x, y: x + y)
    for row in rows(n):
        cfg = as_cfg(row, n)
        plain_v, plain_w = eval_cv(t1, row), eval_cv(t2, row)
        assert cv.select(v, cfg) == plain_v
        assert cv.select(written, cfg) == (plain_w if ev(ctx_e, row) else plain_v)
        if ev(ctx_e, row):
            assert cv.select(mapped, cfg) == fn(plain_v)
            assert cv.select(flat, cfg) == cv.select(gfn(plain_v), cfg)
            assert cv.select(summed, cfg) == plain_v + plain_w


@settings(max_examples=300)
@given(setting())
def test_leaves_are_disjoint_and_cover(case):
    _, _, t, _ = case
    leaves = build_cv(t).leaves()
    acc = FALSE
    for i, (ci, _) in enumerate(leaves):
        assert fm.is_satisfiable(ci)
        for cj, _ in leaves[i + 1:]:
            assert fm.is_contradiction(ci & cj)
        acc = acc | ci
    assert acc == TRUE
    values = [cv.leaf_key(x) for _, x in leaves]
    assert len(values) == len(set(values))


@settings(max_examples=300)
@given(setting())
def test_compression_is_idempotent(case):
    _, f_e, t1, t2 = case
    f, v, w = build(f_e), build_cv(t1), build_cv(t2)
    once = cv.choice(f, v, w)
    assert cv.from_leaves(once.leaves()) == once
    assert cv.choice(f, once, once) == once
    assert cv.choice(TRUE, once, w) == once


@settings(max_examples=300)
@given(setting())
def test_when_true_matches_projection(case):
    n, ctx_e, t, _ = case
    v = cv.smap(TRUE, build_cv(t), lambda x: x > 0)
    region = cv.when_true(build(ctx_e), v)
    for row in rows(n):
        cfg = as_cfg(row, n)
        assert fm.evaluate(region, cfg) == (ev(ctx_e, row) and cv.select(v, cfg))

"""Acceptance criteria, one test each.

Every test records a PASS or FAIL line; the lines are printed at the end of
the pytest run (see conftest.py) and immediately when run with -s.
"""

import functools
import random
import time

from varex import align, harness
from varex import condval as cv
from varex import formula as fm
from varex.condval import Choice, One
from varex.engine import run_variational
from varex.formula import TRUE, enumerate_configs, parse_formula
from varex.runtime import Runtime, VListModel, vlist_add, vlist_get
from varex.transform import transform_program
from varex.vm import VM, run

from conftest import FIXTURES, load_fixture
from strategies import OPTS, as_cfg, build, ev, random_expr, rows
from test_condval import build_cv, eval_cv, random_cv

RESULTS = []

FIXTURE_NAMES = sorted(p.stem for p in FIXTURES.glob("*.vasm"))


def criterion(number: int, title: str):
    def wrap(fn):
        @functools.wraps(fn)
        def run_it():
            try:
                detail = fn()
            except BaseException as exc:
                line = f"[{number:2d}] FAIL {title}: {type(exc).__name__}: {exc}".splitlines()[0]
                RESULTS.append(line)
                print(line)
                raise
            line = f"[{number:2d}] PASS {title}" + (f" ({detail})" if detail else "")
            RESULTS.append(line)
            print(line)

        return run_it

    return wrap


def all_programs():
    progs = [(n, harness.load_benchmark(n)) for n in harness.BENCHMARKS]
    return progs + [(n, load_fixture(n)) for n in FIXTURE_NAMES]


@criterion(1, "differential equivalence on all benchmarks")
def test_differential_equivalence():
    assert len(harness.BENCHMARKS) >= 7
    t0 = time.perf_counter()
    total, bad = 0, []
    for name in harness.BENCHMARKS:
        prog = harness.load_benchmark(name)
        assert 3 <= len(prog.options) <= 12, name
        rep = harness.diff_test(prog, name)
        assert not rep.sampled and rep.configs == rep.valid
        total += rep.configs
        bad += [(name, c.config, c.divergence) for c in rep.checks if not c.ok]
    elapsed = time.perf_counter() - t0
    assert bad == [], bad[:3]
    assert elapsed < 120, f"{elapsed:.1f}s"
    return f"{len(harness.BENCHMARKS)} programs, {total} configurations, 0 divergences, {elapsed:.1f}s"


@criterion(2, "VBlock contexts stay disjoint with assertions on")
def test_disjoint_contexts():
    checks = 0
    for name, prog in all_programs():
        # EngineAssertion would propagate out of run_variational on any overlap
        var = run_variational(prog, assertions=True)
        checks += sum(r.disjoint_checks for r in var.runs)
    assert checks > 0
    return f"{checks} checks, 0 violations"


@criterion(3, "getWeather walk-through trace and join")
def test_get_weather_walkthrough():
    f = parse_formula("FAHRENHEIT")
    var = run_variational(harness.load_benchmark("getweather"))
    mt = next(t for t in var.runs[0].method_traces if t.method == "Weather.getWeather")
    assert mt.mctx == TRUE
    assert mt.entries == [(0, TRUE), (1, f), (2, ~f), (3, TRUE)]
    # under a narrower caller context the join is that context, not TRUE
    root = parse_formula("VERBOSE & !UPPER")
    rt = Runtime(root)
    VM(transform_program(harness.load_benchmark("getweather")).program, {}, rt.intrinsics()).run()
    mt = next(t for t in rt.method_traces if t.method == "Weather.getWeather")
    assert mt.entries[-1] == (3, mt.mctx) and mt.mctx == root
    return "[b0^True, b1^FAHRENHEIT, b2^!FAHRENHEIT, b3^True]"


@criterion(4, "alignment numbers for the two-branch example")
def test_alignment_numbers():
    fm.declare(["ALPHA"])
    a = fm.mk_option("ALPHA")
    assert align.merge_length(("b0", "b1", "b3"), ("b0", "b2", "b3")) == 4
    tv = [("b0", TRUE), ("b1", a), ("b2", ~a), ("b3", TRUE)]
    tv2 = [("b0", TRUE), ("b1", a), ("b3", a), ("b2", ~a), ("b3", ~a)]
    assert align.check_optimal(tv).verdict == align.OPTIMAL
    res = align.check_optimal(tv2)
    assert res.verdict == align.NON_OPTIMAL and res.length == 5
    return "merge 4, t_v OPTIMAL, t_v' NON_OPTIMAL"


@criterion(5, "guaranteed methods always share optimally")
def test_guarantee_bridge():
    executions = 0
    for name, prog in all_programs():
        rep = harness.sharing_stats(prog, name)
        assert rep.violations == [], (name, rep.violations[:3])
        executions += rep.guaranteed_executions
    assert executions > 0
    return f"{executions} guaranteed executions, 0 exceptions"


def _loop_verdict(fixture: str) -> str:
    var = run_variational(load_fixture(fixture))
    verdicts = [v.verdict for v in harness.sharing_stats(load_fixture(fixture), fixture, var=var).executions
                if v.method == "Order.loop"]
    assert len(verdicts) == 1
    return verdicts[0]


@criterion(6, "no static order of the loop branches is always optimal")
def test_static_order_counterexample():
    from varex.analysis import NO_GUARANTEE

    got = {f: _loop_verdict(f) for f in ("order-natural-a", "order-natural-b", "order-swapped-a", "order-swapped-b")}
    assert transform_program(load_fixture("order-natural-a")).plan("Order.loop").verdict == NO_GUARANTEE
    # each order has an input pair it handles optimally and one it does not
    assert got["order-natural-a"] == align.OPTIMAL and got["order-natural-b"] == align.NON_OPTIMAL
    assert got["order-swapped-a"] == align.NON_OPTIMAL and got["order-swapped-b"] == align.OPTIMAL
    return ", ".join(f"{k}={v}" for k, v in got.items())


@criterion(7, "variational runs execute fewer blocks than brute force")
def test_sharing_economy():
    ratios = {}
    for name in harness.BENCHMARKS:
        rep = harness.diff_test(harness.load_benchmark(name), name)
        if rep.valid >= 2:
            assert rep.variational_blocks < rep.plain_blocks, name
        ratios[name] = rep.variational_blocks / rep.plain_blocks
    assert ratios["wordpress"] <= 0.5
    return "wordpress ratio {:.3f}; max ratio {:.3f}".format(ratios["wordpress"], max(ratios.values()))


@criterion(8, "conditional value laws over 1000 random cases")
def test_condval_laws():
    rng = random.Random(harness.default_seed())
    cases = 1000
    for k in range(cases):
        n = 1 + k % 8
        ctx_e = random_expr(rng, n, 6)
        t1, t2 = random_cv(rng, n, 6), random_cv(rng, n, 6)
        ctx, v, w = build(ctx_e), build_cv(t1), build_cv(t2)

        def gfn(x):
            return cv.choice(fm.mk_option(OPTS[abs(x) % n]), One(x + 1), One(x * 2))

        mapped = cv.smap(ctx, v, lambda x: x * 3 - 1)
        flat = cv.sflatmap(ctx, v, gfn)
        written = cv.write_under(ctx, v, w)
        for row in rows(n):
            cfg = as_cfg(row, n)
            pv, pw = eval_cv(t1, row), eval_cv(t2, row)
            assert cv.select(written, cfg) == (pw if ev(ctx_e, row) else pv)
            if ev(ctx_e, row):
                assert cv.select(mapped, cfg) == pv * 3 - 1
                assert cv.select(flat, cfg) == cv.select(gfn(pv), cfg)
    return f"{cases} cases, up to 8 options, exhaustive per case"


@criterion(9, "restart after a variational exception")
def test_exception_restart():
    prog = load_fixture("throw-alpha")
    var = run_variational(prog)
    assert len(var.runs) == 2
    for cfg in enumerate_configs(prog.options, prog.feature_model):
        plain = run(prog, cfg)
        got = var.outcome(cfg)
        assert got.status == plain.status
        if plain.status == "normal":
            assert got.value == plain.value
        else:
            assert got.message == plain.message
    return f"2 runs: {', '.join(var.statuses)}"


@criterion(10, "variational list access patterns")
def test_vlist_access():
    fm.declare(["ALPHA", "BETA", "GAMMA"])
    al, be, ga = (fm.mk_option(n) for n in ("ALPHA", "BETA", "GAMMA"))
    lst = VListModel()
    for v, pres in ((1, al), (2, be), (3, ga), (4, TRUE), (5, TRUE)):
        vlist_add(lst, pres, One(v))
    assert vlist_get(lst, TRUE, One(0)) == Choice(al, One(1), Choice(be, One(2), Choice(ga, One(3), One(4))))

    prog = load_fixture("vlist")
    tp = transform_program(prog)
    plan = tp.plan("L.main")
    code = plan.normalized.code
    print_at = next(i for i, ins in enumerate(code) if ins.op == "INTRINSIC" and ins.args[0] == "print")
    body = next(v.id for v in plan.vblocks if plan.cfg.block_of[print_at] in v.members)
    var = run_variational(tp)
    assert len(var.runs) == 1
    assert cv.select(var.value, {"ALPHA": False, "BETA": True, "GAMMA": False}) == 2
    executions = sum(1 for m, vb, _ in var.runs[0].trace if m == "L.main" and vb == body)
    assert executions == 5
    brute = sum(sum(1 for m, vb in harness.plain_run(tp, cfg).blocks if m == "L.main" and vb == body)
                for cfg in enumerate_configs(prog.options, prog.feature_model))
    return f"body ran {executions} times variationally vs {brute} across all configurations"

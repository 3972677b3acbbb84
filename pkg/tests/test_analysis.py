import itertools

import networkx as nx
import pytest

from varex import harness
from varex.analysis import (
    GUARANTEED_OPTIMAL,
    NO_GUARANTEE,
    analyze_method,
    classify_sharing_guarantee,
    compute_lift_bits,
    effective_kind,
    vblock_graph,
)
from varex.transform import normalize_method
from varex.vir import UNCOND, build_cfg, parse_program


def method(body: str, nparams: int = 0, nlocals: int = 2):
    prog = parse_program(f"""
option A
option B
entry T.m
class T {{
  method m({nparams}) locals {nlocals} {{
{body}
  }}
}}
""")
    return prog.method("T.m")


def all_methods():
    for name in harness.BENCHMARKS:
        for m in harness.load_benchmark(name).methods():
            yield f"{name}:{m.qualname}", normalize_method(m)


METHODS = list(all_methods())


def test_get_weather_has_four_ordered_vblocks():
    m = harness.load_benchmark("getweather").method("Weather.getWeather")
    cfg, _, vbs = analyze_method(normalize_method(m))
    assert [v.id for v in vbs] == [0, 1, 2, 3]
    starts = [v.first_instruction(cfg) for v in vbs]
    assert starts == sorted(starts)
    assert vbs[0].entry and vbs[3].exit
    assert sorted(t for t, _ in vbs[0].succs) == [1, 2]
    assert vbs[1].succs == [(3, UNCOND)] and vbs[2].succs == [(3, UNCOND)]
    assert classify_sharing_guarantee(vbs) == GUARANTEED_OPTIMAL


def test_loop_method_has_six_vblocks_without_guarantee():
    m = harness.load_benchmark("fig2-loop").method("Loop.loop")
    _, _, vbs = analyze_method(normalize_method(m))
    assert len(vbs) == 6
    assert vbs[0].entry and vbs[5].exit
    assert sorted(t for t, _ in vbs[2].succs) == [3, 4]
    assert classify_sharing_guarantee(vbs) == NO_GUARANTEE


def test_unconditional_edge_into_join_with_conditional_pred_stays_separate():
    m = method("""
    GETOPTION A
    IFTRUE b
    CONST 1
    STORE 0
    GOTO c
  b:
    CONST 2
    STORE 0
    GETOPTION B
    IFTRUE c
    CONST 3
    STORE 0
  c:
    LOAD 0
    RETURNVAL
""")
    cfg, _, vbs = analyze_method(m)
    c_block = cfg.block_of[m.labels["c"]]
    owner = next(v for v in vbs if c_block in v.members)
    assert owner.members == [c_block]
    assert owner.head == c_block


def test_branch_on_option_is_conditional():
    m = method("    GETOPTION A\n    IFTRUE x\n  x:\n    CONST 0\n    RETURNVAL")
    info = compute_lift_bits(m)
    assert info.cond_branches == frozenset({1})


def test_constant_print_lifts_no_values():
    m = method('    CONST "done"\n    INTRINSIC print 1\n    POP\n    CONST null\n    RETURNVAL')
    info = compute_lift_bits(m)
    assert not info.locals
    # only the call and the return go through the runtime; the argument stays plain
    assert info.stack[1] == (False,)
    assert [i for i, on in enumerate(info.lifted) if on and m.code[i].op not in ("INTRINSIC", "RETURNVAL")] == []


def test_constant_bound_loop_is_single_vblock():
    m = method("""
    CONST 0
    STORE 0
  head:
    LOAD 0
    CONST 3
    CMPLT
    NEG
    IFTRUE out
    LOAD 0
    CONST 1
    ADD
    STORE 0
    GOTO head
  out:
    LOAD 0
    RETURNVAL
""")
    cfg, info, vbs = analyze_method(m)
    assert len(vbs) == 1
    assert not info.cond_branches and not info.locals


def test_while_loop_with_one_vblock_body_is_guaranteed():
    m = method("""
    CONST 0
    STORE 0
  head:
    GETOPTION A
    IFTRUE out
    LOAD 0
    CONST 1
    ADD
    STORE 0
    GOTO head
  out:
    LOAD 0
    RETURNVAL
""")
    _, _, vbs = analyze_method(m)
    g = vblock_graph(vbs)
    assert not nx.is_directed_acyclic_graph(g)
    assert classify_sharing_guarantee(vbs) == GUARANTEED_OPTIMAL


def test_acyclic_is_guaranteed():
    m = method("    GETOPTION A\n    IFTRUE x\n    CONST 1\n    RETURNVAL\n  x:\n    CONST 2\n    RETURNVAL")
    _, _, vbs = analyze_method(normalize_method(m))
    assert nx.is_directed_acyclic_graph(vblock_graph(vbs))
    assert classify_sharing_guarantee(vbs) == GUARANTEED_OPTIMAL


def test_multiple_return_vblocks_rejected_before_normalization():
    m = method("    GETOPTION A\n    IFTRUE x\n    CONST 1\n    RETURNVAL\n  x:\n    CONST 2\n    RETURNVAL")
    with pytest.raises(ValueError):
        analyze_method(m)


@pytest.mark.parametrize("name,meth", METHODS, ids=[n for n, _ in METHODS])
def test_partition_is_sound(name, meth):
    cfg, lift, vbs = analyze_method(meth)
    owner = {}
    for v in vbs:
        for b in v.members:
            assert b not in owner
            owner[b] = v.id
    assert set(owner) == {b.id for b in cfg.blocks}
    for s, d, k in cfg.edges:
        if owner[s] == owner[d]:
            assert effective_kind(cfg, lift, s, k) == UNCOND, (s, d, k)
            assert d != vbs[owner[d]].head


@pytest.mark.parametrize("name,meth", METHODS, ids=[n for n, _ in METHODS])
def test_ordering_respects_strict_predecessors(name, meth):
    cfg, _, vbs = analyze_method(meth)
    g = vblock_graph(vbs)
    reach = {v.id: nx.descendants(g, v.id) for v in vbs}
    for a, b in itertools.permutations([v.id for v in vbs], 2):
        if b in reach[a] and a not in reach[b]:
            assert a < b
    assert vbs[0].entry
    exits = [v for v in vbs if v.exit]
    assert len(exits) <= 1
    if exits:
        assert exits[0].id == len(vbs) - 1


def test_loop_bodies_keep_source_order():
    m = harness.load_benchmark("fig2-loop").method("Loop.loop")
    cfg, _, vbs = analyze_method(normalize_method(m))
    g = vblock_graph(vbs)
    comp = max(nx.strongly_connected_components(g), key=len)
    members = sorted(comp)
    assert [vbs[i].first_instruction(cfg) for i in members] == sorted(vbs[i].first_instruction(cfg) for i in members)


def test_lifting_fixpoint_marks_branch_stored_locals():
    m = method("""
    CONST 1
    STORE 0
    GETOPTION A
    IFTRUE skip
    CONST 2
    STORE 0
  skip:
    LOAD 0
    RETURNVAL
""")
    info = compute_lift_bits(m)
    assert 0 in info.locals

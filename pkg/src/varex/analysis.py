"""Static analyses used by the transformer.

* lift bits: which locals and stack slots may hold option-dependent values,
  and which branches therefore split the configuration space;
* VBlock partitioning of the control-flow graph;
* the execution order of VBlocks;
* a static classifier for methods whose every execution shares optimally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

import networkx as nx

from .vir import CFG, COND, EXC, UNCOND, MethodDef, build_cfg, validate_stack_discipline

GUARANTEED_OPTIMAL = "GUARANTEED_OPTIMAL"
NO_GUARANTEE = "NO_GUARANTEE"

# instructions whose result is always a conditional value
_SOURCES = {"GETFIELD", "ARRLOAD", "INVOKE", "INTRINSIC", "GETOPTION"}
# instructions that are always rewritten into runtime calls
_ALWAYS_LIFTED = {"GETFIELD", "PUTFIELD", "ARRLOAD", "ARRSTORE", "INVOKE", "INTRINSIC",
                  "GETOPTION", "THROW", "RETURN", "RETURNVAL"}
_TAINT_OPS = {"ADD", "SUB", "MUL", "DIV", "REM", "NEG", "CMPEQ", "CMPLT", "CMPGT", "CONCAT",
              "NEWARRAY", "ARRLEN"}


@dataclass
class LiftInfo:
    locals: FrozenSet[int]
    stack: List[Optional[Tuple[bool, ...]]]  # lift bit per slot before each instruction
    lifted: List[bool]  # instruction is rewritten into a runtime call
    cond_branches: FrozenSet[int]  # IFTRUE instructions on conditional values
    heads: FrozenSet[int] = frozenset()  # first instruction of every VBlock

    def local_bits(self, nlocals: int) -> List[bool]:
        return [i in self.locals for i in range(nlocals)]


@dataclass
class VBlock:
    id: int
    head: int  # basic block id
    members: List[int]
    succs: List[Tuple[int, str]] = field(default_factory=list)
    entry: bool = False
    exit: bool = False
    handler: bool = False

    def first_instruction(self, cfg: CFG) -> int:
        return cfg.blocks[self.head].start


def effective_kind(cfg: CFG, lift: Optional[LiftInfo], src: int, kind: str) -> str:
    """Edge kind once lift bits are known: branches on plain values do not split."""
    if kind == COND and lift is not None:
        last = cfg.blocks[src].end - 1
        if last not in lift.cond_branches:
            return UNCOND
    return kind


# -- partitioning -----------------------------------------------------------


def partition_vblocks(cfg: CFG, lift: Optional[LiftInfo] = None) -> List[VBlock]:
    """Merge basic blocks into VBlocks; ids follow the head's source position.

    Without lift bits every IFTRUE counts as conditional.
    """
    meth = cfg.method
    nb = len(cfg.blocks)
    handler_heads = {cfg.block_of[t] for _, _, t in meth.handler_ranges() if cfg.block_of[t] >= 0}
    never_merged = {0} | handler_heads
    edges = [(s, d, effective_kind(cfg, lift, s, k)) for s, d, k in cfg.edges]
    preds: Dict[int, Set[int]] = {b: set() for b in range(nb)}
    for s, d, _ in edges:
        preds[d].add(s)
    succs: Dict[int, Set[int]] = {b: set() for b in range(nb)}
    for s, d, _ in edges:
        succs[s].add(d)
    exits = set(cfg.exits())
    owner = list(range(nb))  # basic block -> head of its VBlock
    members: Dict[int, Set[int]] = {b: {b} for b in range(nb)}

    changed = True
    while changed:
        changed = False
        for s, d, kind in sorted(edges, key=lambda e: (cfg.blocks[e[1]].start, cfg.blocks[e[0]].start)):
            if kind != UNCOND or d in never_merged:
                continue
            x, y = owner[s], owner[d]
            if x == y or y != d:
                continue
            group = _pull_preds(members[y], members[x], preds, owner, members, never_merged)
            if group is None:
                continue
            union = members[x] | group
            # the return VBlock must never sit on a cycle
            if (exits & union) and x in _reachable(union, succs):
                continue
            if any((a in union and b in union and k != UNCOND) or (a in union and b == x)
                   for a, b, k in edges):
                continue
            for h in {owner[b] for b in group}:
                del members[h]
            for b in group:
                owner[b] = x
            members[x] = union
            changed = True

    heads = sorted(members, key=lambda h: cfg.blocks[h].start)
    vid = {h: i for i, h in enumerate(heads)}
    out: List[VBlock] = []
    for h in heads:
        mem = sorted(members[h], key=lambda b: cfg.blocks[b].start)
        succ: List[Tuple[int, str]] = []
        for s, d, kind in edges:
            if owner[s] == h and owner[d] != h or (owner[s] == h and d == h):
                item = (vid[owner[d]], kind)
                if item not in succ:
                    succ.append(item)
        out.append(VBlock(vid[h], h, mem, succ, entry=(h == 0), exit=bool(exits & set(mem)),
                          handler=(h in handler_heads)))
    return out


def _pull_preds(start: Set[int], base: Set[int], preds: Dict[int, Set[int]], owner: List[int],
                members: Dict[int, Set[int]], never_merged: Set[int]) -> Optional[Set[int]]:
    """`start` plus whole VBlocks feeding it from outside `base`, or None.

    A loop whose back edge is unconditional can only join its predecessor as a
    whole, so missing predecessors are pulled in transitively.
    """
    group = set(start)
    work = list(start)
    while work:
        b = work.pop()
        for p in preds[b]:
            if p in group or p in base:
                continue
            h = owner[p]
            if h in never_merged:
                return None
            group |= members[h]
            work.extend(members[h])
    return group


def _reachable(start: Set[int], succs: Dict[int, Set[int]]) -> Set[int]:
    seen: Set[int] = set()
    work = [d for s in start for d in succs[s]]
    while work:
        b = work.pop()
        if b not in seen:
            seen.add(b)
            work.extend(succs[b])
    return seen


def vblock_graph(vblocks: Sequence[VBlock]) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(v.id for v in vblocks)
    for v in vblocks:
        for t, kind in v.succs:
            if g.has_edge(v.id, t) and g[v.id][t]["kind"] != kind:
                g[v.id][t]["kind"] = COND
            else:
                g.add_edge(v.id, t, kind=kind)
    return g


def full_context_vblocks(vblocks: Sequence[VBlock]) -> Set[int]:
    """VBlocks that run exactly once, under the whole method context."""
    g = vblock_graph(vblocks)
    exits = [v.id for v in vblocks if v.exit]
    entry = next(v.id for v in vblocks if v.entry)
    if not exits:
        return set()
    cyclic = set()
    for comp in nx.strongly_connected_components(g):
        if len(comp) > 1 or any(g.has_edge(n, n) for n in comp):
            cyclic |= comp
    idom = nx.immediate_dominators(g, entry)
    result = None
    for x in exits:
        doms = {x}
        n = x
        while idom.get(n, n) != n:
            n = idom[n]
            doms.add(n)
        result = doms if result is None else result & doms
    return (result or set()) - cyclic


# -- lift analysis ----------------------------------------------------------


def _stack_dataflow(meth: MethodDef, cfg: CFG, local_lift: Set[int], heads: Set[int]):
    depth = validate_stack_discipline(meth)
    n = len(meth.code)
    state: List[Optional[Tuple[bool, ...]]] = [None] * n
    work: List[int] = []
    for h in heads:
        if depth[h] is not None:
            state[h] = (True,) * depth[h]
            work.append(h)
    cond: Set[int] = set()
    stored_lifted: Set[int] = set()
    while work:
        i = work.pop()
        st = list(state[i])  # type: ignore[arg-type]
        ins = meth.code[i]
        op = ins.op
        if op == "CONST" or op == "NEW":
            st.append(False)
        elif op == "LOAD":
            st.append(ins.args[0] in local_lift)
        elif op == "STORE":
            if st.pop():
                stored_lifted.add(ins.args[0])
        elif op == "DUP":
            st.append(st[-1])
        elif op == "SWAP":
            st[-1], st[-2] = st[-2], st[-1]
        elif op == "IFTRUE":
            if st.pop():
                cond.add(i)
        elif op in _TAINT_OPS:
            k = ins.pops()
            t = any(st[len(st) - k:])
            del st[len(st) - k:]
            st.append(t)
        else:
            k = ins.pops()
            if k:
                del st[len(st) - k:]
            if ins.pushes():
                st.append(op in _SOURCES)
        new = tuple(st)
        if op in ("GOTO", "IFTRUE"):
            succ = [meth.labels[ins.target]] + ([i + 1] if op == "IFTRUE" else [])
        elif op in ("RETURN", "RETURNVAL", "THROW"):
            succ = []
        else:
            succ = [i + 1]
        for j in succ:
            if j in heads:
                continue
            old = state[j]
            merged = new if old is None else tuple(a or b for a, b in zip(old, new))
            if merged != old:
                state[j] = merged
                work.append(j)
    return state, cond, stored_lifted


def compute_lift_bits(meth: MethodDef, cfg: Optional[CFG] = None) -> LiftInfo:
    """Fixpoint of lift marking and VBlock partitioning."""
    cfg = cfg or build_cfg(meth)
    local_lift: Set[int] = set(range(meth.nparams))
    heads: Set[int] = {0} | {t for _, _, t in meth.handler_ranges()}
    while True:
        state, cond, stored_lifted = _stack_dataflow(meth, cfg, local_lift, heads)
        info = LiftInfo(frozenset(local_lift), state, [], frozenset(cond), frozenset(heads))
        vblocks = partition_vblocks(cfg, info)
        new_heads = heads | {cfg.blocks[v.head].start for v in vblocks}
        full = full_context_vblocks(vblocks)
        new_locals = set(local_lift) | stored_lifted
        for v in vblocks:
            if v.id in full:
                continue
            for b in v.members:
                for i in cfg.blocks[b].indices():
                    if meth.code[i].op == "STORE":
                        new_locals.add(meth.code[i].args[0])
        if new_locals == local_lift and new_heads == heads:
            break
        local_lift, heads = new_locals, new_heads
    lifted = []
    for i, ins in enumerate(meth.code):
        st = state[i]
        if st is None:
            lifted.append(False)
        elif ins.op in _ALWAYS_LIFTED:
            lifted.append(True)
        elif ins.op == "STORE":
            lifted.append(ins.args[0] in local_lift)
        elif ins.op in _TAINT_OPS:
            lifted.append(any(st[len(st) - ins.pops():]))
        else:
            lifted.append(False)
    return LiftInfo(frozenset(local_lift), state, lifted, frozenset(cond), frozenset(heads))


# -- ordering ---------------------------------------------------------------


def order_vblocks(vblocks: Sequence[VBlock], cfg: CFG) -> List[VBlock]:
    """Renumber VBlocks into execution order.

    Strict transitive predecessors come first, ties go to the earlier head
    instruction, the entry is first and the return VBlock last.
    """
    exits = [v for v in vblocks if v.exit]
    if len(exits) > 1:
        raise ValueError(f"{cfg.method.qualname}: {len(exits)} return VBlocks; merge returns first")
    g = vblock_graph(vblocks)
    reach = {v.id: nx.descendants(g, v.id) for v in vblocks}
    strict_preds = {
        v.id: {u.id for u in vblocks if v.id in reach[u.id] and u.id not in reach[v.id]}
        for v in vblocks
    }
    start = {v.id: v.first_instruction(cfg) for v in vblocks}
    entry = next(v.id for v in vblocks if v.entry)
    last = exits[0].id if exits else None
    placed: List[int] = [entry]
    done = {entry}
    rest = [v.id for v in vblocks if v.id not in (entry, last)]
    while rest:
        ready = [x for x in rest if strict_preds[x] <= done | ({last} if last is not None else set())]
        if not ready:
            raise AssertionError("ordering relation is not acyclic")
        pick = min(ready, key=lambda x: start[x])
        placed.append(pick)
        done.add(pick)
        rest.remove(pick)
    if last is not None and last != entry:
        placed.append(last)
    new_id = {old: i for i, old in enumerate(placed)}
    by_id = {v.id: v for v in vblocks}
    out = []
    for old in placed:
        v = by_id[old]
        out.append(VBlock(new_id[old], v.head, list(v.members), [(new_id[t], k) for t, k in v.succs],
                          v.entry, v.exit, v.handler))
    return out


def analyze_method(meth: MethodDef) -> Tuple[CFG, LiftInfo, List[VBlock]]:
    cfg = build_cfg(meth)
    lift = compute_lift_bits(meth, cfg)
    vblocks = order_vblocks(partition_vblocks(cfg, lift), cfg)
    return cfg, lift, vblocks


# -- sharing guarantee ------------------------------------------------------


def loops(vblocks: Sequence[VBlock]) -> List[Set[int]]:
    g = vblock_graph(vblocks)
    return [c for c in nx.strongly_connected_components(g) if len(c) > 1 or any(g.has_edge(n, n) for n in c)]


def classify_sharing_guarantee(vblocks: Sequence[VBlock]) -> str:
    """GUARANTEED_OPTIMAL when the VBlock graph is acyclic or every loop is simple."""
    g = vblock_graph(vblocks)
    for comp in loops(vblocks):
        headers = {d for s, d in g.edges if d in comp and s not in comp}
        exiting = {s for s, d in g.edges if s in comp and d not in comp}
        if len(headers) > 1 or len(exiting) > 1:
            return NO_GUARANTEE
        for n in comp:
            cond_targets = [d for _, d, k in g.out_edges(n, data="kind") if k != UNCOND]
            if len(cond_targets) >= 2 and all(t in comp for t in cond_targets):
                return NO_GUARANTEE
    return GUARANTEED_OPTIMAL

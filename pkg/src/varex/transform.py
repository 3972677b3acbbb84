"""Bytecode-to-bytecode variational transformation.

Each method is first normalized (a single return block, an explicit
`CONST null` for void returns, the iterator access rewrite), analysed, and
then re-emitted VBlock by VBlock in execution order:

    guard_i:  CUR := phi_i & G;  skip to guard_{i+1} unless SAT(CUR)
    body_i:   record (i, CUR); reload spilled stack slots
              ... translated instructions ...
    exit:     spill stack; phi_i := False; propagate CUR to successors;
              jump back to the lowest updated predecessor or fall through

The resulting program runs on the plain interpreter with the runtime's
`vx.*` intrinsics installed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

from .analysis import (LiftInfo, VBlock, analyze_method, classify_sharing_guarantee)
from .vir import (CFG, AsmError, ClassDef, Handler, Instruction, MethodDef, Program,
                  validate_stack_discipline)

ENTRY_CLASS = "__varex__"
ENTRY_METHOD = "entry"
ENTRY_QUALNAME = f"{ENTRY_CLASS}.{ENTRY_METHOD}"


class TransformError(Exception):
    pass


# -- normalization ------------------------------------------------------------


class _Rewriter:
    """Rebuilds a method's code while keeping labels and handler ranges attached."""

    def __init__(self, meth: MethodDef) -> None:
        self.meth = meth
        self.code: List[Instruction] = []
        self.new_index: Dict[int, int] = {}
        self.extra_labels: Dict[str, int] = {}
        self.plumbing: Set[int] = set()

    def mark(self, old: int) -> None:
        self.new_index[old] = len(self.code)

    def emit(self, ins: Instruction, plumbing: bool = False) -> None:
        if plumbing:
            self.plumbing.add(len(self.code))
        self.code.append(ins)

    def label(self, name: str) -> None:
        self.extra_labels[name] = len(self.code)

    def finish(self, nlocals: Optional[int] = None) -> MethodDef:
        m = self.meth
        end = len(self.code)
        labels = {name: self.new_index.get(idx, end) for name, idx in m.labels.items()}
        labels.update(self.extra_labels)
        plumbing = {self.new_index[i] for i in m.plumbing if i in self.new_index} | self.plumbing
        return MethodDef(m.name, m.nparams, m.nlocals if nlocals is None else nlocals, self.code, labels,
                         [Handler(h.start, h.end, h.target) for h in m.handlers], m.owner, frozenset(plumbing))


def _fresh(meth: MethodDef, base: str) -> str:
    name, k = base, 0
    while name in meth.labels:
        k += 1
        name = f"{base}{k}"
    return name


def _void_returns(meth: MethodDef) -> MethodDef:
    if not any(ins.op == "RETURN" for ins in meth.code):
        return meth
    rw = _Rewriter(meth)
    for i, ins in enumerate(meth.code):
        rw.mark(i)
        if ins.op == "RETURN":
            rw.emit(Instruction("CONST", (None,), ins.line))
            rw.emit(Instruction("RETURNVAL", (), ins.line))
        else:
            rw.emit(ins)
    return rw.finish()


def _iterator_rewrite(meth: MethodDef) -> MethodDef:
    """Loops `L: LOAD k; Iterator.hasNext; IFTRUE ..` visit every optional entry once.

    `next` becomes `nextAny` followed by a presence test that skips absent
    entries through a shared latch placed at the end of the method.
    """
    code = meth.code
    label_at = meth.labels_at()
    headers: Dict[int, int] = {}  # header index -> iterator local
    for i in range(len(code) - 2):
        if (i in label_at and code[i].op == "LOAD"
                and code[i + 1].op == "INTRINSIC" and code[i + 1].args == ("Iterator.hasNext", 1)
                and code[i + 2].op == "IFTRUE"):
            headers[i] = code[i].args[0]
    if not headers:
        return meth
    nexts: Dict[int, int] = {}  # index of LOAD k before next -> header
    for j in range(len(code) - 1):
        if code[j].op == "LOAD" and code[j + 1].op == "INTRINSIC" and code[j + 1].args == ("Iterator.next", 1):
            owners = [h for h, k in headers.items() if k == code[j].args[0] and h < j]
            if owners:
                nexts[j] = max(owners)
    latch = {h: _fresh(meth, f"__latch{h}_") for h in headers}
    header_labels = {h: label_at[h] for h in headers}
    rw = _Rewriter(meth)
    skip_next = False
    cont = 0
    for i, ins in enumerate(code):
        rw.mark(i)
        if skip_next:
            skip_next = False
            continue
        if i in headers:
            rw.emit(ins, plumbing=True)
            continue
        if i - 1 in headers:
            rw.emit(Instruction("INTRINSIC", ("Iterator.hasNextAny", 1), ins.line), plumbing=True)
            continue
        if i - 2 in headers:
            rw.emit(ins, plumbing=True)
            continue
        if i in nexts:
            h = nexts[i]
            k = ins.args[0]
            cont_label = _fresh(meth, f"__present{cont}_")
            cont += 1
            for x in (Instruction("LOAD", (k,), ins.line),
                      Instruction("INTRINSIC", ("Iterator.nextAny", 1), ins.line),
                      Instruction("LOAD", (k,), ins.line),
                      Instruction("INTRINSIC", ("Iterator.present", 1), ins.line),
                      Instruction("IFTRUE", (cont_label,), ins.line),
                      Instruction("POP", (), ins.line),
                      Instruction("GOTO", (latch[h],), ins.line)):
                rw.emit(x, plumbing=True)
            rw.label(cont_label)
            skip_next = True
            continue
        if ins.op in ("GOTO", "IFTRUE"):
            tgt = meth.labels[ins.target]
            if tgt in headers and i > tgt:
                rw.emit(Instruction(ins.op, (latch[tgt],), ins.line, ins.tag))
                continue
        rw.emit(ins)
    for h in headers:
        rw.label(latch[h])
        rw.emit(Instruction("GOTO", (header_labels[h][0],), 0), plumbing=True)
    out = rw.finish()
    try:
        validate_stack_discipline(out)
    except AsmError:
        return meth
    return out


def _merge_returns(meth: MethodDef) -> MethodDef:
    rets = [i for i, ins in enumerate(meth.code) if ins.op == "RETURNVAL"]
    if len(rets) <= 1:
        return meth
    depth = validate_stack_discipline(meth)
    slot = meth.nlocals
    ret_label = _fresh(meth, "__ret")
    rw = _Rewriter(meth)
    for i, ins in enumerate(meth.code):
        rw.mark(i)
        if ins.op == "RETURNVAL" and depth[i] is not None:
            rw.emit(Instruction("STORE", (slot,), ins.line))
            for _ in range((depth[i] or 1) - 1):
                rw.emit(Instruction("POP", (), ins.line))
            rw.emit(Instruction("GOTO", (ret_label,), ins.line))
        else:
            rw.emit(ins)
    rw.label(ret_label)
    rw.emit(Instruction("LOAD", (slot,), 0))
    rw.emit(Instruction("RETURNVAL", (), 0))
    return rw.finish(nlocals=meth.nlocals + 1)


def normalize_method(meth: MethodDef) -> MethodDef:
    """Semantics-preserving rewrites that prepare a method for transformation."""
    return _merge_returns(_iterator_rewrite(_void_returns(meth)))


def normalize_program(prog: Program) -> Program:
    classes = {}
    for cname, cls in prog.classes.items():
        classes[cname] = ClassDef(cls.name, list(cls.fields),
                                  {n: normalize_method(m) for n, m in cls.methods.items()})
    return Program(list(prog.options), list(prog.constraints), classes, prog.entry)


# -- emission -------------------------------------------------------------------


@dataclass
class Slots:
    mctx: int
    cur: int
    x: int
    tmp: int
    phi: List[int]
    spill: List[int]
    nlocals: int

    def local(self, i: int, nparams: int) -> int:
        return i if i < nparams else i + 1


@dataclass
class MethodPlan:
    """Everything known about one transformed method."""

    original: MethodDef
    normalized: MethodDef
    cfg: CFG
    lift: LiftInfo
    vblocks: List[VBlock]
    verdict: str
    excluded: FrozenSet[int]  # VBlocks left out of block-sequence comparison
    transformed: MethodDef
    slots: Slots
    head_of: Dict[int, int] = field(default_factory=dict)  # head instruction -> VBlock id


class _Emitter:
    def __init__(self) -> None:
        self.code: List[Instruction] = []
        self.labels: Dict[str, int] = {}
        self.tag: Optional[int] = None

    def __call__(self, op: str, *args: object) -> None:
        self.code.append(Instruction(op, tuple(args), 0, self.tag))

    def label(self, name: str) -> None:
        if name in self.labels:
            raise TransformError(f"duplicate emitted label {name}")
        self.labels[name] = len(self.code)


def _guard(i: int) -> str:
    return f"g{i}"


def _body(i: int) -> str:
    return f"v{i}"


def _ilabel(i: int) -> str:
    return f"i{i}"


def transform_method(meth: MethodDef, cfg: CFG, lift: LiftInfo, vblocks: Sequence[VBlock]) -> Tuple[MethodDef, Slots]:
    """Emit the variational version of an already normalized method."""
    n, k = meth.nparams, meth.nlocals
    depth = validate_stack_discipline(meth)
    nv = len(vblocks)
    head_depth = [depth[cfg.blocks[v.head].start] or 0 for v in vblocks]
    dmax = max(head_depth) if head_depth else 0
    base = k + 1
    slots = Slots(mctx=n, cur=base, x=base + 1, tmp=base + 2,
                  phi=[base + 3 + i for i in range(nv)],
                  spill=[base + 3 + nv + t for t in range(dmax)], nlocals=base + 3 + nv + dmax)
    vb_of_block: Dict[int, int] = {}
    for v in vblocks:
        for b in v.members:
            vb_of_block[b] = v.id
    head_vb = {cfg.blocks[v.head].start: v.id for v in vblocks}

    def loc(i: int) -> int:
        return slots.local(i, n)

    e = _Emitter()
    stubs: List[Tuple[str, int, int]] = []  # (label, source vblock, target instruction)

    # prologue
    for i in range(n):
        e("LOAD", i)
        e("INTRINSIC", "vx.lift", 1)
        e("STORE", i)
    for i in sorted(lift.locals):
        if i >= n:
            e("CONST", None)
            e("INTRINSIC", "vx.lift", 1)
            e("STORE", loc(i))
    for s in slots.spill:
        e("CONST", None)
        e("INTRINSIC", "vx.lift", 1)
        e("STORE", s)
    e("CONST", meth.qualname)
    e("LOAD", slots.mctx)
    e("INTRINSIC", "vx.method_enter", 2)
    e("POP")
    for v in vblocks:
        if v.id == 0:
            e("LOAD", slots.mctx)
        else:
            e("INTRINSIC", "vx.false", 0)
        e("STORE", slots.phi[v.id])

    def vb_target(instr: int) -> int:
        b = cfg.block_of[instr]
        tgt = vb_of_block[b]
        if cfg.blocks[b].start != instr or head_vb.get(instr) != tgt:
            raise TransformError(f"{meth.qualname}: edge into the middle of VBlock {tgt}")
        return tgt

    def spill(d: int) -> None:
        for t in range(d - 1, -1, -1):
            e("LOAD", slots.spill[t])
            e("LOAD", slots.cur)
            e("INTRINSIC", "vx.store", 3)
            e("STORE", slots.spill[t])

    def finish_exit(cur: int, targets: Sequence[int]) -> None:
        for p in slots.phi:
            e("LOAD", p)
        e("INTRINSIC", "vx.disjoint", len(slots.phi))
        e("POP")
        lo = min(targets)
        e("GOTO", _guard(lo) if lo <= cur else _guard(cur + 1))

    def exit_uncond(cur: int, target_instr: int) -> None:
        j = vb_target(target_instr)
        e.tag = None
        spill(head_depth[j])
        e("INTRINSIC", "vx.false", 0)
        e("STORE", slots.phi[cur])
        e("LOAD", slots.phi[j])
        e("LOAD", slots.cur)
        e("INTRINSIC", "vx.or", 2)
        e("STORE", slots.phi[j])
        finish_exit(cur, [j])

    def exit_cond(cur: int, then_instr: int, else_instr: int) -> None:
        t, f = vb_target(then_instr), vb_target(else_instr)
        e.tag = None
        e("LOAD", slots.cur)
        e("INTRINSIC", "vx.when_true", 2)
        e("STORE", slots.x)
        spill(head_depth[t])
        e("INTRINSIC", "vx.false", 0)
        e("STORE", slots.phi[cur])
        e("LOAD", slots.phi[t])
        e("LOAD", slots.x)
        e("INTRINSIC", "vx.or", 2)
        e("STORE", slots.phi[t])
        e("LOAD", slots.phi[f])
        e("LOAD", slots.cur)
        e("LOAD", slots.x)
        e("INTRINSIC", "vx.andnot", 2)
        e("INTRINSIC", "vx.or", 2)
        e("STORE", slots.phi[f])
        finish_exit(cur, [t, f])

    def translate(i: int, ins: Instruction) -> None:
        op, a = ins.op, ins.args
        lifted = lift.lifted[i]
        if op == "LOAD":
            e("LOAD", loc(a[0]))
        elif op == "STORE":
            if lifted:
                e("LOAD", loc(a[0]))
                e("LOAD", slots.cur)
                e("INTRINSIC", "vx.store", 3)
            e("STORE", loc(a[0]))
        elif op in ("ADD", "SUB", "MUL", "DIV", "REM", "CMPEQ", "CMPLT", "CMPGT", "CONCAT"):
            if lifted:
                e("LOAD", slots.cur)
                e("INTRINSIC", f"vx.{op}", 3)
            else:
                e(op)
        elif op == "NEG":
            if lifted:
                e("LOAD", slots.cur)
                e("INTRINSIC", "vx.NEG", 2)
            else:
                e(op)
        elif op == "INVOKE":
            e("LOAD", slots.cur)
            e("INVOKE", a[0], a[1] + 1)
            # a callee may have narrowed the global restriction
            e("LOAD", slots.cur)
            e("INTRINSIC", "vx.guard", 1)
            e("STORE", slots.cur)
        elif op == "INTRINSIC":
            e("CONST", a[0])
            e("LOAD", slots.cur)
            e("INTRINSIC", "vx.call", a[1] + 2)
        elif op == "GETOPTION":
            e("CONST", a[0])
            e("LOAD", slots.cur)
            e("INTRINSIC", "vx.option", 2)
        elif op == "GETFIELD":
            e("CONST", a[0])
            e("LOAD", slots.cur)
            e("INTRINSIC", "vx.getfield", 3)
        elif op == "PUTFIELD":
            e("CONST", a[0])
            e("LOAD", slots.cur)
            e("INTRINSIC", "vx.putfield", 4)
            e("POP")
        elif op == "ARRLOAD":
            e("LOAD", slots.cur)
            e("INTRINSIC", "vx.arrload", 3)
        elif op == "ARRSTORE":
            e("LOAD", slots.cur)
            e("INTRINSIC", "vx.arrstore", 4)
            e("POP")
        elif op in ("NEWARRAY", "ARRLEN"):
            if lifted:
                e("LOAD", slots.cur)
                e("INTRINSIC", f"vx.{op.lower()}", 2)
            else:
                e(op)
        elif op == "THROW":
            e("LOAD", slots.cur)
            e("INTRINSIC", "vx.throw", 2)
            e("THROW")
        elif op == "RETURNVAL":
            e("LOAD", slots.cur)
            e("LOAD", slots.mctx)
            e("INTRINSIC", "vx.ret", 3)
            e("RETURNVAL")
        elif op in ("CONST", "NEW"):
            e(op, *a)
        elif op in ("POP", "DUP", "SWAP"):
            e(op)
        else:
            raise TransformError(f"{meth.qualname}: unexpected {op} at {i}")

    for v in vblocks:
        e.tag = None
        e.label(_guard(v.id))
        e("LOAD", slots.phi[v.id])
        e("INTRINSIC", "vx.guard", 1)
        e("DUP")
        e("STORE", slots.cur)
        e("INTRINSIC", "vx.sat", 1)
        e("IFTRUE", _body(v.id))
        e("GOTO", _guard(v.id + 1))
        e.label(_body(v.id))
        e("LOAD", slots.cur)
        e("CONST", v.id)
        e("INTRINSIC", "vx.enter", 2)
        e("POP")
        for t in range(head_depth[v.id]):
            e("LOAD", slots.spill[t])
        members = [cfg.blocks[b] for b in v.members]
        for mi, bb in enumerate(members):
            e.tag = None
            e.label(_ilabel(bb.start))
            for i in range(bb.start, bb.end - 1):
                e.tag = i
                translate(i, meth.code[i])
            last = bb.end - 1
            ins = meth.code[last]
            e.tag = last
            nxt_start = members[mi + 1].start if mi + 1 < len(members) else None

            def goto_or_exit(instr: int) -> None:
                if vb_of_block[cfg.block_of[instr]] == v.id:
                    if instr != nxt_start:
                        e.tag = None
                        e("GOTO", _ilabel(instr))
                else:
                    exit_uncond(v.id, instr)

            if ins.op == "GOTO":
                goto_or_exit(meth.labels[ins.target])
            elif ins.op == "IFTRUE":
                tgt = meth.labels[ins.target]
                if last in lift.cond_branches:
                    exit_cond(v.id, tgt, last + 1)
                else:
                    if vb_of_block[cfg.block_of[tgt]] == v.id:
                        e("IFTRUE", _ilabel(tgt))
                    else:
                        stub = f"x{len(stubs)}"
                        stubs.append((stub, v.id, tgt))
                        e("IFTRUE", stub)
                    goto_or_exit(last + 1)
            elif ins.op in ("RETURNVAL", "THROW"):
                translate(last, ins)
            else:
                translate(last, ins)
                goto_or_exit(bb.end)
        while stubs:
            label, src, tgt = stubs.pop(0)
            e.tag = None
            e.label(label)
            exit_uncond(src, tgt)

    e.tag = None
    e.label(_guard(nv))
    e("CONST", f"{meth.qualname}: no satisfiable context reached the return block")
    e("INTRINSIC", "vx.internal_error", 1)
    e("THROW")

    # exception handlers: one stub per source handler, ranges follow emitted code
    handlers: List[Handler] = []
    for hi, (s, end, t) in enumerate(meth.handler_ranges()):
        j = vb_target(t)
        stub = f"h{hi}"
        runs = _runs([i for i, ins in enumerate(e.code) if isinstance(ins.tag, int) and s <= ins.tag < end])
        for ri, (a, b) in enumerate(runs):
            sa, sb = f"h{hi}s{ri}", f"h{hi}e{ri}"
            e.labels[sa] = a
            e.labels[sb] = b
            handlers.append(Handler(sa, sb, stub))
        e.label(stub)
        e("STORE", slots.tmp)
        e("LOAD", slots.cur)
        e("INTRINSIC", "vx.narrow", 1)
        e("STORE", slots.cur)
        e("LOAD", slots.tmp)
        e("LOAD", slots.spill[0])
        e("LOAD", slots.cur)
        e("INTRINSIC", "vx.store", 3)
        e("STORE", slots.spill[0])
        for p in slots.phi:
            e("INTRINSIC", "vx.false", 0)
            e("STORE", p)
        e("LOAD", slots.cur)
        e("STORE", slots.phi[j])
        e("GOTO", _guard(j))
    body_end = len(e.code)
    e.labels["__all_start"] = 0
    e.label("__all_end")
    e("LOAD", slots.cur)
    e("INTRINSIC", "vx.narrow", 1)
    e("POP")
    e("INTRINSIC", "vx.method_abandon", 0)
    e("POP")
    e("THROW")
    assert e.labels["__all_end"] == body_end
    handlers.append(Handler("__all_start", "__all_end", "__all_end"))
    out = MethodDef(meth.name, n + 1, slots.nlocals, e.code, e.labels, handlers, meth.owner)
    return out, slots


def _runs(indices: List[int]) -> List[Tuple[int, int]]:
    runs: List[Tuple[int, int]] = []
    for i in indices:
        if runs and runs[-1][1] == i:
            runs[-1] = (runs[-1][0], i + 1)
        else:
            runs.append((i, i + 1))
    return runs


# -- whole programs -------------------------------------------------------------


@dataclass
class TransformedProgram:
    program: Program
    source: Program
    normalized: Program
    plans: Dict[str, MethodPlan]

    def plan(self, qualname: str) -> MethodPlan:
        return self.plans[qualname]


def plan_method(original: MethodDef) -> MethodPlan:
    norm = normalize_method(original)
    cfg, lift, vblocks = analyze_method(norm)
    ways_out = {"RETURN", "RETURNVAL", "THROW"}
    if not any(norm.code[i].op in ways_out for b in cfg.blocks for i in b.indices()):
        raise TransformError(f"{original.qualname}: no reachable return or throw")
    excluded = frozenset(
        v.id for v in vblocks
        if any(i in norm.plumbing for b in v.members for i in cfg.blocks[b].indices()))
    transformed, slots = transform_method(norm, cfg, lift, vblocks)
    return MethodPlan(original, norm, cfg, lift, vblocks, classify_sharing_guarantee(vblocks), excluded,
                      transformed, slots, {cfg.blocks[v.head].start: v.id for v in vblocks})


def transform_program(prog: Program) -> TransformedProgram:
    """Transform every method and add an entry wrapper that supplies the root context."""
    if ENTRY_CLASS in prog.classes:
        raise TransformError(f"class name {ENTRY_CLASS} is reserved")
    plans: Dict[str, MethodPlan] = {}
    errors: List[str] = []
    classes: Dict[str, ClassDef] = {}
    norm_classes: Dict[str, ClassDef] = {}
    for cname, cls in prog.classes.items():
        methods = {}
        norm_methods = {}
        for mname, m in cls.methods.items():
            try:
                plan = plan_method(m)
            except (TransformError, AsmError, ValueError) as exc:
                errors.append(f"{m.qualname}: {exc}")
                continue
            plans[m.qualname] = plan
            methods[mname] = plan.transformed
            norm_methods[mname] = plan.normalized
        classes[cname] = ClassDef(cls.name, list(cls.fields), methods)
        norm_classes[cname] = ClassDef(cls.name, list(cls.fields), norm_methods)
    if errors:
        raise TransformError("; ".join(errors))
    wrapper = MethodDef(ENTRY_METHOD, 0, 0, [
        Instruction("INTRINSIC", ("vx.mctx", 0)),
        Instruction("INVOKE", (prog.entry, 1)),
        Instruction("RETURNVAL"),
    ], {}, [], ENTRY_CLASS)
    classes[ENTRY_CLASS] = ClassDef(ENTRY_CLASS, [], {ENTRY_METHOD: wrapper})
    out = Program(list(prog.options), list(prog.constraints), classes, ENTRY_QUALNAME)
    normalized = Program(list(prog.options), list(prog.constraints), norm_classes, prog.entry)
    return TransformedProgram(out, prog, normalized, plans)

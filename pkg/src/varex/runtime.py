"""Runtime support for transformed programs.

Transformed code calls into this module through `vx.*` intrinsics: context
bookkeeping (guards, propagation, trace recording), lifted arithmetic,
object and array access on conditional values, model classes for lists,
iterators and sets, and the barrier policy for opaque intrinsics.

Exceptions are handled with a run-wide restriction `G`: whenever part of the
configuration space raises, `G` shrinks to that part and the run continues
only for it.  The engine restarts for whatever `G` excluded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from . import condval as cv
from . import formula as fm
from .condval import CondValue, LeafFailure, One, lift
from .formula import FALSE, TRUE, Formula, is_satisfiable
from .vm import (BASE_INTRINSICS, Arr, Obj, VMAbort, VMThrow, array_load, array_store,
                 binary_op, fmt, neg_op, new_array, value_key)

SIDE_EFFECT_FREE = "SIDE_EFFECT_FREE"
MODELED = "MODELED"
ABORT = "ABORT"
KINDS = (SIDE_EFFECT_FREE, MODELED, ABORT)


class EngineAssertion(Exception):
    """An internal invariant of the variational engine was violated."""


class BarrierViolation(VMAbort):
    pass


# -- model classes ------------------------------------------------------------


class VListModel:
    """List of optional entries: (value, presence)."""

    __slots__ = ("entries",)

    def __init__(self) -> None:
        self.entries: List[Tuple[Any, Formula]] = []

    def __repr__(self) -> str:
        return f"<VList@{id(self) & 0xFFFF:04x}>"


class VIterModel:
    __slots__ = ("lst", "pos")

    def __init__(self, lst: VListModel, ctx: Formula) -> None:
        self.lst = lst
        self.pos: CondValue = One(0)

    def __repr__(self) -> str:
        return f"<Iterator@{id(self) & 0xFFFF:04x}>"


class VSetModel:
    """Mapping from element to the region where it is present."""

    __slots__ = ("items",)

    def __init__(self) -> None:
        self.items: Dict[tuple, List[Any]] = {}

    def __repr__(self) -> str:
        return f"<Set@{id(self) & 0xFFFF:04x}>"


def vlist_add(lst: VListModel, ctx: Formula, v: CondValue) -> VListModel:
    for c, x in v.leaves():
        region = c & ctx
        if is_satisfiable(region):
            lst.entries.append((x, region))
    return lst


def vlist_iter(lst: VListModel, ctx: Formula) -> List[Tuple[Any, Formula]]:
    out = []
    for x, pres in lst.entries:
        region = pres & ctx
        if is_satisfiable(region):
            out.append((x, region))
    return out


def vlist_get(lst: VListModel, ctx: Formula, idx: CondValue) -> CondValue:
    """Element at a (possibly conditional) index, counting only present entries."""
    leaves: List[Tuple[Formula, Any]] = []
    for c, i in idx.leaves():
        region = c & ctx
        if not is_satisfiable(region):
            continue
        if not isinstance(i, int) or isinstance(i, bool) or i < 0:
            raise LeafFailure(region, VMThrow(f"IndexOutOfBoundsException: {fmt(i)}"))
        # counts[k]: part of the region with exactly k present entries so far
        counts = [region] + [FALSE] * i
        for x, pres in lst.entries:
            hit = counts[i] & pres
            if is_satisfiable(hit):
                leaves.append((hit, x))
            for k in range(i, -1, -1):
                stay = counts[k] & ~pres
                moved = counts[k - 1] & pres if k > 0 else FALSE
                counts[k] = stay | moved
        missing = FALSE
        for part in counts:
            missing = missing | part
        if is_satisfiable(missing):
            raise LeafFailure(missing, VMThrow(f"IndexOutOfBoundsException: {i}"))
    return cv.from_leaves(leaves, ctx)


def vlist_size(lst: VListModel, ctx: Formula) -> CondValue:
    counts = [ctx]
    for _, pres in lst.entries:
        nxt = [c & ~pres for c in counts] + [FALSE]
        for k, c in enumerate(counts):
            nxt[k + 1] = nxt[k + 1] | (c & pres)
        counts = nxt
    return cv.from_leaves([(c, k) for k, c in enumerate(counts)], ctx)


def vset_add(s: VSetModel, ctx: Formula, v: CondValue) -> VSetModel:
    for c, x in v.leaves():
        region = c & ctx
        if not is_satisfiable(region):
            continue
        slot = s.items.get(value_key(x))
        if slot is None:
            s.items[value_key(x)] = [x, region]
        else:
            slot[1] = slot[1] | region
    return s


def vset_contains(s: VSetModel, ctx: Formula, v: CondValue) -> CondValue:
    leaves: List[Tuple[Formula, Any]] = []
    for c, x in v.leaves():
        region = c & ctx
        if not is_satisfiable(region):
            continue
        slot = s.items.get(value_key(x))
        pres = slot[1] if slot else FALSE
        leaves.append((region & pres, True))
        leaves.append((region & ~pres, False))
    return cv.from_leaves(leaves, ctx)


# -- barrier policy -------------------------------------------------------------


DEFAULT_POLICY: Dict[str, str] = {
    "replace": SIDE_EFFECT_FREE,
    "strlen": SIDE_EFFECT_FREE,
    "str": SIDE_EFFECT_FREE,
    "print": MODELED,
    "raw_print": ABORT,
    "VList.new": MODELED,
    "VList.add": MODELED,
    "VList.get": MODELED,
    "VList.size": MODELED,
    "VList.iterator": MODELED,
    "Iterator.hasNext": MODELED,
    "Iterator.next": MODELED,
    "Iterator.hasNextAny": MODELED,
    "Iterator.nextAny": MODELED,
    "Iterator.present": MODELED,
    "Set.new": MODELED,
    "Set.add": MODELED,
    "Set.contains": MODELED,
}


@dataclass
class BarrierPolicy:
    kinds: Dict[str, str] = field(default_factory=lambda: dict(DEFAULT_POLICY))

    def kind(self, name: str) -> str:
        try:
            return self.kinds[name]
        except KeyError:
            raise VMAbort(f"intrinsic {name} has no barrier classification") from None

    @classmethod
    def from_text(cls, text: str, base: Optional[Dict[str, str]] = None) -> "BarrierPolicy":
        kinds = dict(DEFAULT_POLICY if base is None else base)
        for ln, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3 or parts[0] != "intrinsic" or parts[2] not in KINDS:
                raise ValueError(f"policy line {ln}: expected 'intrinsic <name> <{'|'.join(KINDS)}>'")
            if parts[2] == MODELED and parts[1] not in _MODELS:
                raise ValueError(f"policy line {ln}: no model implementation for {parts[1]}")
            if parts[2] != MODELED and parts[1] not in BASE_INTRINSICS:
                raise ValueError(f"policy line {ln}: unknown intrinsic {parts[1]}")
            kinds[parts[1]] = parts[2]
        return cls(kinds)


# -- traces -------------------------------------------------------------------


@dataclass
class MethodTrace:
    method: str
    mctx: Formula
    entries: List[Tuple[int, Formula]] = field(default_factory=list)
    status: str = "running"  # running | returned | exception
    run: int = 0


# -- the runtime ----------------------------------------------------------------

_CATCH = (VMThrow,)


class Runtime:
    """State for one run of a transformed program."""

    def __init__(
        self,
        root: Formula = TRUE,
        policy: Optional[BarrierPolicy] = None,
        assertions: bool = True,
        run_id: int = 0,
        no_write_under: bool = False,
    ) -> None:
        self.root = root
        self.G = root
        self.policy = policy or BarrierPolicy()
        self.assertions = assertions
        self.run_id = run_id
        self.no_write_under = no_write_under
        self.output: List[Tuple[str, Formula]] = []
        self.stack: List[MethodTrace] = []
        self.method_traces: List[MethodTrace] = []
        self.trace: List[Tuple[str, int, Formula]] = []
        self.disjoint_checks = 0
        self.barrier_log: List[Tuple[str, str, Formula]] = []

    # -- helpers ----------------------------------------------------------

    def fail(self, ctx: Formula, message: str) -> None:
        """Raise a program exception confined to `ctx`."""
        region = self.G & ctx
        if not is_satisfiable(region):
            raise EngineAssertion(f"exception {message!r} raised under an unsatisfiable context")
        self.G = region
        raise VMThrow(message)

    def guarded(self, ctx: Formula, thunk: Callable[[], Any]) -> Any:
        try:
            return thunk()
        except LeafFailure as exc:
            msg = exc.cause.message if isinstance(exc.cause, VMThrow) else str(exc.cause)
            self.fail(exc.ctx, msg)

    def store(self, ctx: Formula, old: Any, new: Any) -> CondValue:
        if self.no_write_under:
            return lift(new)
        return cv.write_under(ctx, lift(old), lift(new))

    # -- intrinsic table ----------------------------------------------------

    def intrinsics(self) -> Dict[str, Tuple[int, Callable]]:
        table: Dict[str, Tuple[int, Callable]] = {}

        def reg(name: str, fn: Callable[..., Any]) -> None:
            table[name] = (-1, lambda vm, args: fn(*args))

        reg("vx.lift", lift)
        reg("vx.false", lambda: FALSE)
        reg("vx.mctx", lambda: self.root)
        reg("vx.guard", lambda phi: phi & self.G)
        reg("vx.narrow", self._narrow)
        reg("vx.sat", is_satisfiable)
        reg("vx.or", lambda a, b: a | b)
        reg("vx.andnot", lambda a, b: a & ~b)
        reg("vx.when_true", self._when_true)
        reg("vx.disjoint", self._disjoint)
        reg("vx.method_enter", self._method_enter)
        reg("vx.enter", self._enter)
        reg("vx.ret", self._ret)
        reg("vx.method_abandon", self._abandon)
        reg("vx.internal_error", self._internal_error)
        reg("vx.store", lambda v, old, ctx: self.store(ctx, old, v))
        for op in ("ADD", "SUB", "MUL", "DIV", "REM", "CMPEQ", "CMPLT", "CMPGT", "CONCAT"):
            reg(f"vx.{op}", self._binary(op))
        reg("vx.NEG", lambda a, ctx: self.guarded(ctx, lambda: cv.smap(ctx, lift(a), neg_op, _CATCH)))
        reg("vx.option", lambda name, ctx: cv.from_leaves(
            [(fm.mk_option(name), True), (~fm.mk_option(name), False)], ctx))
        reg("vx.throw", self._throw)
        reg("vx.getfield", self._getfield)
        reg("vx.putfield", self._putfield)
        reg("vx.newarray", lambda n, ctx: self.guarded(
            ctx, lambda: cv.smap(ctx, lift(n), new_array, _CATCH)))
        reg("vx.arrload", self._arrload)
        reg("vx.arrstore", self._arrstore)
        reg("vx.arrlen", self._arrlen)
        table["vx.call"] = (-1, lambda vm, args: self.call(args[-2], args[-1], args[:-2]))
        return table

    # -- context plumbing ---------------------------------------------------

    def _narrow(self, ctx: Formula) -> Formula:
        self.G = self.G & ctx
        return self.G

    def _when_true(self, v: Any, ctx: Formula) -> Formula:
        try:
            return cv.when_true(ctx, lift(v))
        except TypeError as exc:
            raise VMAbort(str(exc)) from None

    def _disjoint(self, *phis: Formula) -> None:
        if not self.assertions:
            return None
        self.disjoint_checks += 1
        seen = FALSE
        for i, phi in enumerate(phis):
            if is_satisfiable(seen & phi):
                raise EngineAssertion(f"contexts of two VBlocks overlap (at slot {i})")
            seen = seen | phi
        return None

    def _method_enter(self, name: str, mctx: Formula) -> None:
        self.stack.append(MethodTrace(name, mctx, run=self.run_id))
        return None

    def _enter(self, ctx: Formula, index: int) -> None:
        top = self.stack[-1]
        top.entries.append((index, ctx))
        self.trace.append((top.method, index, ctx))
        return None

    def _ret(self, value: Any, ctx: Formula, mctx: Formula) -> CondValue:
        top = self.stack.pop()
        if self.assertions and (ctx & self.G) != (mctx & self.G):
            raise EngineAssertion(
                f"{top.method}: return context {ctx.to_text()} differs from method context {mctx.to_text()}")
        top.status = "returned"
        self.method_traces.append(top)
        return lift(value)

    def _abandon(self) -> None:
        top = self.stack.pop()
        top.status = "exception"
        self.method_traces.append(top)
        return None

    def _internal_error(self, message: str) -> None:
        raise EngineAssertion(message)

    # -- lifted instructions --------------------------------------------------

    def _binary(self, op: str) -> Callable[[Any, Any, Formula], CondValue]:
        def f(a: Any, b: Any, ctx: Formula) -> CondValue:
            return self.guarded(ctx, lambda: cv.combine(ctx, lift(a), lift(b),
                                                        lambda x, y: binary_op(op, x, y), _CATCH))

        return f

    def _throw(self, msg: Any, ctx: Formula) -> None:
        # one message per run; other messages are reached by restarts
        for c, x in lift(msg).leaves():
            region = c & ctx & self.G
            if is_satisfiable(region):
                self.fail(region, fmt(x))
        raise EngineAssertion("THROW under an unsatisfiable context")

    def _getfield(self, obj: Any, name: str, ctx: Formula) -> CondValue:
        def get(o: Any) -> CondValue:
            if o is None:
                raise VMThrow("NullPointerException")
            if not isinstance(o, Obj) or name not in o.fields:
                raise VMThrow(f"NoSuchFieldError: {name}")
            return lift(o.fields[name])

        return self.guarded(ctx, lambda: cv.sflatmap(ctx, lift(obj), get, _CATCH))

    def _putfield(self, obj: Any, val: Any, name: str, ctx: Formula) -> None:
        def put(o: Any, region: Formula) -> CondValue:
            if o is None:
                raise VMThrow("NullPointerException")
            if not isinstance(o, Obj) or name not in o.fields:
                raise VMThrow(f"NoSuchFieldError: {name}")
            o.fields[name] = self.store(region, o.fields[name], val)
            return One(None)

        self.guarded(ctx, lambda: cv.sflatmap(ctx, lift(obj), put, _CATCH, pass_ctx=True))
        return None

    def _arrload(self, arr: Any, idx: Any, ctx: Formula) -> CondValue:
        def outer(a: Any, region: Formula) -> CondValue:
            return cv.sflatmap(region, lift(idx), lambda i: lift(array_load(a, i)), _CATCH)

        return self.guarded(ctx, lambda: cv.sflatmap(ctx, lift(arr), outer, _CATCH, pass_ctx=True))

    def _arrstore(self, arr: Any, idx: Any, val: Any, ctx: Formula) -> None:
        def store_at(a: Any, i: Any, region: Formula) -> None:
            old = array_load(a, i)
            array_store(a, i, self.store(region, old, val))

        def outer(a: Any, region: Formula) -> CondValue:
            return cv.sflatmap(region, lift(idx), lambda i, r: (store_at(a, i, r), One(None))[1],
                               _CATCH, pass_ctx=True)

        self.guarded(ctx, lambda: cv.sflatmap(ctx, lift(arr), outer, _CATCH, pass_ctx=True))
        return None

    def _arrlen(self, arr: Any, ctx: Formula) -> CondValue:
        def length(a: Any) -> int:
            if a is None:
                raise VMThrow("NullPointerException")
            if not isinstance(a, Arr):
                raise VMThrow("TypeError: ARRLEN expects array")
            return len(a.items)

        return self.guarded(ctx, lambda: cv.smap(ctx, lift(arr), length, _CATCH))

    # -- environment barrier --------------------------------------------------

    def call(self, name: str, ctx: Formula, args: Sequence[Any]) -> CondValue:
        """Invoke an intrinsic on conditional arguments according to the barrier policy."""
        kind = self.policy.kind(name)
        cargs = [lift(a) for a in args]
        if kind == SIDE_EFFECT_FREE:
            fn = BASE_INTRINSICS[name][1]
            self.barrier_log.append((name, kind, ctx))
            return self.guarded(ctx, lambda: cv.combine_n(ctx, cargs, lambda *xs: fn(None, list(xs)), _CATCH))
        if kind == MODELED:
            model = _MODELS.get(name)
            if model is None:
                raise VMAbort(f"intrinsic {name} is classified MODELED but has no model")
            self.barrier_log.append((name, kind, ctx))
            return self.guarded(ctx, lambda: lift(model(self, ctx, cargs)))
        # ABORT: only when every live configuration shares the call and its arguments
        if (ctx & self.G) != (self.root & self.G) or not all(isinstance(a, One) for a in cargs):
            raise BarrierViolation(
                f"barrier: {name} reached under context {ctx.to_text()} "
                f"with {'conditional' if not all(isinstance(a, One) for a in cargs) else 'shared'} arguments")
        self.barrier_log.append((name, kind, ctx))
        if name in ("print", "raw_print"):
            self.output.append((fmt(cargs[0].value), ctx))  # type: ignore[attr-defined]
            return One(None)
        fn = BASE_INTRINSICS[name][1]
        try:
            return lift(fn(None, [a.value for a in cargs]))  # type: ignore[attr-defined]
        except VMThrow as exc:
            self.fail(ctx, exc.message)
            raise


# -- model implementations --------------------------------------------------------

Model = Callable[[Runtime, Formula, List[CondValue]], Any]


def _receivers(ctx: Formula, v: CondValue, kind: type, what: str) -> List[Tuple[Formula, Any]]:
    out = []
    for c, x in v.leaves():
        region = c & ctx
        if not is_satisfiable(region):
            continue
        if x is None:
            raise LeafFailure(region, VMThrow("NullPointerException"))
        if not isinstance(x, kind):
            raise LeafFailure(region, VMThrow(f"TypeError: {what} expects {kind.__name__}"))
        out.append((region, x))
    return out


def _m_print(rt: Runtime, ctx: Formula, args: List[CondValue]) -> None:
    for c, x in args[0].leaves():
        region = c & ctx
        if is_satisfiable(region):
            rt.output.append((fmt(x), region))
    return None


def _m_list_new(rt: Runtime, ctx: Formula, args: List[CondValue]) -> VListModel:
    return VListModel()


def _m_list_add(rt: Runtime, ctx: Formula, args: List[CondValue]) -> None:
    for region, lst in _receivers(ctx, args[0], VListModel, "VList.add"):
        vlist_add(lst, region, args[1])
    return None


def _m_list_get(rt: Runtime, ctx: Formula, args: List[CondValue]) -> CondValue:
    return cv.sflatmap(ctx, args[0], lambda lst, r: vlist_get(_one_of(lst, VListModel, r, "VList.get"), r, args[1]),
                       pass_ctx=True)


def _m_list_size(rt: Runtime, ctx: Formula, args: List[CondValue]) -> CondValue:
    return cv.sflatmap(ctx, args[0], lambda lst, r: vlist_size(_one_of(lst, VListModel, r, "VList.size"), r),
                       pass_ctx=True)


def _m_list_iterator(rt: Runtime, ctx: Formula, args: List[CondValue]) -> CondValue:
    return cv.sflatmap(ctx, args[0],
                       lambda lst, r: One(VIterModel(_one_of(lst, VListModel, r, "VList.iterator"), r)),
                       pass_ctx=True)


def _one_of(x: Any, kind: type, region: Formula, what: str) -> Any:
    if x is None:
        raise LeafFailure(region, VMThrow("NullPointerException"))
    if not isinstance(x, kind):
        raise LeafFailure(region, VMThrow(f"TypeError: {what} expects {kind.__name__}"))
    return x


def _m_has_next_any(rt: Runtime, ctx: Formula, args: List[CondValue]) -> CondValue:
    def f(it: Any, r: Formula) -> CondValue:
        it = _one_of(it, VIterModel, r, "Iterator.hasNext")
        return cv.smap(r, it.pos, lambda p: p < len(it.lst.entries))

    return cv.sflatmap(ctx, args[0], f, pass_ctx=True)


def _m_next_any(rt: Runtime, ctx: Formula, args: List[CondValue]) -> CondValue:
    def f(it: Any, r: Formula) -> CondValue:
        it = _one_of(it, VIterModel, r, "Iterator.next")
        leaves = []
        for c, p in it.pos.leaves():
            region = c & r
            if not is_satisfiable(region):
                continue
            if p >= len(it.lst.entries):
                raise LeafFailure(region, VMThrow("NoSuchElementException"))
            leaves.append((region, it.lst.entries[p][0]))
        it.pos = rt.store(r, it.pos, cv.smap(r, it.pos, lambda p: p + 1))
        return cv.from_leaves(leaves, r)

    return cv.sflatmap(ctx, args[0], f, pass_ctx=True)


def _m_present(rt: Runtime, ctx: Formula, args: List[CondValue]) -> CondValue:
    def f(it: Any, r: Formula) -> CondValue:
        it = _one_of(it, VIterModel, r, "Iterator.present")
        leaves = []
        for c, p in it.pos.leaves():
            region = c & r
            if not is_satisfiable(region):
                continue
            if p == 0:
                raise LeafFailure(region, VMThrow("IllegalStateException"))
            pres = it.lst.entries[p - 1][1]
            leaves.append((region & pres, True))
            leaves.append((region & ~pres, False))
        return cv.from_leaves(leaves, r)

    return cv.sflatmap(ctx, args[0], f, pass_ctx=True)


def _first_present_from(entries: List[Tuple[Any, Formula]], p: int, region: Formula):
    """Yield (subregion, index) where entry `index` is the first present one at or after p."""
    remaining = region
    for j in range(p, len(entries)):
        hit = remaining & entries[j][1]
        if is_satisfiable(hit):
            yield hit, j
        remaining = remaining & ~entries[j][1]
        if not is_satisfiable(remaining):
            return
    if is_satisfiable(remaining):
        yield remaining, None


def _m_has_next(rt: Runtime, ctx: Formula, args: List[CondValue]) -> CondValue:
    def f(it: Any, r: Formula) -> CondValue:
        it = _one_of(it, VIterModel, r, "Iterator.hasNext")
        leaves = []
        for c, p in it.pos.leaves():
            region = c & r
            if is_satisfiable(region):
                for sub, j in _first_present_from(it.lst.entries, p, region):
                    leaves.append((sub, j is not None))
        return cv.from_leaves(leaves, r)

    return cv.sflatmap(ctx, args[0], f, pass_ctx=True)


def _m_next(rt: Runtime, ctx: Formula, args: List[CondValue]) -> CondValue:
    def f(it: Any, r: Formula) -> CondValue:
        it = _one_of(it, VIterModel, r, "Iterator.next")
        values, positions = [], []
        for c, p in it.pos.leaves():
            region = c & r
            if not is_satisfiable(region):
                continue
            for sub, j in _first_present_from(it.lst.entries, p, region):
                if j is None:
                    raise LeafFailure(sub, VMThrow("NoSuchElementException"))
                values.append((sub, it.lst.entries[j][0]))
                positions.append((sub, j + 1))
        it.pos = rt.store(r, it.pos, cv.from_leaves(positions, r))
        return cv.from_leaves(values, r)

    return cv.sflatmap(ctx, args[0], f, pass_ctx=True)


def _m_set_new(rt: Runtime, ctx: Formula, args: List[CondValue]) -> VSetModel:
    return VSetModel()


def _m_set_add(rt: Runtime, ctx: Formula, args: List[CondValue]) -> None:
    for region, s in _receivers(ctx, args[0], VSetModel, "Set.add"):
        vset_add(s, region, args[1])
    return None


def _m_set_contains(rt: Runtime, ctx: Formula, args: List[CondValue]) -> CondValue:
    return cv.sflatmap(ctx, args[0], lambda s, r: vset_contains(_one_of(s, VSetModel, r, "Set.contains"), r, args[1]),
                       pass_ctx=True)


_MODELS: Dict[str, Model] = {
    "print": _m_print,
    "raw_print": _m_print,
    "VList.new": _m_list_new,
    "VList.add": _m_list_add,
    "VList.get": _m_list_get,
    "VList.size": _m_list_size,
    "VList.iterator": _m_list_iterator,
    "Iterator.hasNext": _m_has_next,
    "Iterator.next": _m_next,
    "Iterator.hasNextAny": _m_has_next_any,
    "Iterator.nextAny": _m_next_any,
    "Iterator.present": _m_present,
    "Set.new": _m_set_new,
    "Set.add": _m_set_add,
    "Set.contains": _m_set_contains,
}


def invoke_across_barrier(rt: Runtime, name: str, ctx: Formula, args: Sequence[CondValue]) -> CondValue:
    return rt.call(name, ctx, args)

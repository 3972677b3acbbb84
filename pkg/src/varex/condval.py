"""Conditional values: choice trees over formulas with concrete leaves.

A tree is built from a list of (context, value) leaves whose contexts are
pairwise disjoint.  Leaves carrying equal values are merged by disjunction,
the first occurrence fixing their position, and the result is laid out as a
right-leaning chain in which every condition is simplified relative to the
region left over by the conditions before it.
"""

from __future__ import annotations

import json
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .formula import FALSE, TRUE, Formula, evaluate, is_satisfiable

__all__ = [
    "CondValue",
    "One",
    "Choice",
    "LeafFailure",
    "one",
    "choice",
    "from_leaves",
    "lift",
    "smap",
    "sflatmap",
    "write_under",
    "select",
    "when_true",
    "leaf_key",
    "fmt_leaf",
    "truthy",
    "combine",
    "combine_n",
]

_PRIMITIVES = (bool, int, float, str, type(None))


def leaf_key(v: Any) -> tuple:
    """Identity used to merge leaves: by value for primitives, by reference otherwise."""
    if isinstance(v, _PRIMITIVES):
        return (type(v).__name__, v)
    return ("ref", id(v))


def fmt_leaf(v: Any) -> str:
    if v is None:
        return "null"
    if v is True:
        return "true"
    if v is False:
        return "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (int, float)):
        return repr(v)
    return repr(v)


class LeafFailure(Exception):
    """A leaf computation failed; `ctx` is the region where it failed."""

    def __init__(self, ctx: Formula, cause: BaseException) -> None:
        super().__init__(str(cause))
        self.ctx = ctx
        self.cause = cause


class CondValue:
    __slots__ = ()

    def leaves(self) -> List[Tuple[Formula, Any]]:
        """(context, value) pairs; contexts are disjoint and cover TRUE."""
        out: List[Tuple[Formula, Any]] = []
        _collect(self, TRUE, out)
        return out

    def is_one(self) -> bool:
        return isinstance(self, One)

    def to_text(self) -> str:
        raise NotImplementedError

    def __str__(self) -> str:
        return self.to_text()

    def __repr__(self) -> str:
        return self.to_text()


class One(CondValue):
    __slots__ = ("value",)

    def __init__(self, value: Any) -> None:
        self.value = value

    def __eq__(self, other: object) -> bool:
        return isinstance(other, One) and leaf_key(self.value) == leaf_key(other.value)

    def __hash__(self) -> int:
        return hash(leaf_key(self.value))

    def to_text(self) -> str:
        return f"One({fmt_leaf(self.value)})"


class Choice(CondValue):
    __slots__ = ("cond", "then", "other")

    def __init__(self, cond: Formula, then: CondValue, other: CondValue) -> None:
        self.cond = cond
        self.then = then
        self.other = other

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Choice)
            and self.cond == other.cond
            and self.then == other.then
            and self.other == other.other
        )

    def __hash__(self) -> int:
        return hash((self.cond, self.then, self.other))

    def to_text(self) -> str:
        return f"Choice({self.cond.to_text()}, {self.then.to_text()}, {self.other.to_text()})"


def _collect(v: CondValue, ctx: Formula, out: List[Tuple[Formula, Any]]) -> None:
    while isinstance(v, Choice):
        _collect(v.then, ctx & v.cond, out)
        ctx = ctx & ~v.cond
        v = v.other
    if is_satisfiable(ctx):
        out.append((ctx, v.value))  # type: ignore[attr-defined]


def one(v: Any) -> One:
    return One(v)


def lift(v: Any) -> CondValue:
    return v if isinstance(v, CondValue) else One(v)


def from_leaves(leaves: Iterable[Tuple[Formula, Any]], domain: Formula = TRUE) -> CondValue:
    """Compressed tree from disjoint leaves; only `domain` is guaranteed meaningful."""
    order: List[tuple] = []
    merged: Dict[tuple, List[Any]] = {}
    for ctx, value in leaves:
        ctx = ctx & domain
        if not is_satisfiable(ctx):
            continue
        key = leaf_key(value)
        slot = merged.get(key)
        if slot is None:
            merged[key] = [ctx, value]
            order.append(key)
        else:
            slot[0] = slot[0] | ctx
    if not order:
        return One(None)
    entries = [merged[k] for k in order]
    return _chain(entries, domain)


def _chain(entries: List[List[Any]], region: Formula) -> CondValue:
    if len(entries) == 1:
        return One(entries[0][1])
    ctx, value = entries[0]
    cond = ctx.restrict(region)
    rest = _chain(entries[1:], region & ~ctx)
    return Choice(cond, One(value), rest)


def choice(f: Formula, a: CondValue, b: CondValue) -> CondValue:
    if f.is_true():
        return a
    if f.is_false():
        return b
    if a == b:
        return a
    leaves = [(f & c, x) for c, x in a.leaves()]
    leaves += [(~f & c, x) for c, x in b.leaves()]
    return from_leaves(leaves)


def smap(ctx: Formula, v: CondValue, fn: Callable[[Any], Any], catch: Tuple[type, ...] = ()) -> CondValue:
    """Apply `fn` to every leaf reachable under `ctx`.

    Exceptions of the types in `catch` are re-raised as LeafFailure carrying
    the failing leaf's region.
    """
    out = []
    for c, x in v.leaves():
        region = c & ctx
        if not is_satisfiable(region):
            continue
        try:
            out.append((region, fn(x)))
        except catch as exc:
            raise LeafFailure(region, exc) from exc
    return from_leaves(out, ctx)


def sflatmap(
    ctx: Formula,
    v: CondValue,
    fn: Callable[..., CondValue],
    catch: Tuple[type, ...] = (),
    pass_ctx: bool = False,
) -> CondValue:
    """Like smap, with `fn` returning a conditional value grafted under each leaf.

    With `pass_ctx`, `fn` receives (value, leaf_region) so nested operations
    can restrict themselves to that region.
    """
    out = []
    for c, x in v.leaves():
        region = c & ctx
        if not is_satisfiable(region):
            continue
        try:
            r = fn(x, region) if pass_ctx else fn(x)
        except LeafFailure as exc:
            failing = exc.ctx & region
            if not is_satisfiable(failing):
                raise AssertionError("leaf failure outside its own region") from exc
            raise LeafFailure(failing, exc.cause) from exc.cause
        except catch as exc:
            raise LeafFailure(region, exc) from exc
        for d, y in lift(r).leaves():
            sub = d & region
            if is_satisfiable(sub):
                out.append((sub, y))
    return from_leaves(out, ctx)


def write_under(ctx: Formula, old: CondValue, new: CondValue) -> CondValue:
    """`new` where `ctx` holds, `old` elsewhere."""
    if ctx.is_true():
        return new
    if ctx.is_false():
        return old
    leaves = [(ctx & c, x) for c, x in new.leaves()]
    leaves += [(~ctx & d, y) for d, y in old.leaves()]
    return from_leaves(leaves)


def select(v: CondValue, cfg: Mapping[str, bool]) -> Any:
    while isinstance(v, Choice):
        v = v.then if evaluate(v.cond, cfg) else v.other
    return v.value  # type: ignore[attr-defined]


def truthy(x: Any) -> bool:
    if isinstance(x, bool):
        return x
    if isinstance(x, int):
        return x != 0
    raise TypeError(f"branch condition must be boolean or integer, got {fmt_leaf(x)}")


def when_true(ctx: Formula, v: CondValue) -> Formula:
    """Region inside `ctx` where `v` holds a truthy leaf."""
    result = FALSE
    for c, x in v.leaves():
        region = c & ctx
        if is_satisfiable(region) and truthy(x):
            result = result | region
    return result


def combine(ctx: Formula, a: CondValue, b: CondValue, fn: Callable[[Any, Any], Any],
            catch: Tuple[type, ...] = ()) -> CondValue:
    """Binary operation on two conditional values (sflatmap over `a`, smap over `b`)."""
    return sflatmap(ctx, a, lambda x, c: smap(c, b, lambda y: fn(x, y), catch), catch, pass_ctx=True)


def combine_n(ctx: Formula, args: Sequence[CondValue], fn: Callable[..., Any],
              catch: Tuple[type, ...] = ()) -> CondValue:
    """n-ary version of `combine`: `fn` runs once per feasible argument combination."""

    def go(i: int, region: Formula, acc: Tuple[Any, ...]) -> CondValue:
        if i == len(args) - 1:
            return smap(region, args[i], lambda y: fn(*acc, y), catch)
        return sflatmap(region, args[i], lambda x, c: go(i + 1, c, acc + (x,)), catch, pass_ctx=True)

    if not args:
        try:
            return One(fn())
        except catch as exc:
            raise LeafFailure(ctx, exc) from exc
    return go(0, ctx, ())

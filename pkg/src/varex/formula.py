"""Propositional formulas over boolean configuration options.

Formulas are reduced ordered binary decision diagrams kept in a single
process-wide node table, so two equivalent formulas always share one node
and compare equal by handle.  Variables are ordered by declaration.
"""

from __future__ import annotations

import random
import re
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence

__all__ = [
    "Formula",
    "FormulaError",
    "TRUE",
    "FALSE",
    "declare",
    "declared",
    "mk_option",
    "conj",
    "disj",
    "neg",
    "is_satisfiable",
    "is_contradiction",
    "is_tautology",
    "evaluate",
    "enumerate_configs",
    "count_models",
    "parse_formula",
    "DEFAULT_SEED",
]

DEFAULT_SEED = 20180412


class FormulaError(Exception):
    """Unknown option, partial assignment, or malformed formula text."""


_TERMINAL_LEVEL = 1 << 30


class _Manager:
    def __init__(self) -> None:
        self.names: List[str] = []
        self.index: Dict[str, int] = {}
        # node 0 is FALSE, node 1 is TRUE
        self.level: List[int] = [_TERMINAL_LEVEL, _TERMINAL_LEVEL]
        self.lo: List[int] = [0, 1]
        self.hi: List[int] = [0, 1]
        self.unique: Dict[tuple, int] = {}
        self.and_cache: Dict[tuple, int] = {}
        self.not_cache: Dict[int, int] = {}
        self.restrict_cache: Dict[tuple, int] = {}

    def mk(self, lvl: int, lo: int, hi: int) -> int:
        if lo == hi:
            return lo
        key = (lvl, lo, hi)
        node = self.unique.get(key)
        if node is None:
            node = len(self.level)
            self.level.append(lvl)
            self.lo.append(lo)
            self.hi.append(hi)
            self.unique[key] = node
        return node

    def neg(self, u: int) -> int:
        if u < 2:
            return 1 - u
        r = self.not_cache.get(u)
        if r is None:
            r = self.mk(self.level[u], self.neg(self.lo[u]), self.neg(self.hi[u]))
            self.not_cache[u] = r
            self.not_cache[r] = u
        return r

    def conj(self, u: int, v: int) -> int:
        if u == 0 or v == 0:
            return 0
        if u == 1:
            return v
        if v == 1 or u == v:
            return u
        if u > v:
            u, v = v, u
        key = (u, v)
        r = self.and_cache.get(key)
        if r is not None:
            return r
        lu, lv = self.level[u], self.level[v]
        if lu == lv:
            r = self.mk(lu, self.conj(self.lo[u], self.lo[v]), self.conj(self.hi[u], self.hi[v]))
        elif lu < lv:
            r = self.mk(lu, self.conj(self.lo[u], v), self.conj(self.hi[u], v))
        else:
            r = self.mk(lv, self.conj(u, self.lo[v]), self.conj(u, self.hi[v]))
        self.and_cache[key] = r
        return r

    def disj(self, u: int, v: int) -> int:
        return self.neg(self.conj(self.neg(u), self.neg(v)))

    def restrict(self, f: int, c: int) -> int:
        # Coudert-Madre restrict: agrees with f wherever c holds
        if c == 0 or c == 1 or f < 2:
            return f
        key = (f, c)
        r = self.restrict_cache.get(key)
        if r is not None:
            return r
        lf, lc = self.level[f], self.level[c]
        if lc < lf:
            r = self.restrict(f, self.disj(self.lo[c], self.hi[c]))
        elif lf < lc:
            r = self.mk(lf, self.restrict(self.lo[f], c), self.restrict(self.hi[f], c))
        elif self.lo[c] == 0:
            r = self.restrict(self.hi[f], self.hi[c])
        elif self.hi[c] == 0:
            r = self.restrict(self.lo[f], self.lo[c])
        else:
            r = self.mk(lf, self.restrict(self.lo[f], self.lo[c]), self.restrict(self.hi[f], self.hi[c]))
        self.restrict_cache[key] = r
        return r

    def cofactor(self, f: int, lvl: int, value: bool) -> int:
        if f < 2 or self.level[f] > lvl:
            return f
        if self.level[f] == lvl:
            return self.hi[f] if value else self.lo[f]
        return self.mk(
            self.level[f], self.cofactor(self.lo[f], lvl, value), self.cofactor(self.hi[f], lvl, value)
        )

    def support(self, f: int) -> set:
        seen, out, stack = set(), set(), [f]
        while stack:
            u = stack.pop()
            if u < 2 or u in seen:
                continue
            seen.add(u)
            out.add(self.level[u])
            stack.append(self.lo[u])
            stack.append(self.hi[u])
        return out


_M = _Manager()


class Formula:
    """Handle to a canonical decision-diagram node."""

    __slots__ = ("node",)

    def __init__(self, node: int) -> None:
        self.node = node

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Formula) and other.node == self.node

    def __hash__(self) -> int:
        return hash(self.node)

    def __and__(self, other: "Formula") -> "Formula":
        return Formula(_M.conj(self.node, other.node))

    def __or__(self, other: "Formula") -> "Formula":
        return Formula(_M.disj(self.node, other.node))

    def __invert__(self) -> "Formula":
        return Formula(_M.neg(self.node))

    def __bool__(self) -> bool:
        raise TypeError("use is_satisfiable()/is_tautology() instead of truth-testing a Formula")

    def is_true(self) -> bool:
        return self.node == 1

    def is_false(self) -> bool:
        return self.node == 0

    def restrict(self, care: "Formula") -> "Formula":
        """A (usually smaller) formula that agrees with this one wherever `care` holds."""
        return Formula(_M.restrict(self.node, care.node))

    def support(self) -> List[str]:
        return [_M.names[lvl] for lvl in sorted(_M.support(self.node))]

    def to_text(self) -> str:
        return _to_text(self.node)

    def __str__(self) -> str:
        return self.to_text()

    def __repr__(self) -> str:
        return f"Formula({self.to_text()})"


TRUE = Formula(1)
FALSE = Formula(0)


def declare(names: Iterable[str]) -> None:
    """Register option names; variable order follows first declaration."""
    for name in names:
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name) or name in ("True", "False"):
            raise FormulaError(f"invalid option name {name!r}")
        if name not in _M.index:
            _M.index[name] = len(_M.names)
            _M.names.append(name)


def declared() -> List[str]:
    return list(_M.names)


def mk_option(name: str) -> Formula:
    lvl = _M.index.get(name)
    if lvl is None:
        raise FormulaError(f"undeclared option {name!r}")
    return Formula(_M.mk(lvl, 0, 1))


def conj(a: Formula, b: Formula) -> Formula:
    return a & b


def disj(a: Formula, b: Formula) -> Formula:
    return a | b


def neg(a: Formula) -> Formula:
    return ~a


def is_satisfiable(f: Formula) -> bool:
    return f.node != 0


def is_contradiction(f: Formula) -> bool:
    return f.node == 0


def is_tautology(f: Formula) -> bool:
    return f.node == 1


def evaluate(f: Formula, cfg: Mapping[str, bool]) -> bool:
    u = f.node
    while u > 1:
        name = _M.names[_M.level[u]]
        try:
            value = cfg[name]
        except KeyError:
            raise FormulaError(f"assignment does not cover option {name!r}") from None
        u = _M.hi[u] if value else _M.lo[u]
    return u == 1


def _check_options(f: Formula, options: Sequence[str]) -> List[int]:
    levels = []
    for name in options:
        if name not in _M.index:
            raise FormulaError(f"undeclared option {name!r}")
        levels.append(_M.index[name])
    missing = _M.support(f.node) - set(levels)
    if missing:
        raise FormulaError(
            "formula mentions options outside the enumeration set: "
            + ", ".join(sorted(_M.names[m] for m in missing))
        )
    return levels


class _Counter:
    def __init__(self, levels: List[int]) -> None:
        self.levels = levels
        self.memo: Dict[tuple, int] = {}

    def count(self, u: int, i: int) -> int:
        if u == 0:
            return 0
        if i == len(self.levels):
            return 1 if u == 1 else 0
        key = (u, i)
        r = self.memo.get(key)
        if r is None:
            lvl = self.levels[i]
            r = self.count(_M.cofactor(u, lvl, False), i + 1) + self.count(_M.cofactor(u, lvl, True), i + 1)
            self.memo[key] = r
        return r


def count_models(f: Formula, options: Sequence[str]) -> int:
    """Number of total assignments over `options` satisfying `f`."""
    return _Counter(_check_options(f, options)).count(f.node, 0)


def enumerate_configs(
    options: Sequence[str],
    feature_model: Formula = TRUE,
    cap: int = 4096,
    seed: Optional[int] = None,
) -> List[Dict[str, bool]]:
    """Valid configurations over `options`.

    All of them (in binary counting order, first option most significant)
    when there are at most `cap`; otherwise a uniform sample of exactly
    `cap` distinct ones drawn with `seed`, returned in the same order.
    """
    if cap < 1:
        raise ValueError("cap must be at least 1")
    options = list(options)
    counter = _Counter(_check_options(feature_model, options))
    total = counter.count(feature_model.node, 0)
    if total == 0:
        return []
    if total <= cap:
        ranks: Iterable[int] = range(total)
    else:
        rng = random.Random(DEFAULT_SEED if seed is None else seed)
        ranks = sorted(rng.sample(range(total), cap))
    return [_unrank(feature_model.node, r, options, counter) for r in ranks]


def _unrank(u: int, rank: int, options: List[str], counter: _Counter) -> Dict[str, bool]:
    cfg: Dict[str, bool] = {}
    for i, name in enumerate(options):
        lvl = counter.levels[i]
        lo = _M.cofactor(u, lvl, False)
        n_lo = counter.count(lo, i + 1)
        if rank < n_lo:
            cfg[name] = False
            u = lo
        else:
            cfg[name] = True
            rank -= n_lo
            u = _M.cofactor(u, lvl, True)
    return cfg


def iter_cubes(f: Formula) -> Iterator[Dict[str, bool]]:
    """Partial assignments, one per decision-diagram path to TRUE."""

    def walk(u: int, path: Dict[str, bool]) -> Iterator[Dict[str, bool]]:
        if u == 0:
            return
        if u == 1:
            yield dict(path)
            return
        name = _M.names[_M.level[u]]
        path[name] = False
        yield from walk(_M.lo[u], path)
        path[name] = True
        yield from walk(_M.hi[u], path)
        del path[name]

    yield from walk(f.node, {})


# -- text form -------------------------------------------------------------


def _to_text(u: int) -> str:
    if u == 1:
        return "True"
    if u == 0:
        return "False"
    name = _M.names[_M.level[u]]
    lo, hi = _M.lo[u], _M.hi[u]
    if lo == 0 and hi == 1:
        return name
    if lo == 1 and hi == 0:
        return "!" + name
    if lo == 0:
        return f"{name} & {_paren(hi, '&')}"
    if hi == 0:
        return f"!{name} & {_paren(lo, '&')}"
    if hi == 1:
        return f"{name} | {_paren(lo, '|')}"
    if lo == 1:
        return f"!{name} | {_paren(hi, '|')}"
    return f"({name} & {_paren(hi, '&')}) | (!{name} & {_paren(lo, '&')})"


def _paren(u: int, ctx_op: str) -> str:
    text = _to_text(u)
    if u < 2 or re.fullmatch(r"!?[A-Za-z_][A-Za-z0-9_]*", text):
        return text
    top_level_ops = _top_ops(text)
    if top_level_ops <= {ctx_op}:
        return text
    return f"({text})"


def _top_ops(text: str) -> set:
    depth, ops = 0, set()
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif depth == 0 and ch in "&|":
            ops.add(ch)
    return ops


_TOKEN = re.compile(r"\s*(?:([A-Za-z_][A-Za-z0-9_]*)|(.))")


def parse_formula(text: str) -> Formula:
    """Parse `& | ! ( )` expressions over declared option names.

    Precedence: `!` binds tightest, then `&`, then `|`.  `->` is accepted
    as implication (lowest precedence, right associative).
    """
    tokens: List[str] = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        if text.startswith("->", pos):
            tokens.append("->")
            pos += 2
            continue
        m = _TOKEN.match(text, pos)
        if m is None:
            break
        tok = m.group(1) or m.group(2)
        if tok and not tok.isspace():
            tokens.append(tok)
        pos = m.end()
    tokens.append("<eof>")
    i = 0

    def peek() -> str:
        return tokens[i]

    def take(expected: Optional[str] = None) -> str:
        nonlocal i
        tok = tokens[i]
        if expected is not None and tok != expected:
            raise FormulaError(f"expected {expected!r} but found {tok!r} in {text!r}")
        i += 1
        return tok

    def implication() -> Formula:
        left = disjunction()
        if peek() == "->":
            take()
            return ~left | implication()
        return left

    def disjunction() -> Formula:
        f = conjunction()
        while peek() == "|":
            take()
            f = f | conjunction()
        return f

    def conjunction() -> Formula:
        f = unary()
        while peek() == "&":
            take()
            f = f & unary()
        return f

    def unary() -> Formula:
        tok = peek()
        if tok == "!":
            take()
            return ~unary()
        if tok == "(":
            take()
            f = implication()
            take(")")
            return f
        if tok == "True":
            take()
            return TRUE
        if tok == "False":
            take()
            return FALSE
        if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", tok):
            take()
            return mk_option(tok)
        raise FormulaError(f"unexpected token {tok!r} in {text!r}")

    f = implication()
    take("<eof>")
    return f

"""Sharing-efficiency checks for variational traces.

A variational trace shares optimally when it is no longer than the shortest
common supersequence of the concrete traces it stands for.  Exact n-way
merging is expensive, so `check_optimal` compares against the longest
pairwise merge instead, which can only err towards NON_OPTIMAL.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Hashable, List, Optional, Sequence, Tuple

from .formula import TRUE, Formula, is_satisfiable

OPTIMAL = "OPTIMAL"
NON_OPTIMAL = "NON_OPTIMAL"
UNKNOWN = "UNKNOWN"

DEFAULT_PAIR_LIMIT = 10_000

VTrace = Sequence[Tuple[Hashable, Formula]]
Trace = Tuple[Hashable, ...]


class TooManyTraces(Exception):
    pass


def expand_traces(t: VTrace, feature_model: Formula = TRUE, limit: Optional[int] = None) -> List[Trace]:
    """Distinct concrete traces of `t`, one per class of configurations.

    Regions are split on each entry's context, so every surviving region
    corresponds to exactly one concrete trace and no configuration is
    enumerated.  Order follows the entries: configurations that take an entry
    come before those that skip it.
    """
    regions: List[Tuple[Formula, List[Hashable]]] = []
    if is_satisfiable(feature_model):
        regions.append((feature_model, []))
    for block, ctx in t:
        nxt: List[Tuple[Formula, List[Hashable]]] = []
        for region, seq in regions:
            inside = region & ctx
            outside = region & ~ctx
            if is_satisfiable(inside):
                nxt.append((inside, seq + [block]))
            if is_satisfiable(outside):
                nxt.append((outside, seq))
        regions = nxt
        if limit is not None and len(regions) > limit:
            raise TooManyTraces(f"more than {limit} distinct concrete traces")
    seen = set()
    out: List[Trace] = []
    for _, seq in regions:
        tr = tuple(seq)
        if tr not in seen:
            seen.add(tr)
            out.append(tr)
    return out


def merge_length(t1: Sequence[Hashable], t2: Sequence[Hashable]) -> int:
    """Length of the shortest common supersequence of two traces.

    Same value as a global alignment with gap cost 1 where mismatches are
    forbidden.
    """
    n = len(t2)
    prev = list(range(n + 1))
    for i, a in enumerate(t1, 1):
        cur = [i] + [0] * n
        for j, b in enumerate(t2, 1):
            if a == b:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = min(prev[j], cur[j - 1]) + 1
        prev = cur
    return prev[n]


def merge(t1: Sequence[Hashable], t2: Sequence[Hashable]) -> List[Hashable]:
    """One shortest common supersequence of `t1` and `t2`."""
    m, n = len(t1), len(t2)
    d = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        for j in range(n + 1):
            if i == 0 or j == 0:
                d[i][j] = i + j
            elif t1[i - 1] == t2[j - 1]:
                d[i][j] = d[i - 1][j - 1] + 1
            else:
                d[i][j] = min(d[i - 1][j], d[i][j - 1]) + 1
    out: List[Hashable] = []
    i, j = m, n
    while i and j:
        if t1[i - 1] == t2[j - 1]:
            out.append(t1[i - 1])
            i, j = i - 1, j - 1
        elif d[i - 1][j] <= d[i][j - 1]:
            out.append(t1[i - 1])
            i -= 1
        else:
            out.append(t2[j - 1])
            j -= 1
    out.extend(reversed(t1[:i]))
    out.extend(reversed(t2[:j]))
    out.reverse()
    return out


@dataclass(frozen=True)
class AlignResult:
    verdict: str
    length: int
    max_pair: Optional[int]  # None when the pair count was over the limit
    traces: int


def check_optimal(
    t: VTrace,
    feature_model: Formula = TRUE,
    pair_limit: int = DEFAULT_PAIR_LIMIT,
) -> AlignResult:
    """Judge a variational trace against the longest pairwise merge of its concrete traces."""
    # beyond this many traces the pair count certainly exceeds the limit
    trace_limit = int((2 * pair_limit) ** 0.5) + 2
    try:
        concrete = expand_traces(t, feature_model, limit=trace_limit)
    except TooManyTraces:
        return AlignResult(UNKNOWN, len(t), None, -1)
    npairs = len(concrete) * (len(concrete) - 1) // 2
    if npairs > pair_limit:
        return AlignResult(UNKNOWN, len(t), None, len(concrete))
    if len(concrete) <= 1:
        best = len(concrete[0]) if concrete else 0
    else:
        best = max(merge_length(a, b) for a, b in combinations(concrete, 2))
    verdict = OPTIMAL if len(t) <= best else NON_OPTIMAL
    return AlignResult(verdict, len(t), best, len(concrete))


def parse_trace(text: str) -> List[Tuple[str, List[Tuple[str, str]]]]:
    """Read a trace file of `<vblock> <formula>` lines.

    A `# title` line starts a new section; the result is (title, entries) per
    non-empty section.
    """
    sections: List[Tuple[str, List[Tuple[str, str]]]] = [("", [])]
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if not sections[-1][1]:
                sections.pop()
            sections.append((line[1:].strip(), []))
            continue
        block, _, formula = line.partition(" ")
        sections[-1][1].append((block, formula.strip() or "True"))
    return [s for s in sections if s[1]]

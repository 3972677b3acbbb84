"""Mini stack bytecode: instructions, methods, programs, the `.vasm` text
format, stack-depth validation and control-flow graphs."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Tuple

from . import formula as fm

# opcode -> (operand kinds, pops, pushes); None means "depends on operand"
OPCODES: Dict[str, Tuple[str, Optional[int], int]] = {
    "CONST": ("k", 0, 1),
    "LOAD": ("i", 0, 1),
    "STORE": ("i", 1, 0),
    "ADD": ("", 2, 1),
    "SUB": ("", 2, 1),
    "MUL": ("", 2, 1),
    "DIV": ("", 2, 1),
    "REM": ("", 2, 1),
    "NEG": ("", 1, 1),
    "CMPEQ": ("", 2, 1),
    "CMPLT": ("", 2, 1),
    "CMPGT": ("", 2, 1),
    "CONCAT": ("", 2, 1),
    "GOTO": ("L", 0, 0),
    "IFTRUE": ("L", 1, 0),
    "POP": ("", 1, 0),
    "DUP": ("", 1, 2),
    "SWAP": ("", 2, 2),
    "INVOKE": ("mn", None, 1),
    "RETURN": ("", 0, 0),
    "RETURNVAL": ("", 1, 0),
    "NEW": ("c", 0, 1),
    "GETFIELD": ("f", 1, 1),
    "PUTFIELD": ("f", 2, 0),
    "NEWARRAY": ("", 1, 1),
    "ARRLOAD": ("", 2, 1),
    "ARRSTORE": ("", 3, 0),
    "ARRLEN": ("", 1, 1),
    "GETOPTION": ("o", 0, 1),
    "THROW": ("", 1, 0),
    "INTRINSIC": ("sn", None, 1),
}

BINARY_OPS = ("ADD", "SUB", "MUL", "DIV", "REM", "CMPEQ", "CMPLT", "CMPGT", "CONCAT")
TERMINATORS = ("GOTO", "RETURN", "RETURNVAL", "THROW")
BRANCHES = ("GOTO", "IFTRUE")


class AsmError(Exception):
    """One or more problems found while reading or checking a program."""

    def __init__(self, errors: Sequence[Tuple[int, str]]) -> None:
        self.errors = list(errors)
        super().__init__("\n".join(f"line {ln}: {msg}" if ln else msg for ln, msg in self.errors))


@dataclass(frozen=True)
class Instruction:
    op: str
    args: tuple = ()
    line: int = field(default=0, compare=False)
    # provenance tag used by the transformer; not printed
    tag: Any = field(default=None, compare=False)

    @property
    def target(self) -> str:
        return self.args[0]

    def pops(self) -> int:
        kinds, pops, _ = OPCODES[self.op]
        if pops is None:
            return self.args[1]
        return pops

    def pushes(self) -> int:
        return OPCODES[self.op][2]

    def to_text(self) -> str:
        if self.op == "CONST":
            return f"CONST {format_literal(self.args[0])}"
        if not self.args:
            return self.op
        return self.op + " " + " ".join(str(a) for a in self.args)


@dataclass
class Handler:
    start: str
    end: str
    target: str


@dataclass
class MethodDef:
    name: str
    nparams: int
    nlocals: int
    code: List[Instruction]
    labels: Dict[str, int]
    handlers: List[Handler] = field(default_factory=list)
    owner: str = ""
    # instructions added by the iterator rewrite (ignored by equality)
    plumbing: FrozenSet[int] = frozenset()

    @property
    def qualname(self) -> str:
        return f"{self.owner}.{self.name}" if self.owner else self.name

    def target(self, label: str) -> int:
        return self.labels[label]

    def labels_at(self) -> Dict[int, List[str]]:
        out: Dict[int, List[str]] = {}
        for name, idx in self.labels.items():
            out.setdefault(idx, []).append(name)
        return out

    def handler_ranges(self) -> List[Tuple[int, int, int]]:
        return [(self.labels[h.start], self.labels[h.end], self.labels[h.target]) for h in self.handlers]

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, MethodDef)
            and (self.name, self.nparams, self.nlocals, self.code, self.labels, self.handlers)
            == (other.name, other.nparams, other.nlocals, other.code, other.labels, other.handlers)
        )


@dataclass
class ClassDef:
    name: str
    fields: List[str] = field(default_factory=list)
    methods: Dict[str, MethodDef] = field(default_factory=dict)


@dataclass
class Program:
    options: List[str]
    constraints: List[str]
    classes: Dict[str, ClassDef]
    entry: str

    @property
    def feature_model(self) -> fm.Formula:
        fm.declare(self.options)
        f = fm.TRUE
        for c in self.constraints:
            f = f & fm.parse_formula(c)
        return f

    def method(self, qualname: str) -> MethodDef:
        cls, _, name = qualname.rpartition(".")
        try:
            return self.classes[cls].methods[name]
        except KeyError:
            raise KeyError(f"no method {qualname}") from None

    def has_method(self, qualname: str) -> bool:
        cls, _, name = qualname.rpartition(".")
        return cls in self.classes and name in self.classes[cls].methods

    def methods(self) -> List[MethodDef]:
        return [m for c in self.classes.values() for m in c.methods.values()]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Program):
            return NotImplemented
        return (self.options, self.constraints, self.entry) == (other.options, other.constraints, other.entry) and [
            (c.name, c.fields, list(c.methods.items())) for c in self.classes.values()
        ] == [(c.name, c.fields, list(c.methods.items())) for c in other.classes.values()]


# -- literals ---------------------------------------------------------------


def format_literal(v: object) -> str:
    if v is None:
        return "null"
    if v is True:
        return "true"
    if v is False:
        return "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, float):
        text = repr(v)
        return text if any(ch in text for ch in ".eEn") else text + ".0"
    if isinstance(v, int):
        return str(v)
    raise ValueError(f"not a literal: {v!r}")


def parse_literal(text: str) -> object:
    text = text.strip()
    if text == "null":
        return None
    if text == "true":
        return True
    if text == "false":
        return False
    if text.startswith('"'):
        v = json.loads(text)
        if not isinstance(v, str):
            raise ValueError(text)
        return v
    if re.fullmatch(r"[-+]?\d+", text):
        return int(text)
    return float(text)


# -- parsing ----------------------------------------------------------------

_IDENT = r"[A-Za-z_$][A-Za-z0-9_$]*"
_QUAL = rf"{_IDENT}(?:\.{_IDENT})*"


def _strip_comment(line: str) -> str:
    in_str = False
    escaped = False
    for i, ch in enumerate(line):
        if in_str:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch == "#":
            return line[:i]
    return line


def parse_program(text: str) -> Program:
    """Read `.vasm` source; raises AsmError listing every problem found."""
    errors: List[Tuple[int, str]] = []
    options: List[str] = []
    constraints: List[Tuple[int, str]] = []
    classes: Dict[str, ClassDef] = {}
    entry: Optional[str] = None
    entry_line = 0
    cls: Optional[ClassDef] = None
    meth: Optional[MethodDef] = None
    meth_line = 0
    handler_lines: List[int] = []
    pending_labels: List[Tuple[str, int]] = []

    def add_label(name: str, ln: int) -> None:
        assert meth is not None
        if name in meth.labels or any(name == p for p, _ in pending_labels):
            errors.append((ln, f"duplicate label {name}"))
        pending_labels.append((name, ln))

    for ln, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if meth is not None:
            if line == "}":
                for name, lln in pending_labels:
                    errors.append((lln, f"label {name} does not precede an instruction"))
                pending_labels.clear()
                assert cls is not None
                meth.handlers = meth.handlers
                _finish_method(meth, handler_lines, meth_line, errors)
                cls.methods[meth.name] = meth
                meth = None
                continue
            while True:
                m = re.match(rf"({_IDENT})\s*:(?!:)\s*", line)
                if not m:
                    break
                add_label(m.group(1), ln)
                line = line[m.end():]
            if not line:
                continue
            parts = line.split(None, 1)
            word = parts[0]
            rest = parts[1] if len(parts) > 1 else ""
            if word == "handler":
                hp = rest.split()
                if len(hp) != 3:
                    errors.append((ln, "handler needs <start> <end> <target>"))
                else:
                    meth.handlers.append(Handler(*hp))
                    handler_lines.append(ln)
                continue
            instr = _parse_instruction(word, rest, ln, errors)
            if instr is None:
                continue
            for name, _ in pending_labels:
                meth.labels[name] = len(meth.code)
            pending_labels.clear()
            meth.code.append(instr)
            continue
        if cls is not None:
            if line == "}":
                if cls.name in classes:
                    errors.append((ln, f"duplicate class {cls.name}"))
                classes[cls.name] = cls
                cls = None
                continue
            m = re.fullmatch(rf"field\s+({_IDENT})", line)
            if m:
                if m.group(1) in cls.fields:
                    errors.append((ln, f"duplicate field {m.group(1)}"))
                cls.fields.append(m.group(1))
                continue
            m = re.fullmatch(rf"method\s+({_IDENT})\s*\(\s*(\d+)\s*\)\s+locals\s+(\d+)\s*\{{", line)
            if m:
                name, nparams, nlocals = m.group(1), int(m.group(2)), int(m.group(3))
                if name in cls.methods:
                    errors.append((ln, f"duplicate method {name}"))
                if nlocals < nparams:
                    errors.append((ln, "locals must include the parameters"))
                meth = MethodDef(name, nparams, nlocals, [], {}, [], cls.name)
                meth_line = ln
                handler_lines = []
                continue
            errors.append((ln, f"expected 'field', 'method' or '}}', got {line!r}"))
            continue
        m = re.fullmatch(rf"option\s+({_IDENT})", line)
        if m:
            if m.group(1) in options:
                errors.append((ln, f"duplicate option {m.group(1)}"))
            else:
                options.append(m.group(1))
            continue
        m = re.fullmatch(r"constraint\s+(.+)", line)
        if m:
            constraints.append((ln, m.group(1).strip()))
            continue
        m = re.fullmatch(rf"entry\s+({_QUAL})", line)
        if m:
            entry, entry_line = m.group(1), ln
            continue
        m = re.fullmatch(rf"class\s+({_IDENT})\s*\{{", line)
        if m:
            cls = ClassDef(m.group(1))
            continue
        errors.append((ln, f"unexpected {line!r}"))

    if meth is not None or cls is not None:
        errors.append((0, "unexpected end of input (missing '}')"))
    if entry is None:
        errors.append((0, "missing 'entry' declaration"))

    try:
        fm.declare(options)
    except fm.FormulaError as exc:
        errors.append((0, str(exc)))
    ctexts = []
    for ln, ctext in constraints:
        try:
            _check_constraint(ctext, options)
            ctexts.append(ctext)
        except fm.FormulaError as exc:
            errors.append((ln, str(exc)))
    prog = Program(options, ctexts, classes, entry or "")
    if not errors:
        errors.extend(check_program(prog, entry_line))
    if errors:
        raise AsmError(sorted(errors, key=lambda e: e[0]))
    return prog


def _check_constraint(text: str, options: List[str]) -> None:
    f = fm.parse_formula(text)
    unknown = set(f.support()) - set(options)
    if unknown:
        raise fm.FormulaError(f"constraint uses undeclared options: {', '.join(sorted(unknown))}")
    # names absent from the support may still be undeclared in this program
    for name in re.findall(_IDENT, text):
        if name not in ("True", "False") and name not in options:
            raise fm.FormulaError(f"constraint uses undeclared option {name}")


def _parse_instruction(word: str, rest: str, ln: int, errors: List[Tuple[int, str]]) -> Optional[Instruction]:
    op = word.upper() if word.upper() in OPCODES else word
    if op not in OPCODES:
        errors.append((ln, f"unknown opcode {word}"))
        return None
    kinds = OPCODES[op][0]
    rest = rest.strip()
    try:
        if kinds == "":
            if rest:
                raise ValueError(f"{op} takes no operands")
            return Instruction(op, (), ln)
        if kinds == "k":
            return Instruction(op, (parse_literal(rest),), ln)
        parts = rest.split()
        if len(parts) != len(kinds):
            raise ValueError(f"{op} expects {len(kinds)} operand(s)")
        args: List[object] = []
        for kind, part in zip(kinds, parts):
            if kind in "in":
                if not part.isdigit():
                    raise ValueError(f"expected a non-negative integer, got {part}")
                args.append(int(part))
            elif kind in "Lcfo":
                if not re.fullmatch(_IDENT, part):
                    raise ValueError(f"bad name {part}")
                args.append(part)
            elif kind in "ms":
                if not re.fullmatch(_QUAL, part):
                    raise ValueError(f"bad name {part}")
                args.append(part)
        return Instruction(op, tuple(args), ln)
    except (ValueError, json.JSONDecodeError) as exc:
        errors.append((ln, str(exc)))
        return None


def _finish_method(meth: MethodDef, handler_lines: List[int], meth_line: int, errors: List[Tuple[int, str]]) -> None:
    if not meth.code:
        errors.append((meth_line, f"method {meth.name} has no instructions"))
        return
    for ins in meth.code:
        if ins.op in BRANCHES and ins.target not in meth.labels:
            errors.append((ins.line, f"undefined label {ins.target}"))
    for h, ln in zip(meth.handlers, handler_lines):
        for name in (h.start, h.target):
            if name not in meth.labels:
                errors.append((ln, f"undefined label {name}"))
        if h.end not in meth.labels:
            errors.append((ln, f"undefined label {h.end}"))
        elif h.start in meth.labels and meth.labels[h.end] < meth.labels[h.start]:
            errors.append((ln, "handler range ends before it starts"))


def check_program(prog: Program, entry_line: int = 0) -> List[Tuple[int, str]]:
    """Cross-reference checks: options, callees, arities, locals, stack depths."""
    from .vm import INTRINSIC_ARITY

    errors: List[Tuple[int, str]] = []
    if not prog.has_method(prog.entry):
        errors.append((entry_line, f"entry method {prog.entry} does not exist"))
    elif prog.method(prog.entry).nparams != 0:
        errors.append((entry_line, "entry method must take no parameters"))
    for cls in prog.classes.values():
        for meth in cls.methods.values():
            for ins in meth.code:
                if ins.op == "GETOPTION" and ins.args[0] not in prog.options:
                    errors.append((ins.line, f"unknown option {ins.args[0]}"))
                elif ins.op == "INVOKE":
                    if not prog.has_method(ins.args[0]):
                        errors.append((ins.line, f"unknown method {ins.args[0]}"))
                    elif prog.method(ins.args[0]).nparams != ins.args[1]:
                        errors.append((ins.line, f"arity mismatch calling {ins.args[0]}"))
                elif ins.op == "INTRINSIC":
                    want = INTRINSIC_ARITY.get(ins.args[0])
                    if want is not None and want != ins.args[1]:
                        errors.append((ins.line, f"intrinsic {ins.args[0]} takes {want} argument(s)"))
                elif ins.op in ("LOAD", "STORE") and ins.args[0] >= meth.nlocals:
                    errors.append((ins.line, f"local {ins.args[0]} out of range (locals {meth.nlocals})"))
                elif ins.op == "NEW" and ins.args[0] not in prog.classes:
                    errors.append((ins.line, f"unknown class {ins.args[0]}"))
            try:
                validate_stack_discipline(meth)
            except AsmError as exc:
                errors.extend(exc.errors)
    return errors


# -- printing ---------------------------------------------------------------


def print_program(prog: Program) -> str:
    out: List[str] = []
    for o in prog.options:
        out.append(f"option {o}")
    for c in prog.constraints:
        out.append(f"constraint {c}")
    out.append(f"entry {prog.entry}")
    for cls in prog.classes.values():
        out.append("")
        out.append(f"class {cls.name} {{")
        for f in cls.fields:
            out.append(f"  field {f}")
        for meth in cls.methods.values():
            out.extend(print_method(meth, indent="  "))
        out.append("}")
    return "\n".join(out) + "\n"


def print_method(meth: MethodDef, indent: str = "") -> List[str]:
    out = [f"{indent}method {meth.name}({meth.nparams}) locals {meth.nlocals} {{"]
    at = meth.labels_at()
    for i, ins in enumerate(meth.code):
        for name in at.get(i, []):
            out.append(f"{indent}{name}:")
        out.append(f"{indent}  {ins.to_text()}")
    for h in meth.handlers:
        out.append(f"{indent}  handler {h.start} {h.end} {h.target}")
    out.append(f"{indent}}}")
    return out


# -- stack discipline -------------------------------------------------------


def successors(meth: MethodDef, i: int) -> List[int]:
    """Normal (non-exceptional) successors of instruction i."""
    ins = meth.code[i]
    if ins.op == "GOTO":
        return [meth.labels[ins.target]]
    if ins.op == "IFTRUE":
        return [meth.labels[ins.target], i + 1]
    if ins.op in ("RETURN", "RETURNVAL", "THROW"):
        return []
    return [i + 1]


def handlers_covering(meth: MethodDef, i: int) -> List[int]:
    return [t for s, e, t in meth.handler_ranges() if s <= i < e]


def validate_stack_discipline(meth: MethodDef) -> List[Optional[int]]:
    """Operand-stack depth before each instruction (None where unreachable)."""
    n = len(meth.code)
    depth: List[Optional[int]] = [None] * n
    errors: List[Tuple[int, str]] = []
    work = [(0, 0)]
    for _, _, t in meth.handler_ranges():
        work.append((t, 1))

    def arrive(j: int, d: int, src_line: int) -> None:
        if j >= n:
            errors.append((src_line, f"control falls off the end of {meth.name}"))
            return
        if depth[j] is None:
            depth[j] = d
            work.append((j, d))
        elif depth[j] != d:
            errors.append((meth.code[j].line, f"inconsistent stack depth at join ({depth[j]} vs {d})"))

    starts = list(work)
    work = []
    for j, d in starts:
        arrive(j, d, 0)
    while work and not errors:
        i, d = work.pop()
        ins = meth.code[i]
        if d < ins.pops():
            errors.append((ins.line, f"stack underflow at {ins.op}"))
            break
        nd = d - ins.pops() + ins.pushes()
        for j in successors(meth, i):
            arrive(j, nd, ins.line)
    if errors:
        raise AsmError(errors)
    return depth


# -- control-flow graph -----------------------------------------------------

COND, UNCOND, EXC = "cond", "uncond", "exc"


@dataclass
class BasicBlock:
    id: int
    start: int
    end: int  # exclusive

    def indices(self) -> range:
        return range(self.start, self.end)


@dataclass
class CFG:
    method: MethodDef
    blocks: List[BasicBlock]
    edges: List[Tuple[int, int, str]]
    block_of: List[int]

    def succs(self, b: int) -> List[Tuple[int, str]]:
        return [(d, k) for s, d, k in self.edges if s == b]

    def preds(self, b: int) -> List[Tuple[int, str]]:
        return [(s, k) for s, d, k in self.edges if d == b]

    def exits(self) -> List[int]:
        return [b.id for b in self.blocks if self.method.code[b.end - 1].op in ("RETURN", "RETURNVAL")]

    def to_networkx(self):
        import networkx as nx

        g = nx.DiGraph()
        g.add_nodes_from(b.id for b in self.blocks)
        for s, d, k in self.edges:
            g.add_edge(s, d, kind=k)
        return g


def build_cfg(meth: MethodDef) -> CFG:
    """Basic blocks over reachable code, with cond/uncond/exc edge labels."""
    depth = validate_stack_discipline(meth)
    n = len(meth.code)
    leaders = {0}
    ranges = meth.handler_ranges()
    for s, e, t in ranges:
        leaders.update((s, e, t))
    for i, ins in enumerate(meth.code):
        if ins.op in BRANCHES:
            leaders.add(meth.labels[ins.target])
        if ins.op in BRANCHES or ins.op in TERMINATORS:
            leaders.add(i + 1)
    cuts = sorted(x for x in leaders if x < n)
    blocks: List[BasicBlock] = []
    block_of = [-1] * n
    for k, start in enumerate(cuts):
        end = cuts[k + 1] if k + 1 < len(cuts) else n
        if depth[start] is None:
            continue
        bid = len(blocks)
        blocks.append(BasicBlock(bid, start, end))
        for i in range(start, end):
            block_of[i] = bid
    edges: List[Tuple[int, int, str]] = []
    seen = set()
    for b in blocks:
        last = b.end - 1
        succ = successors(meth, last)
        kind = COND if meth.code[last].op == "IFTRUE" else UNCOND
        for j in succ:
            key = (b.id, block_of[j])
            if key not in seen:
                seen.add(key)
                edges.append((b.id, block_of[j], kind))
        for s, e, t in ranges:
            if s <= b.start < e:
                key = (b.id, block_of[t])
                if key not in seen:
                    seen.add(key)
                    edges.append((b.id, block_of[t], EXC))
    return CFG(meth, blocks, edges, block_of)

"""Plain stack-machine interpreter.

The interpreter knows nothing about configurations beyond answering
GETOPTION from a concrete assignment.  Transformed programs run on it
unchanged; their variational bookkeeping lives entirely in intrinsics that
are registered from outside.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

from .vir import MethodDef, Program

DEFAULT_FUEL = 10_000_000
MAX_CALL_DEPTH = 2000

__all__ = [
    "VM",
    "VMThrow",
    "VMAbort",
    "ExecutionResult",
    "Obj",
    "Arr",
    "PList",
    "PIter",
    "PSet",
    "INTRINSIC_ARITY",
    "BASE_INTRINSICS",
    "binary_op",
    "neg_op",
    "fmt",
    "truthy",
    "run",
    "DEFAULT_FUEL",
]


class VMThrow(Exception):
    """An exception raised by the interpreted program."""

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message


class VMAbort(Exception):
    """Execution cannot continue (fuel, call depth, barrier violation)."""


class Obj:
    __slots__ = ("cls", "fields")

    def __init__(self, cls: str, fields: Dict[str, Any]) -> None:
        self.cls = cls
        self.fields = fields

    def __repr__(self) -> str:
        return f"<{self.cls}@{id(self) & 0xFFFF:04x}>"


class Arr:
    __slots__ = ("items",)

    def __init__(self, items: List[Any]) -> None:
        self.items = items

    def __repr__(self) -> str:
        return f"<array[{len(self.items)}]@{id(self) & 0xFFFF:04x}>"


class PList:
    __slots__ = ("items",)

    def __init__(self) -> None:
        self.items: List[Any] = []

    def __repr__(self) -> str:
        return f"<VList@{id(self) & 0xFFFF:04x}>"


class PIter:
    __slots__ = ("items", "pos")

    def __init__(self, items: List[Any]) -> None:
        self.items = items
        self.pos = 0

    def __repr__(self) -> str:
        return f"<Iterator@{id(self) & 0xFFFF:04x}>"


class PSet:
    __slots__ = ("items",)

    def __init__(self) -> None:
        self.items: Dict[tuple, Any] = {}

    def __repr__(self) -> str:
        return f"<Set@{id(self) & 0xFFFF:04x}>"


# -- value semantics shared with the variational runtime ----------------------


def fmt(v: Any) -> str:
    if v is None:
        return "null"
    if v is True:
        return "true"
    if v is False:
        return "false"
    if isinstance(v, str):
        return v
    return repr(v)


def truthy(v: Any) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, int):
        return v != 0
    raise VMThrow(f"TypeError: branch on {type(v).__name__}")


def _is_num(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _num(op: str, a: Any, b: Any) -> None:
    if not (_is_num(a) and _is_num(b)):
        if a is None or b is None:
            raise VMThrow("NullPointerException")
        raise VMThrow(f"TypeError: {op} on {type(a).__name__} and {type(b).__name__}")


def value_key(v: Any) -> tuple:
    """Equality key: numbers by numeric value, other primitives by value, objects by identity."""
    if _is_num(v):
        return ("num", v)
    if isinstance(v, (bool, str, type(None))):
        return (type(v).__name__, v)
    return ("ref", id(v))


def _div(a: Any, b: Any) -> Any:
    _num("DIV", a, b)
    if b == 0:
        raise VMThrow("ArithmeticException: / by zero")
    if isinstance(a, int) and isinstance(b, int):
        q = abs(a) // abs(b)
        return q if (a >= 0) == (b >= 0) else -q
    return a / b


def _rem(a: Any, b: Any) -> Any:
    _num("REM", a, b)
    if b == 0:
        raise VMThrow("ArithmeticException: / by zero")
    if isinstance(a, int) and isinstance(b, int):
        r = abs(a) % abs(b)
        return r if a >= 0 else -r
    import math

    return math.fmod(a, b)


def _add(a: Any, b: Any) -> Any:
    _num("ADD", a, b)
    return a + b


def _sub(a: Any, b: Any) -> Any:
    _num("SUB", a, b)
    return a - b


def _mul(a: Any, b: Any) -> Any:
    _num("MUL", a, b)
    return a * b


def _cmp(op: str) -> Callable[[Any, Any], bool]:
    def f(a: Any, b: Any) -> bool:
        if _is_num(a) and _is_num(b) or isinstance(a, str) and isinstance(b, str):
            return a < b if op == "CMPLT" else a > b
        _num(op, a, b)
        return False

    return f


_BINARY: Dict[str, Callable[[Any, Any], Any]] = {
    "ADD": _add,
    "SUB": _sub,
    "MUL": _mul,
    "DIV": _div,
    "REM": _rem,
    "CMPEQ": lambda a, b: value_key(a) == value_key(b),
    "CMPLT": _cmp("CMPLT"),
    "CMPGT": _cmp("CMPGT"),
    "CONCAT": lambda a, b: fmt(a) + fmt(b),
}


def binary_op(op: str, a: Any, b: Any) -> Any:
    return _BINARY[op](a, b)


def neg_op(a: Any) -> Any:
    if isinstance(a, bool):
        return not a
    if not _is_num(a):
        raise VMThrow(f"TypeError: NEG on {type(a).__name__}")
    return -a


# -- base intrinsics ----------------------------------------------------------

Intrinsic = Callable[["VM", List[Any]], Any]


def _need(v: Any, kind: type, what: str) -> Any:
    if v is None:
        raise VMThrow("NullPointerException")
    if not isinstance(v, kind):
        raise VMThrow(f"TypeError: {what} expects {kind.__name__}")
    return v


def _print(vm: "VM", args: List[Any]) -> None:
    vm.output.append(fmt(args[0]))


def _replace(vm: "VM", args: List[Any]) -> str:
    s, a, b = args
    return _need(s, str, "replace").replace(_need(a, str, "replace"), _need(b, str, "replace"))


def _list_get(vm: "VM", args: List[Any]) -> Any:
    lst, idx = _need(args[0], PList, "VList.get"), args[1]
    if not isinstance(idx, int) or isinstance(idx, bool) or not 0 <= idx < len(lst.items):
        raise VMThrow(f"IndexOutOfBoundsException: {fmt(idx)}")
    return lst.items[idx]


def _list_add(vm: "VM", args: List[Any]) -> None:
    _need(args[0], PList, "VList.add").items.append(args[1])


def _iter_next(vm: "VM", args: List[Any]) -> Any:
    it = _need(args[0], PIter, "Iterator.next")
    if it.pos >= len(it.items):
        raise VMThrow("NoSuchElementException")
    it.pos += 1
    return it.items[it.pos - 1]


def _set_add(vm: "VM", args: List[Any]) -> None:
    _need(args[0], PSet, "Set.add").items[value_key(args[1])] = args[1]


BASE_INTRINSICS: Dict[str, Tuple[int, Intrinsic]] = {
    "print": (1, _print),
    "raw_print": (1, _print),
    "replace": (3, _replace),
    "strlen": (1, lambda vm, a: len(_need(a[0], str, "strlen"))),
    "str": (1, lambda vm, a: fmt(a[0])),
    "VList.new": (0, lambda vm, a: PList()),
    "VList.add": (2, _list_add),
    "VList.get": (2, _list_get),
    "VList.size": (1, lambda vm, a: len(_need(a[0], PList, "VList.size").items)),
    "VList.iterator": (1, lambda vm, a: PIter(_need(a[0], PList, "VList.iterator").items)),
    "Iterator.hasNext": (1, lambda vm, a: _need(a[0], PIter, "Iterator.hasNext").pos < len(a[0].items)),
    "Iterator.next": (1, _iter_next),
    # forms produced by the iterator rewrite; in a plain run every element is present
    "Iterator.hasNextAny": (1, lambda vm, a: _need(a[0], PIter, "Iterator.hasNext").pos < len(a[0].items)),
    "Iterator.nextAny": (1, _iter_next),
    "Iterator.present": (1, lambda vm, a: True),
    "Set.new": (0, lambda vm, a: PSet()),
    "Set.add": (2, _set_add),
    "Set.contains": (2, lambda vm, a: value_key(a[1]) in _need(a[0], PSet, "Set.contains").items),
}

INTRINSIC_ARITY: Dict[str, int] = {name: n for name, (n, _) in BASE_INTRINSICS.items()}


# -- interpreter --------------------------------------------------------------


@dataclass
class ExecutionResult:
    value: Any
    output: List[str]
    steps: int
    status: str  # "normal" | "exception" | "abort"
    message: Optional[str] = None

    def status_text(self) -> str:
        return self.status if self.message is None else f"{self.status}({self.message})"


class _Frame:
    __slots__ = ("meth", "code", "labels", "handlers", "pc", "locals", "stack")

    def __init__(self, meth: MethodDef, decoded: "_Decoded", args: List[Any]) -> None:
        self.meth = meth
        self.code = decoded.code
        self.handlers = decoded.handlers
        self.pc = 0
        self.locals = list(args) + [None] * (meth.nlocals - len(args))
        self.stack: List[Any] = []


class _Decoded:
    __slots__ = ("code", "handlers")

    def __init__(self, meth: MethodDef) -> None:
        code = []
        for ins in meth.code:
            a = ins.args
            if ins.op in ("GOTO", "IFTRUE"):
                a = (meth.labels[ins.target],)
            code.append((ins.op, a[0] if a else None, a[1] if len(a) > 1 else None))
        self.code = code
        self.handlers = meth.handler_ranges()


Tracer = Callable[[str, MethodDef, int], None]


class VM:
    """Executes one program run; create a fresh instance per run."""

    def __init__(
        self,
        program: Program,
        config: Optional[Mapping[str, bool]] = None,
        intrinsics: Optional[Dict[str, Tuple[int, Intrinsic]]] = None,
        fuel: int = DEFAULT_FUEL,
        tracer: Optional[Tracer] = None,
    ) -> None:
        self.program = program
        self.config = config
        self.intrinsics = dict(BASE_INTRINSICS)
        if intrinsics:
            self.intrinsics.update(intrinsics)
        self.fuel = fuel
        self.tracer = tracer
        self.output: List[str] = []
        self.steps = 0
        self._decoded: Dict[str, _Decoded] = {}

    def _decode(self, meth: MethodDef) -> _Decoded:
        d = self._decoded.get(meth.qualname)
        if d is None:
            d = self._decoded[meth.qualname] = _Decoded(meth)
        return d

    def run(self, entry: Optional[str] = None, args: Tuple[Any, ...] = ()) -> ExecutionResult:
        try:
            value = self._execute(self.program.method(entry or self.program.entry), list(args))
        except VMThrow as exc:
            return ExecutionResult(None, self.output, self.steps, "exception", exc.message)
        except VMAbort as exc:
            return ExecutionResult(None, self.output, self.steps, "abort", str(exc))
        return ExecutionResult(value, self.output, self.steps, "normal")

    def _execute(self, meth: MethodDef, args: List[Any]) -> Any:
        frames: List[_Frame] = [_Frame(meth, self._decode(meth), args)]
        tracer = self.tracer
        program = self.program
        if tracer:
            tracer("enter", meth, 0)
        f = frames[-1]
        while True:
            self.steps += 1
            if self.steps > self.fuel:
                raise VMAbort("fuel exhausted")
            pc = f.pc
            op, a, b = f.code[pc]
            if tracer:
                tracer("step", f.meth, pc)
            f.pc = pc + 1
            stack = f.stack
            try:
                if op == "LOAD":
                    stack.append(f.locals[a])
                elif op == "STORE":
                    f.locals[a] = stack.pop()
                elif op == "CONST":
                    stack.append(a)
                elif op == "GOTO":
                    f.pc = a
                elif op == "IFTRUE":
                    if truthy(stack.pop()):
                        f.pc = a
                elif op == "INTRINSIC":
                    entry = self.intrinsics.get(a)
                    if entry is None:
                        raise VMAbort(f"unknown intrinsic {a}")
                    if b:
                        call_args = stack[-b:]
                        del stack[-b:]
                    else:
                        call_args = []
                    stack.append(entry[1](self, call_args))
                elif op in _BINARY:
                    y = stack.pop()
                    x = stack.pop()
                    stack.append(_BINARY[op](x, y))
                elif op == "DUP":
                    stack.append(stack[-1])
                elif op == "POP":
                    stack.pop()
                elif op == "SWAP":
                    stack[-1], stack[-2] = stack[-2], stack[-1]
                elif op == "NEG":
                    stack.append(neg_op(stack.pop()))
                elif op == "INVOKE":
                    callee = program.method(a)
                    if b:
                        call_args = stack[-b:]
                        del stack[-b:]
                    else:
                        call_args = []
                    if len(frames) >= MAX_CALL_DEPTH:
                        raise VMAbort("call depth exceeded")
                    f = _Frame(callee, self._decode(callee), call_args)
                    frames.append(f)
                    if tracer:
                        tracer("enter", callee, 0)
                elif op == "RETURN" or op == "RETURNVAL":
                    value = stack.pop() if op == "RETURNVAL" else None
                    if tracer:
                        tracer("exit", f.meth, pc)
                    frames.pop()
                    if not frames:
                        return value
                    f = frames[-1]
                    f.stack.append(value)
                elif op == "GETOPTION":
                    if self.config is None:
                        raise VMAbort("GETOPTION without a configuration")
                    stack.append(bool(self.config[a]))
                elif op == "NEW":
                    stack.append(Obj(a, {name: None for name in program.classes[a].fields}))
                elif op == "GETFIELD":
                    obj = stack.pop()
                    stack.append(_field_obj(obj, a).fields[a])
                elif op == "PUTFIELD":
                    v = stack.pop()
                    _field_obj(stack.pop(), a).fields[a] = v
                elif op == "NEWARRAY":
                    stack.append(new_array(stack.pop()))
                elif op == "ARRLOAD":
                    idx = stack.pop()
                    arr = stack.pop()
                    stack.append(array_load(arr, idx))
                elif op == "ARRSTORE":
                    v = stack.pop()
                    idx = stack.pop()
                    array_store(stack.pop(), idx, v)
                elif op == "ARRLEN":
                    stack.append(len(_need(stack.pop(), Arr, "ARRLEN").items))
                elif op == "THROW":
                    msg = stack.pop()
                    raise VMThrow(fmt(msg))
                else:
                    raise VMAbort(f"unknown opcode {op}")
            except VMThrow as exc:
                # unwind to the nearest covering handler
                while True:
                    target = _find_handler(f, f.pc - 1)
                    if target is not None:
                        f.stack = [exc.message]
                        f.pc = target
                        if tracer:
                            tracer("catch", f.meth, target)
                        break
                    if tracer:
                        tracer("exit", f.meth, f.pc - 1)
                    frames.pop()
                    if not frames:
                        raise
                    f = frames[-1]


def _find_handler(f: _Frame, pc: int) -> Optional[int]:
    for s, e, t in f.handlers:
        if s <= pc < e:
            return t
    return None


def _field_obj(obj: Any, name: str) -> Obj:
    obj = _need(obj, Obj, "field access")
    if name not in obj.fields:
        raise VMThrow(f"NoSuchFieldError: {name}")
    return obj


def new_array(n: Any) -> Arr:
    if not isinstance(n, int) or isinstance(n, bool):
        raise VMThrow("TypeError: array size")
    if n < 0:
        raise VMThrow(f"NegativeArraySizeException: {n}")
    return Arr([None] * n)


def _index(arr: Any, idx: Any) -> Arr:
    arr = _need(arr, Arr, "array access")
    if not isinstance(idx, int) or isinstance(idx, bool) or not 0 <= idx < len(arr.items):
        raise VMThrow(f"ArrayIndexOutOfBoundsException: {fmt(idx)}")
    return arr


def array_load(arr: Any, idx: Any) -> Any:
    return _index(arr, idx).items[idx]


def array_store(arr: Any, idx: Any, v: Any) -> None:
    _index(arr, idx).items[idx] = v


def run(program: Program, config: Mapping[str, bool], fuel: int = DEFAULT_FUEL,
        tracer: Optional[Tracer] = None) -> ExecutionResult:
    """Run the program's entry method under one concrete configuration."""
    missing = [o for o in program.options if o not in config]
    if missing:
        raise ValueError(f"configuration does not assign {', '.join(missing)}")
    return VM(program, config, fuel=fuel, tracer=tracer).run()

"""Variational execution of transformed programs, with restarts after exceptions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

from . import condval as cv
from .condval import CondValue
from .formula import FALSE, Formula, count_models, evaluate, is_satisfiable
from .runtime import BarrierPolicy, MethodTrace, Runtime
from .transform import TransformedProgram, transform_program
from .vir import Program
from .vm import DEFAULT_FUEL, VM, fmt


@dataclass
class RunRecord:
    """One pass of the transformed program over part of the configuration space."""

    index: int
    root: Formula  # configurations still unexplored when the run started
    context: Formula  # configurations this run is responsible for
    status: str
    value: Optional[CondValue]
    message: Optional[str]
    output: List[Tuple[str, Formula]]
    trace: List[Tuple[str, int, Formula]]
    method_traces: List[MethodTrace]
    steps: int
    disjoint_checks: int = 0


@dataclass
class ConfigOutcome:
    status: str
    value: Any
    message: Optional[str]
    output: List[str]

    def render(self) -> Tuple[str, str, Optional[str], Tuple[str, ...]]:
        return self.status, render_value(self.value), self.message, tuple(self.output)


@dataclass
class VariationalResult:
    program: TransformedProgram
    feature_model: Formula
    runs: List[RunRecord] = field(default_factory=list)

    @property
    def value(self) -> CondValue:
        """Return value of every configuration that terminated normally."""
        leaves = []
        domain = FALSE
        for r in self.runs:
            if r.status == "normal" and r.value is not None:
                leaves.extend((c & r.context, x) for c, x in r.value.leaves())
                domain = domain | r.context
        return cv.from_leaves([(c, x) for c, x in leaves if is_satisfiable(c)], domain)

    def run_for(self, cfg: Mapping[str, bool]) -> RunRecord:
        for r in self.runs:
            if evaluate(r.context, cfg):
                return r
        raise KeyError(f"no run covers configuration {dict(cfg)}")

    def outcome(self, cfg: Mapping[str, bool]) -> ConfigOutcome:
        """What a plain run of the source program under `cfg` should produce."""
        r = self.run_for(cfg)
        out = [text for text, ctx in r.output if evaluate(ctx, cfg)]
        if r.status == "normal":
            return ConfigOutcome("normal", cv.select(r.value, cfg), None, out)
        return ConfigOutcome(r.status, None, r.message, out)

    def block_trace(self, cfg: Mapping[str, bool]) -> List[Tuple[str, int]]:
        r = self.run_for(cfg)
        return [(m, v) for m, v, ctx in r.trace if evaluate(ctx, cfg)]

    @property
    def statuses(self) -> List[str]:
        return [r.status for r in self.runs]


def render_value(v: Any) -> str:
    """Configuration-independent rendering; objects compare by shape, not identity."""
    from .vm import Arr, Obj

    if isinstance(v, Obj):
        return f"{v.cls}{{" + ", ".join(f"{k}={render_value(x)}" for k, x in sorted(v.fields.items())) + "}"
    if isinstance(v, Arr):
        return "[" + ", ".join(render_value(x) for x in v.items) + "]"
    if isinstance(v, (bool, int, float, str)) or v is None:
        return repr(v) if isinstance(v, str) else fmt(v)
    return f"<{type(v).__name__}>"


def run_variational(
    program: Program | TransformedProgram,
    feature_model: Optional[Formula] = None,
    fuel: int = DEFAULT_FUEL,
    assertions: bool = True,
    policy: Optional[BarrierPolicy] = None,
    no_write_under: bool = False,
    max_runs: Optional[int] = None,
) -> VariationalResult:
    """Execute all configurations allowed by the feature model.

    A run that raises covers only the configurations that raised; the rest are
    explored by further runs until nothing is left.
    """
    tp = program if isinstance(program, TransformedProgram) else transform_program(program)
    fmodel = tp.program.feature_model if feature_model is None else feature_model
    result = VariationalResult(tp, fmodel)
    remaining = fmodel
    limit = max_runs if max_runs is not None else count_models(fmodel, tp.program.options) + 1
    while is_satisfiable(remaining):
        if len(result.runs) >= limit:
            raise RuntimeError(f"exceeded {limit} restarts")
        rt = Runtime(remaining, policy, assertions, len(result.runs), no_write_under)
        vm = VM(tp.program, {}, rt.intrinsics(), fuel)
        res = vm.run()
        ctx = rt.G
        result.runs.append(RunRecord(
            len(result.runs), remaining, ctx, res.status,
            cv.from_leaves(cv.lift(res.value).leaves(), ctx) if res.status == "normal" else None,
            res.message, rt.output, rt.trace, rt.method_traces, res.steps, rt.disjoint_checks))
        remaining = remaining & ~ctx
    return result

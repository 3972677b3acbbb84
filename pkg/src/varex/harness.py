"""Differential testing, sharing statistics and the bundled benchmarks."""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from . import align
from .analysis import GUARANTEED_OPTIMAL
from .engine import ConfigOutcome, VariationalResult, run_variational
from .formula import DEFAULT_SEED, Formula, count_models, enumerate_configs, evaluate, is_satisfiable
from .transform import TransformedProgram, transform_program
from .vir import Program, parse_program
from .vm import DEFAULT_FUEL, VM

DEFAULT_CAP = 4096
BENCHMARKS = ("wordpress", "getweather", "fig2-loop", "fig5-stack", "gpl-mini", "elevator-mini", "email-mini")

Config = Dict[str, bool]


def default_seed() -> int:
    env = os.environ.get("VAREX_SEED")
    return int(env) if env else DEFAULT_SEED


def benchmark_names() -> List[str]:
    return list(BENCHMARKS)


def benchmark_source(name: str) -> str:
    return (resources.files("varex") / "benchmarks" / f"{name}.vasm").read_text()


def load_benchmark(name: str) -> Program:
    return parse_program(benchmark_source(name))


# -- plain runs -------------------------------------------------------------------


@dataclass
class PlainRun:
    outcome: ConfigOutcome
    blocks: List[Tuple[str, int]]  # (method, VBlock id) for every VBlock entered


def plain_run(tp: TransformedProgram, cfg: Mapping[str, bool], fuel: int = DEFAULT_FUEL) -> PlainRun:
    """Run the normalized source under one configuration, recording VBlock entries."""
    heads = {q: p.head_of for q, p in tp.plans.items()}
    blocks: List[Tuple[str, int]] = []

    def tracer(event: str, meth, pc: int) -> None:
        if event == "step":
            vb = heads[meth.qualname].get(pc)
            if vb is not None:
                blocks.append((meth.qualname, vb))

    r = VM(tp.normalized, dict(cfg), fuel=fuel, tracer=tracer).run()
    return PlainRun(ConfigOutcome(r.status, r.value, r.message, list(r.output)), blocks)


def _visible(tp: TransformedProgram, blocks: Sequence[Tuple[str, int]]) -> List[Tuple[str, int]]:
    return [(m, v) for m, v in blocks if v not in tp.plans[m].excluded]


# -- differential testing -------------------------------------------------------


@dataclass
class ConfigCheck:
    config: Config
    ok: bool
    divergence: str = ""


@dataclass
class DiffReport:
    name: str
    options: List[str]
    configs: int  # number of configurations checked
    valid: int  # valid configurations in total
    sampled: bool
    checks: List[ConfigCheck]
    runs: int
    variational_blocks: int
    plain_blocks: int
    plain_seconds: float = 0.0
    variational_seconds: float = 0.0
    minimal_failure: Optional[Config] = None
    seed: int = DEFAULT_SEED

    @property
    def passed(self) -> int:
        return sum(c.ok for c in self.checks)

    @property
    def failed(self) -> int:
        return len(self.checks) - self.passed

    @property
    def ok(self) -> bool:
        return self.failed == 0


def compare(tp: TransformedProgram, var: VariationalResult, cfg: Mapping[str, bool],
            plain: Optional[PlainRun] = None, fuel: int = DEFAULT_FUEL) -> str:
    """First divergence between the plain run and the projected variational run, or ''."""
    plain = plain or plain_run(tp, cfg, fuel)
    want = plain.outcome.render()
    got = var.outcome(cfg).render()
    for what, a, b in zip(("status", "value", "message"), want, got):
        if a != b:
            return f"{what}: plain {a} vs variational {b}"
    if want[3] != got[3]:
        for k, (a, b) in enumerate(zip(want[3], got[3])):
            if a != b:
                return f"output line {k}: plain {a!r} vs variational {b!r}"
        return f"output length: plain {len(want[3])} vs variational {len(got[3])}"
    pb, vb = _visible(tp, plain.blocks), _visible(tp, var.block_trace(cfg))
    if pb != vb:
        k = next((i for i, (a, b) in enumerate(zip(pb, vb)) if a != b), min(len(pb), len(vb)))
        return f"block sequence at {k}: plain {pb[k:k + 3]} vs variational {vb[k:k + 3]}"
    return ""


def shrink(failing: Config, fails, feature_model: Formula) -> Config:
    """Greedily flip options to False while the configuration stays valid and failing."""
    cur = dict(failing)
    changed = True
    while changed:
        changed = False
        for name in sorted(cur):
            if not cur[name]:
                continue
            cand = dict(cur)
            cand[name] = False
            if evaluate(feature_model, cand) and fails(cand):
                cur = cand
                changed = True
    return cur


def diff_test(
    program: Program,
    name: str = "",
    cap: int = DEFAULT_CAP,
    fuel: int = DEFAULT_FUEL,
    seed: Optional[int] = None,
    assertions: bool = True,
    no_write_under: bool = False,
) -> DiffReport:
    """Compare one variational run with plain runs of every (or a sample of) configuration."""
    seed = default_seed() if seed is None else seed
    tp = transform_program(program)
    fmodel = program.feature_model
    t0 = time.perf_counter()
    var = run_variational(tp, fuel=fuel, assertions=assertions, no_write_under=no_write_under)
    t1 = time.perf_counter()
    valid = count_models(fmodel, program.options)
    configs = enumerate_configs(program.options, fmodel, cap=cap, seed=seed)
    checks: List[ConfigCheck] = []
    plain_blocks = 0
    t_plain = 0.0
    for cfg in configs:
        s = time.perf_counter()
        pr = plain_run(tp, cfg, fuel)
        t_plain += time.perf_counter() - s
        plain_blocks += len(pr.blocks)
        msg = compare(tp, var, cfg, pr, fuel)
        checks.append(ConfigCheck(dict(cfg), not msg, msg))
    report = DiffReport(name, list(program.options), len(configs), valid, len(configs) < valid, checks,
                        len(var.runs), sum(len(r.trace) for r in var.runs), plain_blocks, t_plain, t1 - t0,
                        seed=seed)
    first = next((c for c in checks if not c.ok), None)
    if first is not None:
        report.minimal_failure = shrink(first.config, lambda c: bool(compare(tp, var, c, fuel=fuel)), fmodel)
    return report


# -- sharing statistics -------------------------------------------------------


@dataclass
class ExecutionVerdict:
    method: str
    run: int
    guaranteed: bool
    verdict: str
    length: int
    max_pair: Optional[int]


@dataclass
class SharingReport:
    name: str
    guaranteed_methods: int
    no_guarantee_methods: int
    executions: List[ExecutionVerdict] = field(default_factory=list)

    def count(self, verdict: str) -> int:
        return sum(e.verdict == verdict for e in self.executions)

    @property
    def guaranteed_executions(self) -> int:
        return sum(e.guaranteed for e in self.executions)

    @property
    def violations(self) -> List[ExecutionVerdict]:
        """Executions of guaranteed methods not judged optimal."""
        return [e for e in self.executions if e.guaranteed and e.verdict != align.OPTIMAL]

    def check_arithmetic(self) -> None:
        total = self.count(align.OPTIMAL) + self.count(align.NON_OPTIMAL) + self.count(align.UNKNOWN)
        if total != len(self.executions):
            raise AssertionError("sharing report columns do not sum to the execution count")


def sharing_stats(program: Program, name: str = "", pair_limit: int = align.DEFAULT_PAIR_LIMIT,
                  fuel: int = DEFAULT_FUEL, var: Optional[VariationalResult] = None) -> SharingReport:
    """Static guarantee per method plus an alignment verdict per recorded method execution."""
    var = var or run_variational(program, fuel=fuel)
    tp = var.program
    guaranteed = {q for q, p in tp.plans.items() if p.verdict == GUARANTEED_OPTIMAL}
    report = SharingReport(name, len(guaranteed), len(tp.plans) - len(guaranteed))
    for r in var.runs:
        for mt in r.method_traces:
            if mt.method not in tp.plans:
                continue
            # entries from before the run's restriction narrowed may lie entirely in other runs
            region = mt.mctx & r.context
            entries = [(v, c) for v, c in mt.entries if is_satisfiable(c & region)]
            res = align.check_optimal(entries, region, pair_limit)
            report.executions.append(ExecutionVerdict(mt.method, r.index, mt.method in guaranteed, res.verdict,
                                                      res.length, res.max_pair))
    report.check_arithmetic()
    return report


# -- reports ----------------------------------------------------------------------

TSV_COLUMNS = (
    "benchmark", "options", "valid_configs", "checked", "sampled", "seed", "pass", "fail", "runs",
    "variational_blocks", "plain_blocks", "methods_guaranteed", "methods_no_guarantee",
    "executions", "executions_guaranteed", "observed_optimal", "observed_non_optimal", "unknown",
    "non_optimal_or_unknown",
)


def report_row(d: DiffReport, s: SharingReport) -> List[object]:
    return [d.name, len(d.options), d.valid, d.configs, str(d.sampled).lower(), d.seed, d.passed, d.failed, d.runs,
            d.variational_blocks, d.plain_blocks, s.guaranteed_methods, s.no_guarantee_methods,
            len(s.executions), s.guaranteed_executions, s.count(align.OPTIMAL), s.count(align.NON_OPTIMAL),
            s.count(align.UNKNOWN), s.count(align.NON_OPTIMAL) + s.count(align.UNKNOWN)]


def report_tsv(rows: Sequence[Tuple[DiffReport, SharingReport]]) -> str:
    lines = ["\t".join(TSV_COLUMNS)]
    for d, s in rows:
        lines.append("\t".join(str(x) for x in report_row(d, s)))
    return "\n".join(lines) + "\n"


def report_json(rows: Sequence[Tuple[DiffReport, SharingReport]], timing: bool = False) -> str:
    out = []
    for d, s in rows:
        dd = asdict(d)
        if not timing:
            dd.pop("plain_seconds")
            dd.pop("variational_seconds")
        out.append({"diff": dd, "sharing": asdict(s)})
    return json.dumps(out, indent=2, sort_keys=True) + "\n"


def run_suite(names: Optional[Sequence[str]] = None, cap: int = DEFAULT_CAP, seed: Optional[int] = None,
              assertions: bool = True, fuel: int = DEFAULT_FUEL) -> List[Tuple[DiffReport, SharingReport]]:
    rows = []
    for n in names or BENCHMARKS:
        prog = load_benchmark(n)
        d = diff_test(prog, n, cap=cap, seed=seed, assertions=assertions, fuel=fuel)
        s = sharing_stats(prog, n, fuel=fuel)
        rows.append((d, s))
    return rows

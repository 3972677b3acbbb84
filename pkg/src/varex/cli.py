"""Command line interface: `varex run | transform | blocks | diff | align | report`."""

from __future__ import annotations

import argparse
import os
import sys
from typing import Dict, List, Optional, Sequence

from . import align, harness
from .analysis import analyze_method, classify_sharing_guarantee
from .engine import run_variational
from .formula import is_satisfiable, parse_formula
from .runtime import BarrierPolicy, EngineAssertion, Runtime
from .transform import ENTRY_CLASS, normalize_method, transform_program
from .vir import AsmError, Program, parse_program, print_program
from .vm import DEFAULT_FUEL, VM, fmt

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_ASSERT = 0, 1, 2, 3


class UsageError(Exception):
    pass


def load_program(arg: str) -> Program:
    """A path to a `.vasm` file or the name of a bundled benchmark."""
    if os.path.exists(arg):
        with open(arg) as fh:
            return parse_program(fh.read())
    if arg in harness.BENCHMARKS:
        return harness.load_benchmark(arg)
    raise UsageError(f"no such file or benchmark: {arg}")


def parse_config(text: str, options: Sequence[str]) -> Dict[str, bool]:
    cfg = {o: False for o in options}
    for part in filter(None, (p.strip() for p in text.split(","))):
        name, sep, val = part.partition("=")
        if name not in cfg:
            raise UsageError(f"unknown option {name}")
        if sep and val.lower() not in ("1", "0", "true", "false", "t", "f", "on", "off"):
            raise UsageError(f"bad value for {name}: {val}")
        cfg[name] = not sep or val.lower() in ("1", "true", "t", "on")
    return cfg


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def _policy(path: Optional[str]) -> Optional[BarrierPolicy]:
    if not path:
        return None
    with open(path) as fh:
        return BarrierPolicy.from_text(fh.read())


# -- subcommands --------------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    prog = load_program(args.file)
    if args.config is not None and args.variational:
        raise UsageError("--config and --variational are exclusive")
    if args.config is not None:
        res = VM(prog, parse_config(args.config, prog.options), fuel=args.fuel).run()
        for line in res.output:
            print(line)
        print(f"[{res.status_text()}] {fmt(res.value) if res.status == 'normal' else ''}".rstrip())
        return EXIT_OK
    if ENTRY_CLASS in prog.classes:
        # already transformed: run it as is on the plain interpreter
        rt = Runtime(prog.feature_model, _policy(args.policy), args.assertions)
        res = VM(prog, {}, rt.intrinsics(), args.fuel).run()
        for text, ctx in rt.output:
            print(f"{text}\t[{ctx.to_text()}]")
        value = res.value.to_text() if hasattr(res.value, "to_text") else fmt(res.value)
        print(f"[{res.status_text()}] {value}")
        if args.trace:
            _write_trace(args.trace, [(m, [(v, c) for mm, v, c in rt.trace if mm == m])
                                      for m in dict.fromkeys(m for m, _, _ in rt.trace)])
        return EXIT_OK
    var = run_variational(prog, fuel=args.fuel, assertions=args.assertions, policy=_policy(args.policy))
    for r in var.runs:
        for text, ctx in r.output:
            print(f"{text}\t[{(ctx & r.context).to_text()}]")
    for r in var.runs:
        detail = r.value.to_text() if r.status == "normal" else r.message
        print(f"run {r.index} [{r.status}] under {r.context.to_text()}: {detail}")
    if args.trace:
        sections = []
        for r in var.runs:
            for mt in r.method_traces:
                region = mt.mctx & r.context
                entries = [(v, c & region) for v, c in mt.entries if is_satisfiable(c & region)]
                sections.append((f"{mt.method} run {r.index}", entries))
        _write_trace(args.trace, sections)
    return EXIT_OK


def _write_trace(path: str, sections) -> None:
    with open(path, "w") as fh:
        for title, entries in sections:
            fh.write(f"# {title}\n")
            for vb, ctx in entries:
                fh.write(f"{vb} {ctx.to_text()}\n")


def cmd_transform(args: argparse.Namespace) -> int:
    tp = transform_program(load_program(args.file))
    text = print_program(tp.program)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_blocks(args: argparse.Namespace) -> int:
    prog = load_program(args.file)
    for meth in prog.methods():
        if args.method and meth.qualname != args.method:
            continue
        norm = normalize_method(meth)
        cfg, lift, vblocks = analyze_method(norm)
        print(f"method {meth.qualname} {classify_sharing_guarantee(vblocks)}")
        for v in vblocks:
            ranges = ",".join(f"{cfg.blocks[b].start}-{cfg.blocks[b].end - 1}" for b in v.members)
            succs = " ".join(f"b{t}{'' if k == 'uncond' else ':' + k}" for t, k in v.succs)
            flags = "".join(f" {f}" for f, on in (("entry", v.entry), ("exit", v.exit), ("handler", v.handler)) if on)
            print(f"  b{v.id} [{ranges}]{flags} -> {succs}".rstrip())
    return EXIT_OK


def cmd_diff(args: argparse.Namespace) -> int:
    prog = load_program(args.file)
    rep = harness.diff_test(prog, args.file, cap=args.cap, fuel=args.fuel, seed=args.seed,
                            assertions=args.assertions)
    for c in rep.checks:
        if not c.ok:
            print(f"FAIL {c.config}: {c.divergence}")
    sampled = f" (sampled from {rep.valid}, seed {rep.seed})" if rep.sampled else ""
    print(f"{rep.passed}/{rep.configs} configurations match{sampled}; {rep.runs} variational run(s); "
          f"{rep.variational_blocks} vs {rep.plain_blocks} block executions")
    if rep.minimal_failure is not None:
        print(f"minimal failing configuration: {rep.minimal_failure}")
    return EXIT_OK if rep.ok else EXIT_FAIL


def cmd_align(args: argparse.Namespace) -> int:
    prog = load_program(args.program)
    fmodel = prog.feature_model
    with open(args.trace) as fh:
        sections = align.parse_trace(fh.read())
    for title, entries in sections:
        t = [(vb, parse_formula(text)) for vb, text in entries]
        res = align.check_optimal(t, fmodel, args.pair_limit)
        label = title or "trace"
        print(f"{label}\t{res.verdict}\t{res.length}\t{'-' if res.max_pair is None else res.max_pair}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    names = args.benchmarks or list(harness.BENCHMARKS)
    unknown = [n for n in names if n not in harness.BENCHMARKS]
    if unknown:
        raise UsageError(f"unknown benchmark(s): {', '.join(unknown)}")
    rows = harness.run_suite(names, cap=args.cap, seed=args.seed, assertions=args.assertions, fuel=args.fuel)
    tsv = harness.report_tsv(rows)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(tsv)
    else:
        sys.stdout.write(tsv)
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(harness.report_json(rows, timing=args.timing))
    bad = any(not d.ok or s.violations for d, s in rows)
    return EXIT_FAIL if bad else EXIT_OK


# -- argument parsing ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="varex", description="Variational execution for .vasm programs.")
    sub = p.add_subparsers(dest="command")

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--fuel", type=int, default=DEFAULT_FUEL, help="step limit per run")
        sp.add_argument("--assertions", type=_on_off, default=True, metavar="on|off",
                        help="runtime disjointness and context checks")

    sp = sub.add_parser("run", help="run under one configuration or variationally")
    sp.add_argument("file")
    sp.add_argument("--config", help="comma separated OPTION or OPTION=true|false")
    sp.add_argument("--variational", action="store_true", help="one run for all configurations (default)")
    sp.add_argument("--trace", help="write VBlock traces to this file")
    sp.add_argument("--policy", help="barrier policy file")
    common(sp)
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("transform", help="print the transformed program")
    sp.add_argument("file")
    sp.add_argument("-o", "--output")
    sp.set_defaults(fn=cmd_transform)

    sp = sub.add_parser("blocks", help="show VBlocks and the static sharing verdict")
    sp.add_argument("file")
    sp.add_argument("--method")
    sp.set_defaults(fn=cmd_blocks)

    def sampling(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--cap", type=int, default=harness.DEFAULT_CAP, help="maximum configurations to check")
        sp.add_argument("--seed", type=int, default=None, help="sampling seed (default: $VAREX_SEED or built in)")

    sp = sub.add_parser("diff", help="compare against plain runs of every configuration")
    sp.add_argument("file")
    sampling(sp)
    common(sp)
    sp.set_defaults(fn=cmd_diff)

    sp = sub.add_parser("align", help="judge recorded traces for optimal sharing")
    sp.add_argument("trace")
    sp.add_argument("--program", required=True)
    sp.add_argument("--pair-limit", type=int, default=align.DEFAULT_PAIR_LIMIT)
    sp.set_defaults(fn=cmd_align)

    sp = sub.add_parser("report", help="differential and sharing report over bundled benchmarks")
    sp.add_argument("benchmarks", nargs="*")
    sp.add_argument("-o", "--output", help="TSV output file")
    sp.add_argument("--json", help="also write a structured report")
    sp.add_argument("--timing", action="store_true", help="include wall times in the structured report")
    sampling(sp)
    common(sp)
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"varex: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AsmError as exc:
        print(f"varex: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EngineAssertion as exc:
        print(f"varex: engine assertion: {exc}", file=sys.stderr)
        return EXIT_ASSERT


if __name__ == "__main__":
    sys.exit(main())

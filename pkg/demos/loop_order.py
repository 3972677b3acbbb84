"""A loop with a branch inside: whichever order the branch targets get, some input shares badly."""

from pathlib import Path

from varex import align, run_variational
from varex.vir import parse_program

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

for name in ("order-natural-a", "order-natural-b", "order-swapped-a", "order-swapped-b"):
    prog = parse_program((FIXTURES / f"{name}.vasm").read_text())
    var = run_variational(prog)
    run0 = var.runs[0]
    mt = next(t for t in run0.method_traces if t.method == "Order.loop")
    region = mt.mctx & run0.context
    res = align.check_optimal(mt.entries, region)
    trace = " ".join(f"b{v}" for v, _ in mt.entries)
    print(f"{name:<16} {res.verdict:<12} length {res.length} (best pairwise merge {res.max_pair})  {trace}")

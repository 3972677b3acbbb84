"""One variational run of the blog page versus eight plain runs."""

from varex import harness, run_variational
from varex.formula import enumerate_configs
from varex.vm import run

prog = harness.load_benchmark("wordpress")
var = run_variational(prog)

print("variational output:")
for text, ctx in var.runs[0].output:
    print(f"  {text:<60} {ctx}")
print("page:", var.value)

print("\nplain runs:")
for cfg in enumerate_configs(prog.options, prog.feature_model):
    on = ",".join(k for k, v in cfg.items() if v) or "-"
    print(f"  {on:<26} {run(prog, cfg).value}")

rep = harness.diff_test(prog, "wordpress")
print(f"\n{rep.passed}/{rep.configs} configurations agree; "
      f"{rep.variational_blocks} block executions instead of {rep.plain_blocks}")

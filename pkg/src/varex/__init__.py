"""Variational execution for a small stack bytecode.

A program is rewritten once so that a single run on the plain interpreter
covers every configuration of its boolean options.
"""

from .align import NON_OPTIMAL, OPTIMAL, UNKNOWN, check_optimal, expand_traces, merge_length
from .analysis import GUARANTEED_OPTIMAL, NO_GUARANTEE, analyze_method, classify_sharing_guarantee
from .condval import Choice, CondValue, One
from .engine import VariationalResult, run_variational
from .formula import FALSE, TRUE, Formula, parse_formula
from .harness import diff_test, load_benchmark, sharing_stats
from .transform import transform_program
from .vir import Program, parse_program, print_program
from .vm import VM, ExecutionResult

__version__ = "0.1.0"

__all__ = [
    "NON_OPTIMAL", "OPTIMAL", "UNKNOWN", "check_optimal", "expand_traces", "merge_length",
    "GUARANTEED_OPTIMAL", "NO_GUARANTEE", "analyze_method", "classify_sharing_guarantee",
    "Choice", "CondValue", "One", "VariationalResult", "run_variational",
    "FALSE", "TRUE", "Formula", "parse_formula", "diff_test", "load_benchmark", "sharing_stats",
    "transform_program", "Program", "parse_program", "print_program", "VM", "ExecutionResult",
]

"""Bundled SMT solver for quantifier-free linear integer arithmetic.

Layers: an s-expression reader (sexpr), a CDCL SAT core (sat), an
order-encoding compiler from QF_LIA to CNF (compile), and an incremental
session plus script interpreter (session). The wizbook-smt command exposes
file-based solving on the same output conventions as external solvers.
"""

from .compile import Compiler, CompileError, UnsupportedError
from .sat import JITTED, Solver
from .session import Session, run_script
from .sexpr import SexprError, from_int, int_const, parse_all, parse_one, to_text

__all__ = [
    "Compiler",
    "CompileError",
    "UnsupportedError",
    "JITTED",
    "Solver",
    "Session",
    "run_script",
    "SexprError",
    "from_int",
    "int_const",
    "parse_all",
    "parse_one",
    "to_text",
]

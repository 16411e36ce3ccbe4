"""Incremental solving sessions and a script interpreter.

A Session accepts declarations and assertions, answers check-sat, and serves
model values. Assertions are monotone: clauses are only ever added, so every
check after the first reuses all learned clauses. Integer variables compile
lazily: an assertion mentioning a variable without finite inferred bounds is
buffered, and the next check scans the buffer for bounding comparisons before
encoding.
"""

from __future__ import annotations

from typing import Iterable, Optional, Union

from .compile import Compiler, CompileError, UnsupportedError
from .sat import Solver
from .sexpr import Sexpr, from_int, parse_all, to_text

IGNORED_COMMANDS = frozenset({"set-logic", "set-info", "set-option"})


class Session:
    def __init__(self, max_conflicts: int = -1):
        self.solver = Solver()
        self.compiler = Compiler(self.solver)
        self.max_conflicts = max_conflicts
        self._pending: list[Sexpr] = []
        self.status: Optional[str] = None

    # -- building --------------------------------------------------------------

    def declare(self, name: str, sort: str) -> None:
        self.compiler.declare(name, sort)

    def assert_sexpr(self, e: Sexpr) -> None:
        self.status = None
        if all(self.compiler.is_finalized(v) for v in self._int_vars(e)):
            self.compiler.assert_formula(e)
        else:
            self._pending.append(e)

    def _int_vars(self, e: Sexpr, out: Optional[set] = None) -> set:
        if out is None:
            out = set()
        if isinstance(e, str):
            if self.compiler.sorts.get(e) == "Int":
                out.add(e)
        else:
            for c in e:
                self._int_vars(c, out)
        return out

    # -- solving ----------------------------------------------------------------

    def check(self) -> str:
        if self._pending:
            for e in self._pending:
                self.compiler.scan_bounds(e)
            for name, sort in self.compiler.sorts.items():
                if sort == "Int" and not self.compiler.is_finalized(name):
                    self.compiler.finalize_var(name)
            pending, self._pending = self._pending, []
            for e in pending:
                self.compiler.assert_formula(e)
        self.status = self.solver.solve(self.max_conflicts)
        return self.status

    def model_value(self, name: str) -> Union[int, bool]:
        if self.status != "sat":
            raise CompileError("no model: last check was not sat")
        sort = self.compiler.sorts.get(name)
        if sort == "Int":
            return self.compiler.model_int(name)
        if sort == "Bool":
            return self.compiler.model_bool(name)
        raise CompileError(f"undeclared symbol {name}")

    def get_value(self, names: Iterable[str]) -> list[tuple[str, Union[int, bool]]]:
        return [(n, self.model_value(n)) for n in names]

    # -- script interface --------------------------------------------------------

    def execute(self, cmd: Sexpr) -> Optional[str]:
        """Run one command; return the line it prints, if any."""
        if not isinstance(cmd, tuple) or not cmd or not isinstance(cmd[0], str):
            raise UnsupportedError(f"malformed command: {to_text(cmd)}")
        op = cmd[0]
        if op in IGNORED_COMMANDS or op == "exit":
            return None
        if op == "declare-fun":
            if len(cmd) != 4 or cmd[2] != ():
                raise UnsupportedError("only zero-arity declare-fun is supported")
            self.declare(cmd[1], cmd[3])
            return None
        if op == "declare-const":
            if len(cmd) != 3:
                raise UnsupportedError("malformed declare-const")
            self.declare(cmd[1], cmd[2])
            return None
        if op == "assert":
            if len(cmd) != 2:
                raise UnsupportedError("malformed assert")
            self.assert_sexpr(cmd[1])
            return None
        if op == "check-sat":
            return self.check()
        if op == "get-value":
            if len(cmd) != 2 or not isinstance(cmd[1], tuple):
                raise UnsupportedError("malformed get-value")
            if self.status != "sat":
                return '(error "model is not available")'
            parts = []
            for name in cmd[1]:
                if not isinstance(name, str):
                    raise UnsupportedError("get-value takes plain symbols")
                val = self.model_value(name)
                rendered = ("true" if val else "false") if isinstance(val, bool) \
                    else to_text(from_int(val))
                parts.append(f"({name} {rendered})")
            return "(" + " ".join(parts) + ")"
        raise UnsupportedError(f"unsupported command: {op}")


def run_script(text: str, max_conflicts: int = -1) -> list[str]:
    """Interpret an SMT-LIB script; return the lines it would print."""
    session = Session(max_conflicts=max_conflicts)
    out = []
    for cmd in parse_all(text):
        line = session.execute(cmd)
        if line is not None:
            out.append(line)
        if isinstance(cmd, tuple) and cmd and cmd[0] == "exit":
            break
    return out

"""Command line entry point: solve an SMT-LIB script file.

Prints what the script asks for (check-sat results, get-value bindings) on
stdout, one line per command, matching the conventions external solvers use,
so callers can swap this binary for another solver without parser changes.
"""

from __future__ import annotations

import argparse
import sys

from .compile import CompileError
from .session import run_script
from .sexpr import SexprError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="wizbook-smt",
        description="solve a QF_LIA SMT-LIB script with the bundled solver",
    )
    parser.add_argument("file", help="script path, or - for stdin")
    parser.add_argument(
        "--max-conflicts",
        type=int,
        default=-1,
        help="conflict budget per check-sat; -1 means unbounded",
    )
    args = parser.parse_args(argv)
    if args.file == "-":
        text = sys.stdin.read()
    else:
        try:
            with open(args.file, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            print(f'(error "{exc}")')
            return 3
    try:
        for line in run_script(text, max_conflicts=args.max_conflicts):
            print(line)
    except (SexprError, CompileError) as exc:
        print(f'(error "{exc}")')
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())

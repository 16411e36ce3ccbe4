"""S-expression reader/writer for the SMT-LIB v2 subset used here.

Expressions parse to nested tuples of strings; tuples are hashable, which
the compiler relies on for structural memoization.
"""

from __future__ import annotations

from typing import Iterator, Union

Sexpr = Union[str, tuple]


class SexprError(ValueError):
    pass


def tokenize(text: str) -> Iterator[str]:
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c in " \t\r\n":
            i += 1
        elif c == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif c in "()":
            yield c
            i += 1
        elif c == '"':
            j = i + 1
            while j < n and text[j] != '"':
                j += 1
            if j >= n:
                raise SexprError("unterminated string literal")
            yield text[i : j + 1]
            i = j + 1
        else:
            j = i
            while j < n and text[j] not in ' \t\r\n();"':
                j += 1
            yield text[i:j]
            i = j


def parse_all(text: str) -> list[Sexpr]:
    """Parse a whole script into a list of top-level expressions."""
    out: list[Sexpr] = []
    stack: list[list] = []
    for tok in tokenize(text):
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if not stack:
                raise SexprError("unbalanced ')'")
            done = tuple(stack.pop())
            if stack:
                stack[-1].append(done)
            else:
                out.append(done)
        else:
            if stack:
                stack[-1].append(tok)
            else:
                out.append(tok)
    if stack:
        raise SexprError("unbalanced '('")
    return out


def parse_one(text: str) -> Sexpr:
    exprs = parse_all(text)
    if len(exprs) != 1:
        raise SexprError(f"expected exactly one expression, got {len(exprs)}")
    return exprs[0]


def to_text(e: Sexpr) -> str:
    if isinstance(e, str):
        return e
    return "(" + " ".join(to_text(x) for x in e) + ")"


def int_const(e: Sexpr) -> int:
    """Parse an integer constant, accepting the (- k) form solvers print."""
    if isinstance(e, str):
        if e.lstrip("-").isdigit():
            return int(e)
        raise SexprError(f"not an integer constant: {e}")
    if len(e) == 2 and e[0] == "-":
        return -int_const(e[1])
    raise SexprError(f"not an integer constant: {to_text(e)}")


def from_int(v: int) -> Sexpr:
    """Render an integer the SMT-LIB way: negatives as (- k)."""
    return str(v) if v >= 0 else ("-", str(-v))

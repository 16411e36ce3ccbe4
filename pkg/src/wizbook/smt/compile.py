"""Compile quantifier-free linear integer arithmetic to CNF.

Every integer variable must have finite bounds derivable from asserted
single-variable comparisons (the scripts this package emits always assert
them). Integers get the order encoding (literals for x <= v); atoms compile
to clauses three ways by shape:

  - single variable: equivalence with one order literal;
  - two variables with unit coefficients: ladder clauses linking the two
    order encodings (the common case: differences and sums of coordinates);
  - anything else (more variables, or 0/1 terms from constant-branch ite):
    a layered decision-diagram expansion over partial sums, one auxiliary
    literal per reachable (layer, remaining budget) node.

Formulas Tseitin-encode with structural caching; literals are signed ints
as in the sat module's public API.
"""

from __future__ import annotations

from typing import Optional

from .sat import Solver
from .sexpr import Sexpr, to_text

BOOL_OPS = frozenset(
    {"not", "and", "or", "=>", "xor", "=", "distinct", "<", "<=", ">", ">="}
)


class CompileError(ValueError):
    pass


class UnsupportedError(CompileError):
    """Input outside the supported QF_LIA fragment."""


def _affine_add(items: dict, const: int, other: tuple[dict, int], sign: int):
    oi, oc = other
    for k, c in oi.items():
        items[k] = items.get(k, 0) + sign * c
    return items, const + sign * oc


class Compiler:
    def __init__(self, solver: Solver):
        self.solver = solver
        t = solver.new_var()
        solver.add_clause([t])
        self.true = t
        self.false = -t
        self.sorts: dict[str, str] = {}
        self.bool_lit: dict[str, int] = {}
        self.bounds: dict[str, Optional[list[int]]] = {}
        self.order: dict[str, dict[int, int]] = {}
        self.value_cache: dict[tuple[str, int], int] = {}
        self.atom_cache: dict[tuple, int] = {}
        self.form_cache: dict[Sexpr, int] = {}

    # -- declarations -------------------------------------------------------

    def declare(self, name: str, sort: str) -> None:
        if name in self.sorts:
            raise CompileError(f"duplicate declaration of {name}")
        if sort == "Bool":
            self.sorts[name] = "Bool"
            self.bool_lit[name] = self.solver.new_var()
        elif sort == "Int":
            self.sorts[name] = "Int"
            self.bounds[name] = None
        else:
            raise UnsupportedError(f"unsupported sort {sort}")

    # -- bounds inference ---------------------------------------------------

    def _try_linear(self, e: Sexpr) -> Optional[tuple[dict, int]]:
        """Affine parse using only numerals, symbols, +, -, *; no side
        effects (safe during the bounds scan)."""
        if isinstance(e, str):
            if e.lstrip("-").isdigit():
                return {}, int(e)
            if self.sorts.get(e) == "Int":
                return {e: 1}, 0
            return None
        if not e:
            return None
        op = e[0]
        if op == "+" or (op == "-" and len(e) >= 2):
            first = self._try_linear(e[1])
            if first is None:
                return None
            items, const = dict(first[0]), first[1]
            if op == "-" and len(e) == 2:
                return {k: -c for k, c in items.items()}, -const
            for arg in e[2:]:
                sub = self._try_linear(arg)
                if sub is None:
                    return None
                items, const = _affine_add(items, const, sub, 1 if op == "+" else -1)
            return items, const
        if op == "*" and len(e) == 3:
            a, b = self._try_linear(e[1]), self._try_linear(e[2])
            if a is None or b is None:
                return None
            if not a[0]:
                k, t = a[1], b
            elif not b[0]:
                k, t = b[1], a
            else:
                return None
            return {v: k * c for v, c in t[0].items()}, k * t[1]
        return None

    def scan_bounds(self, e: Sexpr) -> None:
        """Harvest single-variable comparisons from top-level conjunctions."""
        if not isinstance(e, tuple) or not e:
            return
        op = e[0]
        if op == "and":
            for c in e[1:]:
                self.scan_bounds(c)
            return
        if op not in ("<", "<=", ">", ">=", "=") or len(e) != 3:
            return
        lhs, rhs = self._try_linear(e[1]), self._try_linear(e[2])
        if lhs is None or rhs is None:
            return
        items, const = _affine_add(dict(lhs[0]), lhs[1], rhs, -1)
        items = {k: c for k, c in items.items() if c != 0}
        if len(items) != 1:
            return
        (name, a), = items.items()
        if op == "=":
            rels = [("<=", 0), (">=", 0)]
        else:
            rels = [{"<": ("<=", -1), "<=": ("<=", 0),
                     ">": (">=", 1), ">=": (">=", 0)}[op]]
        for rel, shift in rels:
            c = -const + shift
            b = self.bounds.get(name)
            if b is None:
                b = self.bounds[name] = [None, None]
            if (rel == "<=") == (a > 0):
                hi = c // a  # floor division handles both signs
                b[1] = hi if b[1] is None else min(b[1], hi)
            else:
                lo = -((-c) // a)  # ceil
                b[0] = lo if b[0] is None else max(b[0], lo)

    def finalize_var(self, name: str) -> None:
        b = self.bounds.get(name)
        if b is None or b[0] is None or b[1] is None:
            raise CompileError(
                f"integer variable {name} has no finite bounds; assert them"
            )
        lo, hi = b
        if lo > hi:
            self.solver.add_clause([])  # empty domain: unsatisfiable
            lo = hi = 0
            self.bounds[name] = [lo, hi]
        lits: dict[int, int] = {}
        prev = None
        for v in range(lo, hi):
            lits[v] = self.solver.new_var()
            if prev is not None:
                self.solver.add_clause([-prev, lits[v]])
            prev = lits[v]
        self.order[name] = lits

    def is_finalized(self, name: str) -> bool:
        return name in self.order

    # -- order and value literals --------------------------------------------

    def le_lit(self, name: str, v: int) -> int:
        lo, hi = self.bounds[name]
        if v < lo:
            return self.false
        if v >= hi:
            return self.true
        return self.order[name][v]

    def signed_le_lit(self, name: str, sign: int, k: int) -> int:
        """Literal for sign*x <= k."""
        if sign == 1:
            return self.le_lit(name, k)
        return -self.le_lit(name, -k - 1)

    def value_lit(self, name: str, v: int) -> int:
        lo, hi = self.bounds[name]
        if v < lo or v > hi:
            return self.false
        if lo == hi:
            return self.true
        if v == lo:
            return self.le_lit(name, lo)
        if v == hi:
            return -self.le_lit(name, hi - 1)
        key = (name, v)
        if key in self.value_cache:
            return self.value_cache[key]
        e = self.solver.new_var()
        a, bm1 = self.le_lit(name, v), self.le_lit(name, v - 1)
        self.solver.add_clause([-e, a])
        self.solver.add_clause([-e, -bm1])
        self.solver.add_clause([e, -a, bm1])
        self.value_cache[key] = e
        return e

    # -- terms ----------------------------------------------------------------

    def compile_term(self, e: Sexpr) -> tuple[dict, int]:
        """Affine normal form: {basis: coef}, constant. Basis keys are
        ("v", int var name) or ("b", positive literal) for 0/1 terms."""
        if isinstance(e, str):
            if e.lstrip("-").isdigit():
                return {}, int(e)
            sort = self.sorts.get(e)
            if sort == "Int":
                return {("v", e): 1}, 0
            if sort == "Bool":
                raise UnsupportedError(f"boolean {e} used as an integer term")
            raise CompileError(f"undeclared symbol {e}")
        if not e:
            raise CompileError("empty term")
        op = e[0]
        if op == "+":
            items: dict = {}
            const = 0
            for arg in e[1:]:
                items, const = _affine_add(items, const, self.compile_term(arg), 1)
            return items, const
        if op == "-":
            if len(e) == 2:
                items, const = self.compile_term(e[1])
                return {k: -c for k, c in items.items()}, -const
            items, const = self.compile_term(e[1])
            items = dict(items)
            for arg in e[2:]:
                items, const = _affine_add(items, const, self.compile_term(arg), -1)
            return items, const
        if op == "*":
            if len(e) != 3:
                raise UnsupportedError("only binary * is supported")
            a, b = self.compile_term(e[1]), self.compile_term(e[2])
            if not a[0]:
                k, t = a[1], b
            elif not b[0]:
                k, t = b[1], a
            else:
                raise UnsupportedError(f"nonlinear product: {to_text(e)}")
            return {v: k * c for v, c in t[0].items()}, k * t[1]
        if op == "ite":
            cond = self.compile_formula(e[1])
            t_items, t_const = self.compile_term(e[2])
            f_items, f_const = self.compile_term(e[3])
            diff, dconst = _affine_add(dict(t_items), t_const, (f_items, f_const), -1)
            if any(c != 0 for c in diff.values()):
                raise UnsupportedError(
                    "ite branches must differ by a constant: " + to_text(e)
                )
            items, const = dict(f_items), f_const
            return self._add_bool_term(items, const, cond, dconst)
        raise UnsupportedError(f"unsupported term operator {op}")

    def _add_bool_term(self, items: dict, const: int, lit: int, coef: int):
        if coef == 0:
            return items, const
        if lit == self.true:
            return items, const + coef
        if lit == self.false:
            return items, const
        if lit < 0:  # [not b] = 1 - [b]
            const += coef
            coef = -coef
            lit = -lit
        key = ("b", lit)
        items[key] = items.get(key, 0) + coef
        return items, const

    # -- atoms ----------------------------------------------------------------

    def atom_le(self, items: dict, C: int) -> int:
        items = {k: c for k, c in items.items() if c != 0}
        if not items:
            return self.true if 0 <= C else self.false
        key = (tuple(sorted(items.items())), C)
        if key in self.atom_cache:
            return self.atom_cache[key]
        # constant fold against variable ranges
        lo_sum, hi_sum = 0, 0
        for k, c in items.items():
            klo, khi = self._basis_range(k)
            lo_sum += min(c * klo, c * khi)
            hi_sum += max(c * klo, c * khi)
        if hi_sum <= C:
            self.atom_cache[key] = self.true
            return self.true
        if lo_sum > C:
            self.atom_cache[key] = self.false
            return self.false
        lit = self.solver.new_var()
        self.atom_cache[key] = lit
        ks = list(items.items())
        if len(ks) == 1 and ks[0][0][0] == "v":
            # a*x <= C  <=>  x <= floor(C/a) (a>0)  or  x >= ceil(C/a) (a<0)
            (_, name), a = ks[0]
            if a > 0:
                eq = self.le_lit(name, C // a)
            else:
                eq = -self.le_lit(name, _ceil_div(C, a) - 1)
            self.solver.add_clause([-lit, eq])
            self.solver.add_clause([lit, -eq])
        elif len(ks) == 2 and all(
            k[0] == "v" and abs(c) == 1 for k, c in ks
        ):
            (k1, s1), (k2, s2) = ks
            self._ladder(lit, k1[1], s1, k2[1], s2, C)
            self._ladder(-lit, k1[1], -s1, k2[1], -s2, -C - 1)
        else:
            self._mdd(lit, ks, C)
            self._mdd(-lit, [(k, -c) for k, c in ks], -C - 1)
        return lit

    def _basis_range(self, k: tuple) -> tuple[int, int]:
        if k[0] == "v":
            lo, hi = self.bounds[k[1]]
            return lo, hi
        return 0, 1

    def _ladder(self, guard: int, x: str, sx: int, y: str, sy: int, C: int):
        """guard -> (sx*x + sy*y <= C), unit coefficients."""
        lox, hix = self.bounds[x]
        for v in range(lox, hix + 1):
            if sx == 1:
                cond = self.le_lit(x, v - 1)  # unless x >= v
                ybound = C - v
            else:
                cond = -self.le_lit(x, v)  # unless x <= v
                ybound = C + v
            yl = self.signed_le_lit(y, sy, ybound)
            if yl == self.true or cond == self.true:
                continue
            clause = [-guard]
            if cond != self.false:
                clause.append(cond)
            if yl != self.false:
                clause.append(yl)
            self.solver.add_clause(clause)

    def _mdd(self, guard: int, ks: list, C: int):
        """guard -> (sum <= C) via a layered diagram over partial sums."""
        sels: list[list[int]] = []
        vals: list[list[int]] = []
        for k, c in ks:
            if k[0] == "v":
                lo, hi = self.bounds[k[1]]
                sels.append([self.value_lit(k[1], v) for v in range(lo, hi + 1)])
                vals.append([c * v for v in range(lo, hi + 1)])
            else:
                sels.append([-k[1], k[1]])
                vals.append([0, c])
        n = len(ks)
        suf_min = [0] * (n + 1)
        suf_max = [0] * (n + 1)
        for t in range(n - 1, -1, -1):
            suf_min[t] = suf_min[t + 1] + min(vals[t])
            suf_max[t] = suf_max[t + 1] + max(vals[t])
        memo: dict[tuple[int, int], int] = {}

        def rec(t: int, rem: int) -> int:
            if rem >= suf_max[t]:
                return self.true
            if rem < suf_min[t]:
                return self.false
            key = (t, rem)
            if key in memo:
                return memo[key]
            node = self.solver.new_var()
            memo[key] = node
            for sel, f in zip(sels[t], vals[t]):
                if sel == self.false:
                    continue
                child = rec(t + 1, rem - f)
                if child == self.true:
                    continue
                if child == self.false:
                    if sel == self.true:
                        self.solver.add_clause([-node])
                    else:
                        self.solver.add_clause([-node, -sel])
                else:
                    if sel == self.true:
                        self.solver.add_clause([-node, child])
                    else:
                        self.solver.add_clause([-node, -sel, child])
            return node

        root = rec(0, C)
        if root == self.true:
            return
        if root == self.false:
            self.solver.add_clause([-guard])
        else:
            self.solver.add_clause([-guard, root])

    # -- formulas ---------------------------------------------------------------

    def sort_of(self, e: Sexpr) -> str:
        if isinstance(e, str):
            if e in ("true", "false"):
                return "Bool"
            if e.lstrip("-").isdigit():
                return "Int"
            s = self.sorts.get(e)
            if s is None:
                raise CompileError(f"undeclared symbol {e}")
            return s
        op = e[0]
        if op in BOOL_OPS:
            return "Bool"
        if op == "ite":
            return self.sort_of(e[2])
        return "Int"

    def compile_formula(self, e: Sexpr) -> int:
        if isinstance(e, str):
            if e == "true":
                return self.true
            if e == "false":
                return self.false
            lit = self.bool_lit.get(e)
            if lit is None:
                raise CompileError(f"not a boolean symbol: {e}")
            return lit
        if e in self.form_cache:
            return self.form_cache[e]
        lit = self._compile_formula(e)
        self.form_cache[e] = lit
        return lit

    def _compile_formula(self, e: Sexpr) -> int:
        op = e[0]
        if op == "not":
            return -self.compile_formula(e[1])
        if op == "and":
            return self._gate(True, [self.compile_formula(c) for c in e[1:]])
        if op == "or":
            return self._gate(False, [self.compile_formula(c) for c in e[1:]])
        if op == "=>":
            lits = [-self.compile_formula(c) for c in e[1:-1]]
            lits.append(self.compile_formula(e[-1]))
            return self._gate(False, lits)
        if op == "xor":
            if len(e) != 3:
                raise UnsupportedError("only binary xor")
            return -self._iff(self.compile_formula(e[1]), self.compile_formula(e[2]))
        if op == "ite":
            c = self.compile_formula(e[1])
            t = self.compile_formula(e[2])
            f = self.compile_formula(e[3])
            return self._gate(True, [self._gate(False, [-c, t]),
                                     self._gate(False, [c, f])])
        if op == "=":
            if self.sort_of(e[1]) == "Bool":
                if len(e) != 3:
                    raise UnsupportedError("only binary boolean =")
                return self._iff(self.compile_formula(e[1]),
                                 self.compile_formula(e[2]))
            return self._int_chain(e, "=")
        if op == "distinct":
            lits = []
            for i in range(1, len(e)):
                for j in range(i + 1, len(e)):
                    lits.append(-self._int_eq(e[i], e[j]))
            return self._gate(True, lits)
        if op in ("<", "<=", ">", ">="):
            return self._int_chain(e, op)
        raise UnsupportedError(f"unsupported operator {op}")

    def _int_chain(self, e: Sexpr, op: str) -> int:
        parts = []
        for a, b in zip(e[1:], e[2:]):
            parts.append(self._int_cmp(a, b, op))
        return parts[0] if len(parts) == 1 else self._gate(True, parts)

    def _int_cmp(self, a: Sexpr, b: Sexpr, op: str) -> int:
        if op == "=":
            return self._int_eq(a, b)
        if op in (">", ">="):
            a, b = b, a
            op = "<" if op == ">" else "<="
        ta = self.compile_term(a)
        items, const = _affine_add(dict(ta[0]), ta[1], self.compile_term(b), -1)
        C = -const - (1 if op == "<" else 0)
        return self.atom_le(items, C)

    def _int_eq(self, a: Sexpr, b: Sexpr) -> int:
        le = self._int_cmp(a, b, "<=")
        ge = self._int_cmp(b, a, "<=")
        return self._gate(True, [le, ge])

    def _gate(self, is_and: bool, lits: list[int]) -> int:
        """Tseitin AND/OR with constant folding."""
        absorb = self.false if is_and else self.true
        neutral = self.true if is_and else self.false
        out = []
        for l in lits:
            if l == absorb:
                return absorb
            if l != neutral:
                out.append(l)
        if not out:
            return neutral
        if len(out) == 1:
            return out[0]
        g = self.solver.new_var()
        if is_and:
            for l in out:
                self.solver.add_clause([-g, l])
            self.solver.add_clause([g] + [-l for l in out])
        else:
            for l in out:
                self.solver.add_clause([g, -l])
            self.solver.add_clause([-g] + list(out))
        return g

    def _iff(self, a: int, b: int) -> int:
        if a == self.true:
            return b
        if a == self.false:
            return -b
        if b == self.true:
            return a
        if b == self.false:
            return -a
        g = self.solver.new_var()
        self.solver.add_clause([-g, -a, b])
        self.solver.add_clause([-g, a, -b])
        self.solver.add_clause([g, a, b])
        self.solver.add_clause([g, -a, -b])
        return g

    # -- top-level assertions ------------------------------------------------

    def assert_formula(self, e: Sexpr) -> None:
        """Assert with clause-level peepholes for the common shapes."""
        if isinstance(e, tuple) and e:
            op = e[0]
            if op == "and":
                for c in e[1:]:
                    self.assert_formula(c)
                return
            if op == "or":
                self._assert_clause([self.compile_formula(c) for c in e[1:]])
                return
            if op == "=>":
                lits = [-self.compile_formula(c) for c in e[1:-1]]
                lits.append(self.compile_formula(e[-1]))
                self._assert_clause(lits)
                return
            if op == "not":
                self._assert_clause([-self.compile_formula(e[1])])
                return
        self._assert_clause([self.compile_formula(e)])

    def _assert_clause(self, lits: list[int]) -> None:
        out = []
        for l in lits:
            if l == self.true:
                return
            if l != self.false:
                out.append(l)
        self.solver.add_clause(out)

    # -- model reading ---------------------------------------------------------

    def model_int(self, name: str) -> int:
        lo, hi = self.bounds[name]
        for v in range(lo, hi):
            if self.solver.value(abs(self.order[name][v])) == (self.order[name][v] > 0):
                return v
        return hi

    def model_bool(self, name: str) -> bool:
        lit = self.bool_lit[name]
        return self.solver.value(abs(lit)) == (lit > 0)


def _ceil_div(a: int, b: int) -> int:
    return -((-a) // b)

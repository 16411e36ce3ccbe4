"""Bundled SMT solver tests: s-expressions, the CDCL core, the order-encoding
compiler, incremental sessions, the script interpreter, and the CLI.

Oracles: a brute-force CNF evaluator for the SAT core and a brute-force
integer-box enumerator plus a direct s-expression evaluator for QF_LIA.
"""
import itertools
import random
import subprocess
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wizbook.smt import (
    JITTED,
    CompileError,
    Session,
    SexprError,
    Solver,
    UnsupportedError,
    from_int,
    int_const,
    parse_all,
    parse_one,
    run_script,
    to_text,
)


# ------------------------------------------------------------------- oracles

def cnf_models(n_vars, clauses):
    """All satisfying assignments of a CNF, as frozensets of true variables."""
    out = set()
    for bits in itertools.product([False, True], repeat=n_vars):
        val = dict(zip(range(1, n_vars + 1), bits))
        if all(any(val[abs(l)] == (l > 0) for l in c) for c in clauses):
            out.add(frozenset(v for v, b in val.items() if b))
    return out


def eval_sexpr(e, env):
    """Direct evaluator for the compiler's QF_LIA subset."""
    if isinstance(e, str):
        if e in env:
            return env[e]
        if e == "true":
            return True
        if e == "false":
            return False
        return int(e)
    op = e[0]
    args = e[1:]
    if op == "+":
        return sum(eval_sexpr(a, env) for a in args)
    if op == "-":
        vals = [eval_sexpr(a, env) for a in args]
        return -vals[0] if len(vals) == 1 else vals[0] - sum(vals[1:])
    if op == "*":
        return eval_sexpr(args[0], env) * eval_sexpr(args[1], env)
    if op == "ite":
        return eval_sexpr(args[1 if eval_sexpr(args[0], env) else 2], env)
    if op in ("<", "<=", ">", ">="):
        cmp = {"<": int.__lt__, "<=": int.__le__,
               ">": int.__gt__, ">=": int.__ge__}[op]
        vals = [eval_sexpr(a, env) for a in args]
        return all(cmp(u, v) for u, v in zip(vals, vals[1:]))
    if op == "=":
        vals = [eval_sexpr(a, env) for a in args]
        return all(v == vals[0] for v in vals)
    if op == "distinct":
        vals = [eval_sexpr(a, env) for a in args]
        return len(set(vals)) == len(vals)
    if op == "not":
        return not eval_sexpr(args[0], env)
    if op == "and":
        return all(eval_sexpr(a, env) for a in args)
    if op == "or":
        return any(eval_sexpr(a, env) for a in args)
    if op == "=>":
        vals = [eval_sexpr(a, env) for a in args]
        return any(not v for v in vals[:-1]) or vals[-1]
    if op == "xor":
        return eval_sexpr(args[0], env) != eval_sexpr(args[1], env)
    raise AssertionError(f"evaluator has no case for {op}")


def box_models(int_vars, bool_vars, formula):
    """All models of a formula over given integer boxes and booleans."""
    names = list(int_vars) + list(bool_vars)
    ranges = [range(lo, hi + 1) for lo, hi in int_vars.values()]
    ranges += [(False, True)] * len(bool_vars)
    out = []
    for combo in itertools.product(*ranges):
        env = dict(zip(names, combo))
        if eval_sexpr(formula, env):
            out.append(env)
    return out


# ------------------------------------------------------------------- sexpr

def test_parse_roundtrip_examples():
    text = "(assert (<= (+ x (* 2 y)) (- 3)))"
    e = parse_one(text)
    assert e == ("assert", ("<=", ("+", "x", ("*", "2", "y")), ("-", "3")))
    assert to_text(e) == text


def test_parse_comments_and_whitespace():
    script = """
    ; a comment line
    (check-sat) ; trailing comment
      (exit)
    """
    assert parse_all(script) == [("check-sat",), ("exit",)]


def test_parse_string_literals_kept_whole():
    e = parse_one('(set-info :source "taxi grid (walls)")')
    assert e[2] == '"taxi grid (walls)"'


@pytest.mark.parametrize("bad", ["(", ")", "(a))", "(a (b)", '("unterminated'])
def test_parse_errors(bad):
    with pytest.raises(SexprError):
        parse_all(bad)


def test_parse_one_rejects_multiple():
    with pytest.raises(SexprError):
        parse_one("(a) (b)")


def test_int_const_forms():
    assert int_const("7") == 7
    assert int_const("-7") == -7
    assert int_const(("-", "7")) == -7
    assert from_int(-7) == ("-", "7")
    assert from_int(7) == "7"
    with pytest.raises(SexprError):
        int_const("x")


sexpr_atoms = st.one_of(
    st.sampled_from(["x", "y", "up", "<=", "0", "42", "-3"]),
)
sexpr_trees = st.recursive(
    sexpr_atoms, lambda inner: st.tuples(inner, inner) | st.tuples(inner), max_leaves=12
)


@given(sexpr_trees)
@settings(max_examples=150, deadline=None)
def test_sexpr_text_roundtrip(e):
    assert parse_one(to_text(e)) == e


# ------------------------------------------------------------------- SAT core

def test_jitted_flag_is_bool():
    assert isinstance(JITTED, bool)


def test_empty_clause_unsat():
    s = Solver()
    s.add_clause([])
    assert s.solve() == "unsat"


def test_unit_chain_propagates():
    s = Solver()
    vs = [s.new_var() for _ in range(5)]
    s.add_clause([vs[0]])
    for a, b in zip(vs, vs[1:]):
        s.add_clause([-a, b])
    assert s.solve() == "sat"
    assert all(s.value(v) for v in vs)


def test_simple_sat_model():
    s = Solver()
    a, b, c = (s.new_var() for _ in range(3))
    clauses = [[a, b], [-a, c], [-b, -c]]
    for cl in clauses:
        s.add_clause(cl)
    assert s.solve() == "sat"
    model = {v: s.value(v) for v in (a, b, c)}
    assert all(any(model[abs(l)] == (l > 0) for l in cl) for cl in clauses)


def test_tautology_and_duplicate_literals():
    s = Solver()
    a, b = s.new_var(), s.new_var()
    s.add_clause([a, -a])      # tautology: no constraint
    s.add_clause([b, b, b])    # collapses to a unit
    assert s.solve() == "sat"
    assert s.value(b)


def pigeonhole(s, holes):
    """n+1 pigeons into n holes: classic unsatisfiable family."""
    pigeons = holes + 1
    var = [[s.new_var() for _ in range(holes)] for _ in range(pigeons)]
    for p in range(pigeons):
        s.add_clause([var[p][h] for h in range(holes)])
    for h in range(holes):
        for p1 in range(pigeons):
            for p2 in range(p1 + 1, pigeons):
                s.add_clause([-var[p1][h], -var[p2][h]])


def test_pigeonhole_unsat():
    s = Solver()
    pigeonhole(s, 4)
    assert s.solve() == "unsat"


def test_conflict_budget_returns_unknown():
    s = Solver()
    pigeonhole(s, 6)
    assert s.solve(max_conflicts=1) == "unknown"
    assert s.solve() == "unsat"  # budget lifted: same solver finishes


def test_incremental_model_enumeration_matches_bruteforce():
    rnd = random.Random(11)
    for _ in range(25):
        n = rnd.randint(3, 7)
        clauses = []
        for _ in range(rnd.randint(2, 3 * n)):
            width = rnd.randint(1, 3)
            vs = rnd.sample(range(1, n + 1), min(width, n))
            clauses.append([v if rnd.random() < 0.5 else -v for v in vs])
        expected = cnf_models(n, clauses)

        s = Solver()
        for _ in range(n):
            s.new_var()
        for cl in clauses:
            s.add_clause(cl)
        found = set()
        while s.solve() == "sat":
            model = frozenset(v for v in range(1, n + 1) if s.value(v))
            assert model not in found, "solver repeated a model"
            assert model in expected, "solver produced a non-model"
            found.add(model)
            s.add_clause([-v if v in model else v for v in range(1, n + 1)])
        assert found == expected


def test_random_cnf_agrees_with_bruteforce():
    rnd = random.Random(5)
    for _ in range(150):
        n = rnd.randint(2, 10)
        clauses = []
        for _ in range(rnd.randint(1, 4 * n)):
            width = rnd.randint(1, 4)
            vs = rnd.sample(range(1, n + 1), min(width, n))
            clauses.append([v if rnd.random() < 0.5 else -v for v in vs])
        expected = cnf_models(n, clauses)

        s = Solver()
        for _ in range(n):
            s.new_var()
        for cl in clauses:
            s.add_clause(cl)
        status = s.solve()
        assert status == ("sat" if expected else "unsat")
        if status == "sat":
            model = {v: s.value(v) for v in range(1, n + 1)}
            assert all(
                any(model[abs(l)] == (l > 0) for l in cl) for cl in clauses
            )


# ------------------------------------------------------- compiler via Session

def checked(session):
    status = session.check()
    return status


def test_bounds_from_simple_comparisons():
    s = Session()
    s.declare("x", "Int")
    s.assert_sexpr(parse_one("(and (>= x 2) (<= x 5))"))
    assert s.check() == "sat"
    assert 2 <= s.model_value("x") <= 5


def test_bounds_from_strict_scaled_and_negated_forms():
    s = Session()
    for v in ("x", "y", "z"):
        s.declare(v, "Int")
    # x: 0 < x < 4 ; y: 2y <= 7 and y >= -1 ; z: -z <= -2 (z >= 2), z <= 3
    s.assert_sexpr(parse_one("(and (> x 0) (< x 4))"))
    s.assert_sexpr(parse_one("(and (<= (* 2 y) 7) (>= y (- 1)))"))
    s.assert_sexpr(parse_one("(and (<= (- 0 z) (- 2)) (<= z 3))"))
    assert s.check() == "sat"
    assert 1 <= s.model_value("x") <= 3
    assert -1 <= s.model_value("y") <= 3
    assert 2 <= s.model_value("z") <= 3


def test_equality_pins_value():
    s = Session()
    s.declare("x", "Int")
    s.assert_sexpr(parse_one("(= x (- 4))"))
    assert s.check() == "sat"
    assert s.model_value("x") == -4


def test_empty_domain_is_unsat():
    s = Session()
    s.declare("x", "Int")
    s.assert_sexpr(parse_one("(and (>= x 5) (<= x 3))"))
    assert s.check() == "unsat"


def test_unbounded_variable_raises():
    s = Session()
    s.declare("x", "Int")
    s.assert_sexpr(parse_one("(> x 0)"))  # lower bound only: no finite box
    with pytest.raises(CompileError, match="bounds"):
        s.check()


def test_scaled_equality_infers_tight_bounds():
    s = Session()
    s.declare("x", "Int")
    s.assert_sexpr(parse_one("(= (+ x x) 6)"))  # pins x = 3 on its own
    assert s.check() == "sat"
    assert s.model_value("x") == 3


def test_bool_variables_and_connectives():
    s = Session()
    s.declare("p", "Bool")
    s.declare("q", "Bool")
    s.assert_sexpr(parse_one("(xor p q)"))
    s.assert_sexpr(parse_one("(=> p q)"))
    assert s.check() == "sat"
    assert s.model_value("p") is False and s.model_value("q") is True


def test_distinct_and_equality_chain():
    s = Session()
    for v in ("a", "b", "c"):
        s.declare(v, "Int")
        s.assert_sexpr(parse_one(f"(and (>= {v} 0) (<= {v} 1))"))
    s.assert_sexpr(parse_one("(distinct a b)"))
    assert s.check() == "sat"
    assert {s.model_value("a"), s.model_value("b")} == {0, 1}
    s.assert_sexpr(parse_one("(distinct a b c)"))  # 3 distinct values in {0,1}
    assert s.check() == "unsat"

    s2 = Session()
    for v in ("a", "b", "c"):
        s2.declare(v, "Int")
    s2.assert_sexpr(parse_one("(and (>= a 0) (<= a 9) (>= b 0) (<= b 9) (>= c 0) (<= c 9))"))
    s2.assert_sexpr(parse_one("(= a b c)"))
    s2.assert_sexpr(parse_one("(>= a 7)"))
    assert s2.check() == "sat"
    assert s2.model_value("a") == s2.model_value("b") == s2.model_value("c") >= 7


def test_ite_term_with_constant_branch_difference():
    s = Session()
    s.declare("x", "Int")
    s.declare("y", "Int")
    s.declare("b", "Bool")
    s.assert_sexpr(parse_one("(and (>= x 0) (<= x 5) (>= y 0) (<= y 5))"))
    s.assert_sexpr(parse_one("(= y (+ x (ite b 1 0)))"))
    s.assert_sexpr(parse_one("b"))
    s.assert_sexpr(parse_one("(= x 2)"))
    assert s.check() == "sat"
    assert s.model_value("y") == 3


def test_ite_with_nonconstant_branch_difference_unsupported():
    s = Session()
    s.declare("x", "Int")
    s.declare("b", "Bool")
    s.assert_sexpr(parse_one("(and (>= x (- 3)) (<= x 3))"))
    assert s.check() == "sat"
    with pytest.raises(UnsupportedError):
        s.assert_sexpr(parse_one("(>= (ite b x (- 0 x)) 1)"))


def test_nonlinear_product_unsupported():
    s = Session()
    s.declare("x", "Int")
    s.declare("y", "Int")
    s.assert_sexpr(parse_one("(and (>= x 0) (<= x 3) (>= y 0) (<= y 3))"))
    assert s.check() == "sat"
    with pytest.raises(UnsupportedError):
        s.assert_sexpr(parse_one("(= (* x y) 2)"))


def test_two_var_ladder_atom_exact():
    # x + y <= C compiles through the two-variable ladder; check the full box.
    lo, hi, C = -3, 3, 1
    s = Session()
    s.declare("x", "Int")
    s.declare("y", "Int")
    s.assert_sexpr(parse_one(f"(and (>= x {lo}) (<= x {hi}) (>= y {lo}) (<= y {hi}))"))
    s.assert_sexpr(parse_one(f"(<= (+ x y) {C})"))
    found = set()
    while s.check() == "sat":
        m = (s.model_value("x"), s.model_value("y"))
        found.add(m)
        s.assert_sexpr(("not", ("and", ("=", "x", from_int(m[0])),
                                ("=", "y", from_int(m[1])))))
    expected = {(x, y)
                for x in range(lo, hi + 1) for y in range(lo, hi + 1)
                if x + y <= C}
    assert found == expected


def test_three_var_mdd_atom_exact():
    # 2x + 3y - z <= 4 goes through the layered-diagram encoder.
    s = Session()
    for v in ("x", "y", "z"):
        s.declare(v, "Int")
    s.assert_sexpr(parse_one(
        "(and (>= x (- 2)) (<= x 2) (>= y (- 2)) (<= y 2) (>= z (- 2)) (<= z 2))"))
    s.assert_sexpr(parse_one("(<= (+ (* 2 x) (* 3 y) (- 0 z)) 4)"))
    found = set()
    while s.check() == "sat":
        m = tuple(s.model_value(v) for v in ("x", "y", "z"))
        found.add(m)
        s.assert_sexpr(("not", ("and",
                                ("=", "x", from_int(m[0])),
                                ("=", "y", from_int(m[1])),
                                ("=", "z", from_int(m[2])))))
    expected = {(x, y, z)
                for x in range(-2, 3) for y in range(-2, 3) for z in range(-2, 3)
                if 2 * x + 3 * y - z <= 4}
    assert found == expected


def test_model_check_interleaving_error():
    s = Session()
    s.declare("x", "Int")
    with pytest.raises(CompileError, match="no model"):
        s.model_value("x")
    s.assert_sexpr(parse_one("(and (>= x 0) (<= x 1))"))
    assert s.check() == "sat"
    s.model_value("x")
    s.assert_sexpr(parse_one("(>= x 5)"))  # invalidates the model
    with pytest.raises(CompileError, match="no model"):
        s.model_value("x")


# --------------------------------------------------------- randomized QF_LIA

def random_instance(rnd):
    """A random bounded QF_LIA instance: (int boxes, bool names, formula)."""
    n_int = rnd.randint(2, 3)
    n_bool = rnd.randint(0, 2)
    ints = {}
    for i in range(n_int):
        lo = rnd.randint(-5, 3)
        ints[f"v{i}"] = (lo, lo + rnd.randint(0, 6))
    bools = [f"p{i}" for i in range(n_bool)]

    def term(depth):
        r = rnd.random()
        if depth <= 0 or r < 0.35:
            return rnd.choice(list(ints))
        if r < 0.5:
            return from_int(rnd.randint(-4, 4))
        if r < 0.65:
            return ("*", str(rnd.randint(1, 3)), rnd.choice(list(ints)))
        if r < 0.75 and bools:
            # the compiler supports ite terms whose branches differ by a constant
            base = rnd.choice(list(ints))
            bump = ("+", base, from_int(rnd.randint(1, 3)))
            cond = rnd.choice(bools)
            return ("ite", cond, bump, base) if rnd.random() < 0.5 else \
                ("ite", cond, from_int(rnd.randint(-2, 2)), from_int(rnd.randint(-2, 2)))
        if r < 0.85:
            return ("-", term(depth - 1))
        op = rnd.choice(["+", "-"])
        return (op, term(depth - 1), term(depth - 1))

    def atom():
        r = rnd.random()
        if bools and r < 0.2:
            return rnd.choice(bools)
        op = rnd.choice(["<", "<=", ">", ">=", "="])
        return (op, term(2), term(2))

    def formula(depth):
        if depth <= 0 or rnd.random() < 0.4:
            return atom()
        op = rnd.choice(["and", "or", "not", "=>", "xor", "ite", "distinct-int"])
        if op == "not":
            return ("not", formula(depth - 1))
        if op == "ite":
            return ("ite", formula(depth - 1), formula(depth - 1), formula(depth - 1))
        if op == "distinct-int" and len(ints) >= 2:
            vs = rnd.sample(list(ints), 2)
            return ("distinct", vs[0], vs[1])
        if op in ("=>", "xor"):
            return (op, formula(depth - 1), formula(depth - 1))
        return (op, formula(depth - 1), formula(depth - 1))

    bounds = ["and"]
    for name, (lo, hi) in ints.items():
        bounds.append((">=", name, from_int(lo)))
        bounds.append(("<=", name, from_int(hi)))
    return ints, bools, tuple(bounds), formula(3)


def test_random_qf_lia_agrees_with_bruteforce():
    rnd = random.Random(23)
    n_sat = n_unsat = 0
    for _ in range(120):
        ints, bools, bounds, body = random_instance(rnd)
        models = box_models(ints, bools, ("and", bounds, body))

        s = Session()
        for name in ints:
            s.declare(name, "Int")
        for name in bools:
            s.declare(name, "Bool")
        s.assert_sexpr(bounds)
        s.assert_sexpr(body)
        status = s.check()
        assert status == ("sat" if models else "unsat"), to_text(body)
        if status == "sat":
            n_sat += 1
            env = {n: s.model_value(n) for n in (*ints, *bools)}
            for name, (lo, hi) in ints.items():
                assert lo <= env[name] <= hi
            assert eval_sexpr(body, env), (to_text(body), env)
        else:
            n_unsat += 1
    assert n_sat >= 20 and n_unsat >= 20  # generator exercises both outcomes


def test_enumeration_counts_match_bruteforce():
    rnd = random.Random(41)
    for _ in range(15):
        ints, bools, bounds, body = random_instance(rnd)
        expected = box_models(ints, bools, ("and", bounds, body))
        if len(expected) > 120:
            continue
        s = Session()
        for name in ints:
            s.declare(name, "Int")
        for name in bools:
            s.declare(name, "Bool")
        s.assert_sexpr(bounds)
        s.assert_sexpr(body)
        seen = []
        while s.check() == "sat":
            env = {n: s.model_value(n) for n in (*ints, *bools)}
            seen.append(env)
            block = ["or"]
            for name in ints:
                block.append(("not", ("=", name, from_int(env[name]))))
            for name in bools:
                block.append(("not", name) if env[name] else name)
            s.assert_sexpr(tuple(block))
        key = lambda env: tuple(sorted(env.items()))
        assert sorted(map(key, seen)) == sorted(map(key, expected))


# ------------------------------------------------------------------- scripts

SAMPLE = """
(set-logic QF_LIA)
(declare-fun x () Int)
(declare-const y Int)
(assert (and (>= x 0) (<= x 9) (>= y (- 5)) (<= y 9)))
(assert (= (+ x y) 2))
(assert (< y (- 1)))
(check-sat)
(get-value (x y))
"""


def test_run_script_sat_with_values():
    lines = run_script(SAMPLE)
    assert lines[0] == "sat"
    groups = dict(
        (g[0], int_const(g[1])) for g in parse_one(lines[1])
    )
    assert groups["x"] + groups["y"] == 2 and groups["y"] < -1


def test_run_script_unsat_then_error_on_get_value():
    lines = run_script(
        "(declare-fun x () Int)"
        "(assert (and (>= x 0) (<= x 3) (> x 7)))"
        "(check-sat) (get-value (x))"
    )
    assert lines == ["unsat", '(error "model is not available")']


def test_run_script_two_checks_are_incremental():
    lines = run_script(
        "(declare-fun x () Int)"
        "(assert (and (>= x 0) (<= x 3)))"
        "(check-sat)"
        "(assert (> x 3))"
        "(check-sat)"
    )
    assert lines == ["sat", "unsat"]


def test_run_script_ignores_directives_and_stops_at_exit():
    lines = run_script(
        '(set-logic QF_LIA) (set-info :status known) (set-option :produce-models true)'
        "(declare-fun x () Int) (assert (and (>= x 1) (<= x 1)))"
        "(check-sat) (exit) (get-value (x))"
    )
    assert lines == ["sat"]


def test_run_script_negative_value_rendering():
    lines = run_script(
        "(declare-fun x () Int)"
        "(assert (and (>= x (- 8)) (<= x (- 8))))"
        "(check-sat) (get-value (x))"
    )
    assert lines == ["sat", "((x (- 8)))"]


def test_execute_rejects_unknown_command():
    s = Session()
    with pytest.raises(UnsupportedError):
        s.execute(parse_one("(push 1)"))


# ----------------------------------------------------------------------- CLI

def run_cli(args, stdin=None):
    return subprocess.run(
        [sys.executable, "-m", "wizbook.smt.cli", *args],
        input=stdin, capture_output=True, text=True, timeout=120,
    )


def test_cli_solves_file(tmp_path):
    f = tmp_path / "probe.smt2"
    f.write_text(SAMPLE)
    r = run_cli([str(f)])
    assert r.returncode == 0
    lines = r.stdout.strip().splitlines()
    assert lines[0] == "sat"
    assert lines[1].startswith("((x ")


def test_cli_reads_stdin():
    r = run_cli(["-"], stdin="(check-sat)")
    assert r.returncode == 0
    assert r.stdout.strip() == "sat"


def test_cli_parse_error_exits_3(tmp_path):
    f = tmp_path / "broken.smt2"
    f.write_text("(assert (= x)")
    r = run_cli([str(f)])
    assert r.returncode == 3
    assert "(error" in r.stdout


def test_cli_missing_file_exits_3(tmp_path):
    r = run_cli([str(tmp_path / "absent.smt2")])
    assert r.returncode == 3
    assert "(error" in r.stdout


def test_cli_max_conflicts_unknown(tmp_path):
    # A pigeonhole-flavored integer instance too hard for a 1-conflict budget.
    lines = ["(set-logic QF_LIA)"]
    for i in range(7):
        lines.append(f"(declare-fun h{i} () Int)")
        lines.append(f"(assert (and (>= h{i} 0) (<= h{i} 5)))")
    lines.append("(assert (distinct h0 h1 h2 h3 h4 h5 h6))")
    lines.append("(check-sat)")
    f = tmp_path / "hard.smt2"
    f.write_text("\n".join(lines))
    r = run_cli(["--max-conflicts", "1", str(f)])
    assert r.returncode == 0
    assert r.stdout.strip() == "unknown"
    r2 = run_cli([str(f)])
    assert r2.stdout.strip() == "unsat"


def test_pure_python_fallback_matches(tmp_path):
    probe = (
        "import os, wizbook.smt as S\n"
        "assert S.JITTED is False\n"
        "print(S.run_script('''%s''')[0])\n" % SAMPLE
    )
    r = subprocess.run(
        [sys.executable, "-c", probe],
        capture_output=True, text=True, timeout=180,
        env={**__import__('os').environ, "WIZBOOK_PURE_PYTHON": "1"},
    )
    assert r.returncode == 0, r.stderr
    assert r.stdout.strip() == "sat"

"""Bounded model checking of the plant under a magic book.

A length-l query compiles the plant transition relation, the book's decision
logic, and a specification into one quantifier-free linear integer arithmetic
script; each satisfying model decodes into a Trace which is then re-validated
by concrete replay (never trusted from the solver) and re-checked against the
wizard.
"""

from __future__ import annotations

import math
import os
import shlex
import shutil
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

from .plant import (
    ACTION_DELTA,
    ACTION_NAMES,
    Action,
    GridConfig,
    GridState,
    action_from_name,
    support,
)
from .magicbook import TreePolicy, book_action
from .smt import Session, int_const, parse_all, parse_one
from .wizard import Wizard


@dataclass(frozen=True)
class Trace:
    """A bounded run: l+1 states and l actions, respawns nondeterministic."""

    states: tuple[GridState, ...]
    actions: tuple[Action, ...]

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("trace needs exactly one more state than actions")
        if not self.actions:
            raise ValueError("trace must contain at least one step")

    def __len__(self) -> int:
        return len(self.actions)

    def validate(self, cfg: GridConfig) -> None:
        """Check every step is a possible plant transition (support member)."""
        for i, (s, a) in enumerate(zip(self.states, self.actions)):
            s.validate(cfg)
            if self.states[i + 1] not in support(cfg, s, a):
                raise ValueError(f"step {i} is not a plant transition")
        self.states[-1].validate(cfg)

    def to_json(self) -> dict:
        return {
            "states": [s.to_json() for s in self.states],
            "actions": [ACTION_NAMES[a] for a in self.actions],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Trace":
        return cls(
            tuple(GridState.from_json(s) for s in obj["states"]),
            tuple(action_from_name(a) for a in obj["actions"]),
        )


@dataclass
class WitnessReport:
    """Replay verdicts for one BMC witness trace."""

    trace: Trace
    book_valid: bool
    wizard_valid: bool
    divergence: Optional[int] = None  # first step where the wizard disagrees
    unsat_caveat: str = (
        "an Unsat bound rules out book witnesses only; it implies nothing "
        "about the wizard"
    )

    def to_json(self) -> dict:
        return {
            "trace": self.trace.to_json(),
            "book_valid": self.book_valid,
            "wizard_valid": self.wizard_valid,
            "divergence": self.divergence,
        }


def check_witness(trace: Trace, w: Optional[Wizard], cfg: GridConfig, p: TreePolicy) -> WitnessReport:
    """Concrete replay: book_valid iff every action is the book's output and
    every successor is a support member; wizard_valid iff the wizard would
    have taken the same actions."""
    trace.validate(cfg)
    book_valid = all(
        a == book_action(p, s) for s, a in zip(trace.states, trace.actions)
    )
    wizard_valid = True
    divergence = None
    if w is not None:
        for i, (s, a) in enumerate(zip(trace.states, trace.actions)):
            if w.policy(s) != a:
                wizard_valid = False
                divergence = i
                break
    return WitnessReport(trace, book_valid, wizard_valid, divergence)


# -- script construction --------------------------------------------------------


def _xv(i: int, j: int) -> str:
    return f"x_{i}_{j}"


def _yv(i: int, j: int) -> str:
    return f"y_{i}_{j}"


def _conj(parts: Sequence[str]) -> str:
    if not parts:
        return "true"
    if len(parts) == 1:
        return parts[0]
    return "(and " + " ".join(parts) + ")"


def _disj(parts: Sequence[str]) -> str:
    if not parts:
        return "false"
    if len(parts) == 1:
        return parts[0]
    return "(or " + " ".join(parts) + ")"


def _shifted(var: str, d: int) -> str:
    if d == 0:
        return var
    return f"(+ {var} {d})" if d > 0 else f"(- {var} {-d})"


def _same_cell(x1: str, y1: str, x2: str, y2: str) -> str:
    return f"(and (= {x1} {x2}) (= {y1} {y2}))"


def _feature_term(i: int, feat: int) -> str:
    """Feature 2(j-1)+axis at step i: passenger j's offset from the taxi."""
    j = feat // 2 + 1
    if feat % 2 == 0:
        return f"(- {_xv(i, j)} {_xv(i, 0)})"
    return f"(- {_yv(i, j)} {_yv(i, 0)})"


@dataclass(frozen=True)
class BmcSpec:
    """A named bundle of constraints over the step-indexed variables."""

    name: str
    bound: int
    gen: Callable[[GridConfig, int], tuple[str, ...]]

    def constraints(self, cfg: GridConfig) -> tuple[str, ...]:
        return self.gen(cfg, self.bound)

    @classmethod
    def raw(cls, name: str, bound: int, constraints: Sequence[str]) -> "BmcSpec":
        fixed = tuple(constraints)
        return cls(name, bound, lambda cfg, l: fixed)


def wall_hit(l: int) -> BmcSpec:
    """Some step's action points off-grid or into a wall."""

    def gen(cfg: GridConfig, l: int) -> tuple[str, ...]:
        cases = []
        for i in range(l):
            for a in Action:
                blocked = _blocked_cond(cfg, i, a)
                cases.append(f"(and (= Y_{i} {a.value}) {blocked})")
        return (_disj(cases),)

    return BmcSpec("wall_hit", l, gen)


def no_pickup_lasso(l: int) -> BmcSpec:
    """The taxi returns to its initial position at the final step while every
    passenger stays put (so no pickup can have happened)."""

    def gen(cfg: GridConfig, l: int) -> tuple[str, ...]:
        out = [_same_cell(_xv(l, 0), _yv(l, 0), _xv(0, 0), _yv(0, 0))]
        for j in range(1, cfg.k + 1):
            for i in range(1, l + 1):
                out.append(_same_cell(_xv(i, j), _yv(i, j), _xv(0, j), _yv(0, j)))
        return tuple(out)

    return BmcSpec("no_pickup_lasso", l, gen)


def passenger_first(j: int, l: int) -> BmcSpec:
    """Passenger j is collected first: every other passenger stays put for the
    whole run and j's final position differs from its initial one."""

    def gen(cfg: GridConfig, l: int) -> tuple[str, ...]:
        if not 1 <= j <= cfg.k:
            raise ValueError(f"passenger index {j} outside 1..{cfg.k}")
        out = []
        for m in range(1, cfg.k + 1):
            if m == j:
                continue
            for i in range(1, l + 1):
                out.append(_same_cell(_xv(i, m), _yv(i, m), _xv(0, m), _yv(0, m)))
        out.append(
            "(not " + _same_cell(_xv(l, j), _yv(l, j), _xv(0, j), _yv(0, j)) + ")"
        )
        return tuple(out)

    return BmcSpec(f"passenger_first_{j}", l, gen)


def passenger_first_not_closest(j: int, l: int) -> BmcSpec:
    """Passenger j is collected first although some other passenger starts
    strictly closer to the taxi. Manhattan distances compare through a sign
    case-split: |a|+|b| > |c|+|d| iff for some orientation of (a, b) the
    oriented sum exceeds every orientation of (c, d)."""

    base = passenger_first(j, l)

    def gen(cfg: GridConfig, l: int) -> tuple[str, ...]:
        def offs(m: int) -> tuple[str, str]:
            return (
                f"(- {_xv(0, m)} {_xv(0, 0)})",
                f"(- {_yv(0, m)} {_yv(0, 0)})",
            )

        def signed(s: int, e: str) -> str:
            return e if s > 0 else f"(- {e})"

        dxj, dyj = offs(j)
        farther = []
        for m in range(1, cfg.k + 1):
            if m == j:
                continue
            dxm, dym = offs(m)
            choices = []
            for s1 in (1, -1):
                for s2 in (1, -1):
                    needed = []
                    for t1 in (1, -1):
                        for t2 in (1, -1):
                            total = (
                                f"(+ {signed(s1, dxj)} {signed(s2, dyj)} "
                                f"{signed(-t1, dxm)} {signed(-t2, dym)})"
                            )
                            needed.append(f"(>= {total} 1)")
                    choices.append(_conj(needed))
            farther.append(_disj(choices))
        return base.gen(cfg, l) + (_disj(farther),)

    return BmcSpec(f"passenger_first_not_closest_{j}", l, gen)


def _blocked_cond(cfg: GridConfig, i: int, a: Action) -> str:
    """The taxi's step-i action a is clamped: target off-grid or a wall."""
    dx, dy = ACTION_DELTA[a.value]
    n = cfg.n
    cases = []
    if dy > 0:
        cases.append(f"(= {_yv(i, 0)} {n - 1})")
    elif dy < 0:
        cases.append(f"(= {_yv(i, 0)} 0)")
    elif dx > 0:
        cases.append(f"(= {_xv(i, 0)} {n - 1})")
    else:
        cases.append(f"(= {_xv(i, 0)} 0)")
    for wx, wy in sorted(cfg.walls):
        sx, sy = wx - dx, wy - dy
        if 0 <= sx < n and 0 <= sy < n and (sx, sy) not in cfg.walls:
            cases.append(f"(and (= {_xv(i, 0)} {sx}) (= {_yv(i, 0)} {sy}))")
    return _disj(cases)


@dataclass(frozen=True)
class SmtScript:
    """A complete query: integer declarations, assertion bodies, and the
    variables to read back from a model. text is byte-deterministic in the
    encode inputs."""

    logic: str
    declarations: tuple[str, ...]
    assertions: tuple[str, ...]
    queries: tuple[str, ...]

    @property
    def text(self) -> str:
        lines = [f"(set-logic {self.logic})"]
        for name in self.declarations:
            lines.append(f"(declare-fun {name} () Int)")
        for body in self.assertions:
            lines.append(f"(assert {body})")
        lines.append("(check-sat)")
        lines.append("(get-value (" + " ".join(self.queries) + "))")
        return "\n".join(lines) + "\n"


def encode(
    cfg: GridConfig,
    p: TreePolicy,
    spec: BmcSpec,
    l: int,
    blocked: Sequence[Trace] = (),
) -> SmtScript:
    """Compile plant dynamics, the book's decision logic, the spec, and any
    blocking constraints into one script whose models are exactly the
    spec-satisfying length-l runs of the plant under the book."""
    if l < 1:
        raise ValueError("bound must be at least 1")
    if spec.bound != l:
        raise ValueError(f"spec {spec.name} was built for bound {spec.bound}, not {l}")
    n, k = cfg.n, cfg.k
    forest = len(p.trees) > 1

    decls = []
    for i in range(l + 1):
        for j in range(k + 1):
            decls.extend((_xv(i, j), _yv(i, j)))
    decls.extend(f"Y_{i}" for i in range(l))
    if forest:
        for i in range(l):
            decls.extend(f"V_{i}_{t}" for t in range(len(p.trees)))

    asserts: list[str] = []
    # domain bounds
    for i in range(l + 1):
        for j in range(k + 1):
            asserts.append(f"(and (<= 0 {_xv(i, j)}) (<= {_xv(i, j)} {n - 1}))")
            asserts.append(f"(and (<= 0 {_yv(i, j)}) (<= {_yv(i, j)} {n - 1}))")
    for i in range(l):
        asserts.append(f"(and (<= 0 Y_{i}) (<= Y_{i} 3))")
    if forest:
        for i in range(l):
            for t in range(len(p.trees)):
                asserts.append(f"(and (<= 0 V_{i}_{t}) (<= V_{i}_{t} 3))")
    # nothing sits on a wall cell
    for i in range(l + 1):
        for j in range(k + 1):
            for wx, wy in sorted(cfg.walls):
                asserts.append(
                    f"(not (and (= {_xv(i, j)} {wx}) (= {_yv(i, j)} {wy})))"
                )
    # occupied cells are pairwise distinct at every step
    for i in range(l + 1):
        for a in range(k + 1):
            for b in range(a + 1, k + 1):
                asserts.append(
                    f"(or (not (= {_xv(i, a)} {_xv(i, b)}))"
                    f" (not (= {_yv(i, a)} {_yv(i, b)})))"
                )
    # taxi motion with clamping
    for i in range(l):
        for a in Action:
            dx, dy = ACTION_DELTA[a.value]
            blocked_cond = _blocked_cond(cfg, i, a)
            stay = _same_cell(_xv(i + 1, 0), _yv(i + 1, 0), _xv(i, 0), _yv(i, 0))
            move = (
                f"(and (= {_xv(i + 1, 0)} {_shifted(_xv(i, 0), dx)})"
                f" (= {_yv(i + 1, 0)} {_shifted(_yv(i, 0), dy)}))"
            )
            asserts.append(f"(=> (and (= Y_{i} {a.value}) {blocked_cond}) {stay})")
            asserts.append(
                f"(=> (and (= Y_{i} {a.value}) (not {blocked_cond})) {move})"
            )
    # passenger frame axioms: not collected means stationary
    for i in range(l):
        for j in range(1, k + 1):
            pick = _same_cell(_xv(i + 1, 0), _yv(i + 1, 0), _xv(i, j), _yv(i, j))
            stay = _same_cell(_xv(i + 1, j), _yv(i + 1, j), _xv(i, j), _yv(i, j))
            asserts.append(f"(=> (not {pick}) {stay})")
    # book decision logic
    for i in range(l):
        if forest:
            for t, tree in enumerate(p.trees):
                for path in tree.all_paths():
                    pred = _path_pred(i, path)
                    head = f"(= V_{i}_{t} {path.action.value})"
                    asserts.append(head if pred == "true" else f"(=> {pred} {head})")
            counts = [
                "(+ "
                + " ".join(
                    f"(ite (= V_{i}_{t} {a}) 1 0)" for t in range(len(p.trees))
                )
                + ")"
                for a in range(4)
            ]
            for a in range(4):
                conds = [f"(> {counts[a]} {counts[b]})" for b in range(a)]
                conds += [f"(>= {counts[a]} {counts[b]})" for b in range(a + 1, 4)]
                asserts.append(f"(=> {_conj(conds)} (= Y_{i} {a}))")
        else:
            for path in p.trees[0].all_paths():
                pred = _path_pred(i, path)
                head = f"(= Y_{i} {path.action.value})"
                asserts.append(head if pred == "true" else f"(=> {pred} {head})")
    # specification
    asserts.extend(spec.constraints(cfg))
    # blocking
    for tr in blocked:
        asserts.append(_blocking_constraint(cfg, tr))

    queries = tuple(
        v for i in range(l + 1) for j in range(k + 1) for v in (_xv(i, j), _yv(i, j))
    ) + tuple(f"Y_{i}" for i in range(l))
    return SmtScript("QF_LIA", tuple(decls), tuple(asserts), queries)


def _path_pred(i: int, path) -> str:
    """Root-to-leaf predicate at step i; thresholds are half-integers so each
    literal floors to an integer comparison."""
    lits = []
    for pred, took_le in path.literals:
        term = _feature_term(i, pred.feat)
        c = math.floor(pred.thr)
        lits.append(f"(<= {term} {c})" if took_le else f"(not (<= {term} {c}))")
    return _conj(lits)


def _blocking_constraint(cfg: GridConfig, trace: Trace) -> str:
    """Rule out one trace by pinning every state variable; actions are
    functionally determined by states, so they are left unbound."""
    eqs = []
    for i, s in enumerate(trace.states):
        cells = (s.taxi,) + s.passengers
        for j, (cx, cy) in enumerate(cells):
            eqs.append(f"(= {_xv(i, j)} {cx})")
            eqs.append(f"(= {_yv(i, j)} {cy})")
    return "(not " + _conj(eqs) + ")"


# -- solver driver ----------------------------------------------------------------


class SolverError(RuntimeError):
    """Base for everything that can go wrong invoking a solver."""


class SolverCrash(SolverError):
    """The solver process exited abnormally."""


class SolverParseError(SolverError):
    """The solver's output did not parse as a result."""


@dataclass(frozen=True)
class SolveResult:
    status: str  # "sat" | "unsat" | "unknown"
    values: Optional[dict] = None
    elapsed: float = 0.0


def default_solver_command() -> list[str]:
    exe = shutil.which("wizbook-smt")
    if exe:
        return [exe]
    return [sys.executable, "-m", "wizbook.smt.cli"]


def solve(
    script: SmtScript,
    command: Optional[Union[str, Sequence[str]]] = None,
    timeout: Optional[float] = None,
    path: Optional[str] = None,
) -> SolveResult:
    """Write the script to a file, run the solver command on it, and parse
    the check-sat line plus get-value bindings."""
    if command is None:
        cmd = default_solver_command()
    elif isinstance(command, str):
        cmd = shlex.split(command)
    else:
        cmd = list(command)
    cleanup = path is None
    if path is None:
        fd, path = tempfile.mkstemp(suffix=".smt2", prefix="bmc_")
        os.close(fd)
    t0 = time.perf_counter()
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(script.text)
        try:
            proc = subprocess.run(
                cmd + [path], capture_output=True, text=True, timeout=timeout
            )
        except subprocess.TimeoutExpired:
            return SolveResult("unknown", None, time.perf_counter() - t0)
        except OSError as exc:
            raise SolverCrash(f"could not run {cmd[0]}: {exc}") from exc
        elapsed = time.perf_counter() - t0
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if proc.returncode != 0 or not lines:
            raise SolverCrash(
                f"solver exited with {proc.returncode}: "
                f"{proc.stdout.strip()} {proc.stderr.strip()}".strip()
            )
        status = lines[0].strip()
        if status == "unsat":
            return SolveResult("unsat", None, elapsed)
        if status == "unknown":
            return SolveResult("unknown", None, elapsed)
        if status != "sat":
            raise SolverParseError(f"unrecognized status line: {status!r}")
        rest = "\n".join(lines[1:])
        try:
            exprs = parse_all(rest)
            values = {}
            for group in exprs:
                for pair in group:
                    values[pair[0]] = int_const(pair[1])
        except Exception as exc:
            raise SolverParseError(f"could not parse model: {exc}") from exc
        missing = [q for q in script.queries if q not in values]
        if missing:
            raise SolverParseError(f"model is missing {missing[:4]}")
        return SolveResult("sat", values, elapsed)
    finally:
        if cleanup:
            try:
                os.unlink(path)
            except OSError:
                pass


def decode(cfg: GridConfig, values: dict, l: int) -> Trace:
    """Rebuild the concrete trace from model values."""
    states = []
    for i in range(l + 1):
        taxi = (int(values[_xv(i, 0)]), int(values[_yv(i, 0)]))
        passengers = tuple(
            (int(values[_xv(i, j)]), int(values[_yv(i, j)]))
            for j in range(1, cfg.k + 1)
        )
        states.append(GridState(taxi, passengers))
    actions = tuple(Action(int(values[f"Y_{i}"])) for i in range(l))
    return Trace(tuple(states), actions)


def enumerate_traces(
    cfg: GridConfig,
    p: TreePolicy,
    spec: BmcSpec,
    l: int,
    count: int,
    wizard: Optional[Wizard] = None,
    incremental: bool = True,
    command: Optional[Union[str, Sequence[str]]] = None,
    timeout: Optional[float] = None,
) -> list[WitnessReport]:
    """Repeated solving with blocking: after each witness, assert the negation
    of its state-variable binding and solve again; stop at count traces or
    unsat. Every trace is re-validated by concrete replay, never trusted from
    the solver. The incremental mode keeps one in-process session; otherwise
    each round re-encodes with the blocked traces and runs the solver command
    on a fresh file. Run to exhaustion, both modes find the same trace set;
    the order may differ because each round may surface a different model."""
    script = encode(cfg, p, spec, l)
    reports: list[WitnessReport] = []
    if incremental:
        session = Session()
        for name in script.declarations:
            session.declare(name, "Int")
        for body in script.assertions:
            session.assert_sexpr(parse_one(body))
        while len(reports) < count:
            status = session.check()
            if status == "unsat":
                break
            if status != "sat":
                raise SolverError(f"solver returned {status} during enumeration")
            values = {q: session.model_value(q) for q in script.queries}
            trace = decode(cfg, values, l)
            reports.append(check_witness(trace, wizard, cfg, p))
            session.assert_sexpr(parse_one(_blocking_constraint(cfg, trace)))
    else:
        blocked: list[Trace] = []
        while len(reports) < count:
            script = encode(cfg, p, spec, l, blocked=tuple(blocked))
            res = solve(script, command=command, timeout=timeout)
            if res.status == "unsat":
                break
            if res.status != "sat":
                raise SolverError(f"solver returned {res.status} during enumeration")
            trace = decode(cfg, res.values, l)
            blocked.append(trace)
            reports.append(check_witness(trace, wizard, cfg, p))
    return reports

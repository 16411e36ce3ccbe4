"""Explanation workflow: label initial states by which passenger gets
collected first, then fit a small tree over the initial features to expose
the selection rule.

Labels come from solver witnesses, not simulation: for each passenger j the
passenger-collected-first spec is enumerated across bounds, each witness is
replayed concretely, and its initial state joins the dataset with label j.
The first pickup from a given start is a deterministic function of that
start (respawn nondeterminism only begins after it), so labels never clash
and initial states are deduplicated outright.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .bmc import Trace, check_witness, decode, encode, passenger_first
from .magicbook import DecisionTree, LabeledDataset, TreePolicy, fit_tree
from .plant import ACTION_NAMES, GridConfig, GridState, features
from .smt import Session
from .smt.sexpr import parse_one
from .wizard import Wizard

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class XaiRow:
    """One labeled example: the start state, the passenger collected first,
    and the witness trace that certifies it (None only for synthetic data)."""

    state: GridState
    label: int
    witness: Optional[Trace] = None


@dataclass
class XaiDataset:
    """Labeled initial states plus the per-label shortfall bookkeeping."""

    rows: list[XaiRow]
    shortfall: dict[int, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def labels(self) -> set[int]:
        return {r.label for r in self.rows}

    def design(self, cfg: GridConfig) -> LabeledDataset:
        X = np.array([features(cfg, r.state) for r in self.rows])
        y = np.array([r.label for r in self.rows])
        return LabeledDataset(X, y)

    def to_jsonl(self) -> str:
        lines = []
        for r in self.rows:
            lines.append(json.dumps({
                "state": r.state.to_json(),
                "label": r.label,
                "witness": None if r.witness is None else r.witness.to_json(),
            }))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str) -> "XaiDataset":
        rows = []
        for line in text.splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            rows.append(XaiRow(
                GridState.from_json(obj["state"]),
                int(obj["label"]),
                None if obj["witness"] is None else Trace.from_json(obj["witness"]),
            ))
        return cls(rows)


def _block_initial(cfg: GridConfig, s: GridState) -> str:
    """Constraint forbidding this exact initial state in later models."""
    parts = []
    cells = (s.taxi, *s.passengers)
    for j, (x, y) in enumerate(cells):
        parts.append(f"(= x_0_{j} {x})")
        parts.append(f"(= y_0_{j} {y})")
    return "(not (and " + " ".join(parts) + "))"


def gather(
    cfg: GridConfig,
    p: TreePolicy,
    w: Optional[Wizard],
    per_label: int,
    bounds: Iterable[int],
    require_wizard: bool = True,
) -> XaiDataset:
    """Collect up to per_label initial states for every passenger label.

    For each label j and each bound, an incremental session enumerates
    witnesses of the passenger-j-first spec, blocking on the initial state so
    every round yields a fresh start. Witnesses are replayed concretely;
    with require_wizard, starts whose witness the wizard would not have
    produced are discarded (they stay blocked). A shortfall per label is
    recorded when the bounds are exhausted early."""
    if require_wizard and w is None:
        raise ValueError("wizard validity requested but no wizard given")
    bounds = tuple(bounds)
    rows: list[XaiRow] = []
    seen: set[GridState] = set()
    shortfall: dict[int, int] = {}
    for j in range(1, cfg.k + 1):
        have = 0
        for l in bounds:
            if have >= per_label:
                break
            script = encode(cfg, p, passenger_first(j, l), l)
            session = Session()
            for name in script.declarations:
                session.declare(name, "Int")
            for body in script.assertions:
                session.assert_sexpr(parse_one(body))
            for s0 in seen:  # starts already claimed (or discarded) earlier
                session.assert_sexpr(parse_one(_block_initial(cfg, s0)))
            while have < per_label and session.check() == "sat":
                values = {q: session.model_value(q) for q in script.queries}
                trace = decode(cfg, values, l)
                report = check_witness(trace, w, cfg, p)
                s0 = trace.states[0]
                keep = report.book_valid and (
                    report.wizard_valid or not require_wizard
                )
                if keep and s0 not in seen:
                    rows.append(XaiRow(s0, j, trace))
                    have += 1
                seen.add(s0)
                session.assert_sexpr(parse_one(_block_initial(cfg, s0)))
        shortfall[j] = max(0, per_label - have)
        if shortfall[j]:
            log.warning(
                "label %d: %d/%d examples after bounds %s",
                j, have, per_label, list(bounds),
            )
    return XaiDataset(rows, shortfall)


def explain_tree(
    d: XaiDataset, cfg: GridConfig, max_depth: int = 4
) -> DecisionTree:
    """Depth-bounded CART over features of the initial states with passenger
    labels 1..k. Deterministic given the dataset ordering."""
    if not d.rows:
        raise ValueError("cannot explain an empty dataset")
    return fit_tree(d.design(cfg), max_depth, n_classes=cfg.k + 1)


def feature_name(j: int) -> str:
    """Human name of feature j: signed x/y offset to passenger j//2+1."""
    return ("dx" if j % 2 == 0 else "dy") + str(j // 2 + 1)


def export_dot(
    t: Union[DecisionTree, TreePolicy],
    leaf: str = "action",
    name: str = "book",
) -> str:
    """Render a tree or forest as a DOT digraph. Internal nodes read
    "dx1 <= -0.5"; leaves name the action, or the passenger for leaf="passenger".
    Forest trees share one digraph under distinct node prefixes."""
    if leaf not in ("action", "passenger"):
        raise ValueError(f"unknown leaf style {leaf!r}")
    trees = t.trees if isinstance(t, TreePolicy) else [t]
    lines = [f"digraph {name} {{", "  node [shape=box];"]
    for ti, tree in enumerate(trees):
        prefix = f"t{ti}_n" if len(trees) > 1 else "n"
        for i in range(tree.n_nodes):
            if tree.feat[i] < 0:
                v = int(tree.leaf[i])
                text = ACTION_NAMES[v] if leaf == "action" else f"passenger {v}"
                lines.append(f'  {prefix}{i} [label="{text}" shape=ellipse];')
            else:
                fn = feature_name(int(tree.feat[i]))
                lines.append(f'  {prefix}{i} [label="{fn} <= {tree.thr[i]:g}"];')
        for i in range(tree.n_nodes):
            if tree.feat[i] >= 0:
                lines.append(f'  {prefix}{i} -> {prefix}{tree.lo[i]} [label="yes"];')
                lines.append(f'  {prefix}{i} -> {prefix}{tree.hi[i]} [label="no"];')
    lines.append("}")
    return "\n".join(lines)

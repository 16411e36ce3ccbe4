"""Two-player game arena built from a plant abstraction and a magic book.

Player 1 (the controller) observes abstract cells: groups of taxi positions
in product with a spec-monitor state. Player 2 moves first each round and
reveals the leaf region (the conjunction of tree-path literals) containing
the concrete state; Player 1 answers with an action. Controlled taxi motion
is deterministic, so for taxi-partition abstractions the successor cell is a
single group and the transition function never depends on Player 2's move.

The multi-agent variant puts a second vehicle (a bus, Player 1) on the grid
against a book-driven taxi (Player 2) whose legal moves at a vertex are the
book's outputs over the vertex's concrete states; the adversarial variant
lifts that restriction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .plant import (
    ACTION_NAMES,
    Action,
    Cell,
    GridConfig,
    GridState,
    features,
    move_taxi,
)
from .magicbook import TreePolicy

VIOLATION = -1  # absorbing sink vertex id for monitor violations

__all__ = [
    "VIOLATION",
    "SpecMonitor",
    "TrivialMonitor",
    "TimerMonitor",
    "LeafRegion",
    "RegionTable",
    "leaf_regions",
    "region_of",
    "identity_groups",
    "row_groups",
    "DeltaNotClosed",
    "EmptyCell",
    "Arena",
    "build_arena",
    "MultiArena",
    "build_multi_arena",
    "placement_features",
]


# ---------------------------------------------------------------------------
# Spec monitors


class SpecMonitor:
    """Deterministic automaton over abstract-cell observations.

    States are indices 0..n_states-1; step() receives the member taxi cells
    of the abstract cell just entered and returns the successor state or
    VIOLATION (absorbing).
    """

    n_states: int
    init: int

    def step(self, m: int, cells: frozenset) -> int:
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


class TrivialMonitor(SpecMonitor):
    """Single-state monitor that never raises a violation."""

    n_states = 1
    init = 0

    def step(self, m: int, cells: frozenset) -> int:
        return 0

    def to_json(self) -> dict:
        return {"kind": "trivial"}


class TimerMonitor(SpecMonitor):
    """Gas countdown: the taxi must enter the gas cell at least every t moves.

    State index m encodes m+1 remaining moves; entering the gas cell refills
    to t. A move that lands outside the gas cell with one move remaining is a
    violation.
    """

    def __init__(self, gas: Cell, t: int):
        if t < 1:
            raise ValueError("timer bound must be >= 1")
        self.gas = gas
        self.t = t
        self.n_states = t
        self.init = t - 1

    def step(self, m: int, cells: frozenset) -> int:
        if self.gas in cells:
            return self.t - 1
        if m > 0:
            return m - 1
        return VIOLATION

    def to_json(self) -> dict:
        return {"kind": "timer", "gas": list(self.gas), "t": self.t}


# ---------------------------------------------------------------------------
# Leaf regions (Player 2 moves)


@dataclass(frozen=True)
class LeafRegion:
    """A box of feature vectors on which every tree takes one fixed path.

    key holds one leaf node index per tree; the box is the intersection of
    the per-path literal conjunctions, so by construction every member state
    receives the same book action.
    """

    id: int
    key: tuple[int, ...]
    lo: tuple[int, ...]
    hi: tuple[int, ...]
    action: Action

    def contains(self, f: Sequence[int]) -> bool:
        return all(l <= x <= h for l, x, h in zip(self.lo, f, self.hi))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "leaves": list(self.key),
            "lo": list(self.lo),
            "hi": list(self.hi),
            "action": ACTION_NAMES[self.action],
        }


class RegionTable:
    """All leaf regions of a policy, indexed by per-tree leaf keys."""

    def __init__(self, regions: Sequence[LeafRegion]):
        self.regions = tuple(regions)
        self._by_key = {r.key: r.id for r in self.regions}

    def __len__(self) -> int:
        return len(self.regions)

    def __iter__(self) -> Iterator[LeafRegion]:
        return iter(self.regions)

    def __getitem__(self, i: int) -> LeafRegion:
        return self.regions[i]

    def lookup(self, key: tuple[int, ...]) -> Optional[int]:
        return self._by_key.get(key)


def _leaf_boxes(tree, n: int, n_features: int) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Feature box per leaf node id, clamped to the grid's offset range."""
    boxes: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    lo0 = np.full(n_features, -(n - 1), dtype=np.int64)
    hi0 = np.full(n_features, n - 1, dtype=np.int64)

    def rec(i: int, lo: np.ndarray, hi: np.ndarray) -> None:
        if tree.feat[i] < 0:
            boxes[i] = (lo, hi)
            return
        j = int(tree.feat[i])
        c = int(np.floor(tree.thr[i]))
        llo, lhi = lo.copy(), hi.copy()
        lhi[j] = min(lhi[j], c)
        rec(int(tree.lo[i]), llo, lhi)
        rlo, rhi = lo.copy(), hi.copy()
        rlo[j] = max(rlo[j], c + 1)
        rec(int(tree.hi[i]), rlo, rhi)

    rec(0, lo0, hi0)
    return boxes


def placement_features(cfg: GridConfig, taxi: Cell) -> np.ndarray:
    """Feature rows of every valid state with the taxi at the given cell."""
    free = [c for c in cfg.free_cells() if c != taxi]
    m, k = len(free), cfg.k
    if m < k:
        return np.empty((0, 2 * k), dtype=np.int64)
    grids = np.meshgrid(*([np.arange(m)] * k), indexing="ij")
    idx = np.stack([g.reshape(-1) for g in grids], axis=1)
    if k > 1:
        keep = np.ones(len(idx), dtype=bool)
        for i in range(k):
            for j in range(i + 1, k):
                keep &= idx[:, i] != idx[:, j]
        idx = idx[keep]
    coords = np.array(free, dtype=np.int64)
    pts = coords[idx]  # (P, k, 2)
    return (pts - np.array(taxi, dtype=np.int64)).reshape(len(idx), 2 * k)


def _pack_keys(ids: np.ndarray, width: int) -> Optional[np.ndarray]:
    """Pack (P, T) leaf-id rows into int64 scalars when they fit."""
    bits = max(1, int(width).bit_length())
    if bits * ids.shape[1] > 62:
        return None
    out = np.zeros(len(ids), dtype=np.int64)
    for t in range(ids.shape[1]):
        out |= ids[:, t].astype(np.int64) << (bits * t)
    return out


def _scan_regions(
    cfg: GridConfig, p: TreePolicy
) -> tuple[list[tuple[int, ...]], dict[Cell, list[tuple[int, ...]]]]:
    """Enumerate all states per taxi cell; return the realized per-tree leaf
    keys overall and per cell (both in deterministic sorted order)."""
    max_nodes = max(t.n_nodes for t in p.trees)
    n_trees = len(p.trees)
    all_keys: set[tuple[int, ...]] = set()
    per_cell: dict[Cell, list[tuple[int, ...]]] = {}
    for c in cfg.free_cells():
        F = placement_features(cfg, c)
        if len(F) == 0:
            per_cell[c] = []
            continue
        ids = np.stack([t.apply(F) for t in p.trees], axis=1)
        packed = _pack_keys(ids, max_nodes)
        if packed is not None:
            bits = max(1, int(max_nodes).bit_length())
            uniq = np.unique(packed)
            keys = [
                tuple(int(v >> (bits * t)) & ((1 << bits) - 1) for t in range(n_trees))
                for v in uniq
            ]
        else:
            keys = [tuple(int(x) for x in row) for row in np.unique(ids, axis=0)]
        keys.sort()
        per_cell[c] = keys
        all_keys.update(keys)
    return sorted(all_keys), per_cell


def _region_from_key(
    rid: int,
    key: tuple[int, ...],
    p: TreePolicy,
    boxes: list[dict[int, tuple[np.ndarray, np.ndarray]]],
) -> LeafRegion:
    lo = np.max([boxes[t][leaf][0] for t, leaf in enumerate(key)], axis=0)
    hi = np.min([boxes[t][leaf][1] for t, leaf in enumerate(key)], axis=0)
    votes = [int(p.trees[t].leaf[leaf]) for t, leaf in enumerate(key)]
    counts = np.bincount(votes, minlength=4)
    return LeafRegion(
        id=rid,
        key=key,
        lo=tuple(int(x) for x in lo),
        hi=tuple(int(x) for x in hi),
        action=Action(int(counts.argmax())),
    )


def leaf_regions(p: TreePolicy, cfg: GridConfig) -> RegionTable:
    """Player 2's move set.

    Single tree: one region per leaf whose box intersects the grid's offset
    range. Forest: regions are realized per-tree leaf combinations, found by
    enumerating the concrete states (the full leaf-tuple product is never
    materialized).
    """
    n_feat = 2 * cfg.k
    boxes = [_leaf_boxes(t, cfg.n, n_feat) for t in p.trees]
    if p.kind == "single":
        keys = [(leaf,) for leaf in sorted(boxes[0])]
    else:
        keys, _ = _scan_regions(cfg, p)
    regions = [_region_from_key(i, k, p, boxes) for i, k in enumerate(keys)]
    # drop boxes that cannot hold any feature vector (possible only for
    # single trees fit on data from some other grid size)
    regions = [
        r for r in regions if all(l <= h for l, h in zip(r.lo, r.hi))
    ]
    regions = [
        LeafRegion(i, r.key, r.lo, r.hi, r.action) for i, r in enumerate(regions)
    ]
    return RegionTable(regions)


def region_of(
    p: TreePolicy, s: GridState | Sequence[int], table: RegionTable, cfg: GridConfig
) -> LeafRegion:
    """The unique region containing the state (or feature vector)."""
    f = features(cfg, s) if isinstance(s, GridState) else np.asarray(s, dtype=np.int64)
    key = tuple(int(t.apply(f.reshape(1, -1))[0]) for t in p.trees)
    rid = table.lookup(key)
    if rid is None:
        raise KeyError(f"no region for leaf key {key}; table built for another policy/grid")
    return table[rid]


# ---------------------------------------------------------------------------
# Player 1 abstraction


class DeltaNotClosed(ValueError):
    """An action maps a cell group onto more than one successor group."""


class EmptyCell(ValueError):
    """A declared abstract cell has no member states."""


def identity_groups(cfg: GridConfig) -> tuple[frozenset, ...]:
    """One group per free taxi cell (the finest abstraction)."""
    return tuple(frozenset({c}) for c in cfg.free_cells())


def row_groups(cfg: GridConfig) -> tuple[frozenset, ...]:
    """One group per grid row; closed under clamped motion."""
    rows: dict[int, set] = {}
    for c in cfg.free_cells():
        rows.setdefault(c[1], set()).add(c)
    return tuple(frozenset(rows[y]) for y in sorted(rows))


class Arena:
    """Game graph: vertices are (cell group, monitor state) pairs.

    delta[v, a] is the successor vertex (VIOLATION for monitor failures) and
    is independent of Player 2's move because taxi motion is deterministic.
    legal[g] lists the region ids intersecting group g; the reward of playing
    a against region r is 1 iff a equals the region's action.
    """

    def __init__(
        self,
        cfg: GridConfig,
        groups: tuple[frozenset, ...],
        monitor: SpecMonitor,
        policy: TreePolicy,
        table: RegionTable,
        legal: list[tuple[int, ...]],
        delta: np.ndarray,
    ):
        self.cfg = cfg
        self.groups = groups
        self.monitor = monitor
        self.policy = policy
        self.table = table
        self.legal = legal
        self.delta = delta
        self.group_of_cell = {c: g for g, cells in enumerate(groups) for c in cells}
        self.n_groups = len(groups)
        self.n_vertices = len(groups) * monitor.n_states

    def vertex_id(self, group: int, m: int) -> int:
        return group * self.monitor.n_states + m

    def group_of(self, v: int) -> int:
        return v // self.monitor.n_states

    def monitor_of(self, v: int) -> int:
        return v % self.monitor.n_states

    def abstract_of(self, s: GridState, m: int) -> int:
        return self.vertex_id(self.group_of_cell[s.taxi], m)

    def legal_moves(self, v: int) -> tuple[int, ...]:
        return self.legal[self.group_of(v)]

    def reward(self, region_id: int, a: Action) -> int:
        return int(a == self.table[region_id].action)

    def members(self, v: int) -> Iterator[GridState]:
        """Concrete states of the vertex's cell group (desk scale only)."""
        import itertools

        g = self.group_of(v)
        for taxi in sorted(self.groups[g]):
            free = [c for c in self.cfg.free_cells() if c != taxi]
            for combo in itertools.permutations(free, self.cfg.k):
                yield GridState(taxi, tuple(combo))

    def initial_vertex(self, s: GridState) -> int:
        return self.abstract_of(s, self.monitor.init)

    def to_json(self) -> dict:
        return {
            "grid": self.cfg.to_json(),
            "monitor": self.monitor.to_json(),
            "groups": [sorted(map(list, g)) for g in self.groups],
            "regions": [r.to_json() for r in self.table],
            "legal": [list(l) for l in self.legal],
            "delta": self.delta.tolist(),
        }


def build_arena(
    cfg: GridConfig,
    groups: Sequence[frozenset] | None,
    monitor: SpecMonitor,
    p: TreePolicy,
    max_vertices: int = 200_000,
) -> Arena:
    """Construct the advice arena for a taxi-partition abstraction.

    groups=None means the identity partition. Raises EmptyCell for groups
    without free cells and DeltaNotClosed when an action scatters a group
    over several successor groups (no single minimal cover exists in a
    partition).
    """
    groups = tuple(frozenset(g) for g in groups) if groups is not None else identity_groups(cfg)
    free = set(cfg.free_cells())
    seen: set = set()
    for g in groups:
        cells = g & free
        if not cells:
            raise EmptyCell(f"group {sorted(g)} has no free cells")
        if g - free:
            raise EmptyCell(f"group {sorted(g)} contains blocked cells")
        if g & seen:
            raise ValueError("groups overlap")
        seen |= g
    if seen != free:
        raise ValueError("groups do not cover all free cells")
    if len(groups) * monitor.n_states > max_vertices:
        raise ValueError(
            f"{len(groups) * monitor.n_states} vertices exceed the "
            f"enumerable bound {max_vertices}"
        )

    group_of_cell = {c: gi for gi, g in enumerate(groups) for c in g}

    # successor group per (group, action); must be unique for closure
    succ_group = np.empty((len(groups), 4), dtype=np.int64)
    for gi, g in enumerate(groups):
        for a in Action:
            targets = {group_of_cell[move_taxi(cfg, c, a)[0]] for c in g}
            if len(targets) > 1:
                raise DeltaNotClosed(
                    f"action {ACTION_NAMES[a]} maps group {gi} onto "
                    f"{len(targets)} groups; refine the abstraction"
                )
            succ_group[gi, a] = targets.pop()

    M = monitor.n_states
    delta = np.empty((len(groups) * M, 4), dtype=np.int32)
    for gi in range(len(groups)):
        for a in Action:
            tg = int(succ_group[gi, a])
            for m in range(M):
                m2 = monitor.step(m, groups[tg])
                delta[gi * M + m, a] = VIOLATION if m2 == VIOLATION else tg * M + m2

    table = leaf_regions(p, cfg)
    # a region is legal at a cell iff some concrete state there realizes its
    # leaf key; enumeration gives that exactly for trees and forests alike
    _, per_cell = _scan_regions(cfg, p)
    legal = []
    for g in groups:
        ids: set[int] = set()
        for c in sorted(g):
            ids.update(table.lookup(k) for k in per_cell[c])
        if not ids:
            raise EmptyCell(f"group {sorted(g)} has no legal Player-2 move")
        legal.append(tuple(sorted(ids)))

    return Arena(cfg, groups, monitor, p, table, legal, delta)


# ---------------------------------------------------------------------------
# Multi-agent arena (bus vs book-driven taxi)


class MultiArena:
    """Joint bus/taxi game on one grid.

    Vertices are (bus cell, taxi cell) pairs over free cells; Player 2 (the
    taxi) moves first, Player 1 (the bus) answers, both moves applied with
    clamping. Crash vertices (shared cell) are unsafe; the two stations are
    the recurrence targets for the bus.
    """

    def __init__(
        self,
        cfg: GridConfig,
        cells: list,
        legal2: list[tuple[int, ...]],
        delta: np.ndarray,
        safe: np.ndarray,
        targets: list[np.ndarray],
        adversarial: bool,
    ):
        self.cfg = cfg
        self.cells = cells
        self.cell_index = {c: i for i, c in enumerate(cells)}
        self.legal2 = legal2
        self.delta = delta  # (V, 4, 4) int32, [v, a1, a2]
        self.safe = safe
        self.targets = targets
        self.adversarial = adversarial
        self.n_vertices = len(legal2)

    def vertex_id(self, bus: Cell, taxi: Cell) -> int:
        return self.cell_index[bus] * len(self.cells) + self.cell_index[taxi]

    def bus_of(self, v: int) -> Cell:
        return self.cells[v // len(self.cells)]

    def taxi_of(self, v: int) -> Cell:
        return self.cells[v % len(self.cells)]

    def to_json(self) -> dict:
        return {
            "grid": self.cfg.to_json(),
            "adversarial": self.adversarial,
            "legal2": [list(l) for l in self.legal2],
            "safe": self.safe.tolist(),
            "targets": [t.nonzero()[0].tolist() for t in self.targets],
        }


def build_multi_arena(
    cfg: GridConfig, p: TreePolicy, adversarial: bool = False
) -> MultiArena:
    """Bus (Player 1) vs taxi (Player 2) arena.

    The taxi's book reads the bus's offset as its target; its legal moves at
    a vertex are the book's outputs there (a singleton under the exact
    abstraction), or all four actions in the adversarial variant.
    """
    if cfg.stations is None:
        raise ValueError("multi-agent arena needs cfg.stations")
    cells = list(cfg.free_cells())
    C = len(cells)
    idx = {c: i for i, c in enumerate(cells)}
    V = C * C
    delta = np.empty((V, 4, 4), dtype=np.int32)
    legal2: list[tuple[int, ...]] = []
    safe = np.empty(V, dtype=bool)
    moved = {c: [move_taxi(cfg, c, a)[0] for a in Action] for c in cells}
    for b in cells:
        for x in cells:
            v = idx[b] * C + idx[x]
            safe[v] = b != x
            if adversarial:
                legal2.append((0, 1, 2, 3))
            else:
                f = np.array([[b[0] - x[0], b[1] - x[1]]], dtype=np.int64)
                legal2.append((int(p.actions(f)[0]),))
            for a1 in range(4):
                b2 = moved[b][a1]
                for a2 in range(4):
                    delta[v, a1, a2] = idx[b2] * C + idx[moved[x][a2]]
    targets = []
    for st in cfg.stations:
        t = np.zeros(V, dtype=bool)
        for x in cells:
            v = idx[st] * C + idx[x]
            t[v] = safe[v]
        targets.append(t)
    return MultiArena(cfg, cells, legal2, delta, safe, targets, adversarial)

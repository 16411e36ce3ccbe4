"""Taxi-on-a-grid plant model.

The taxi moves deterministically on an n-by-n grid with walls; steering into
a wall or off the grid leaves it in place. Each of the k passengers waits on
a cell; driving onto one collects it, and the collected passenger reappears
on a uniformly random free cell. Replacing that random respawn with plain
nondeterminism gives the support relation used by the game and BMC layers.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from typing import Iterator, Optional

import numpy as np

# A cell is (x, y): x is the column, y is the row, both 0-based.
Cell = tuple[int, int]


class Action(IntEnum):
    """Taxi actions in canonical order; every tie-break follows this order."""

    UP = 0
    RIGHT = 1
    DOWN = 2
    LEFT = 3


# Up increases y, Right increases x.
ACTION_DELTA: dict[Action, Cell] = {
    Action.UP: (0, 1),
    Action.RIGHT: (1, 0),
    Action.DOWN: (0, -1),
    Action.LEFT: (-1, 0),
}

ACTION_NAMES = ("up", "right", "down", "left")


def action_from_name(name: str) -> Action:
    return Action(ACTION_NAMES.index(name.lower()))


@dataclass(frozen=True)
class GridConfig:
    """Static description of the world: grid side n, passenger count k, walls,
    plus the optional gas-station cell and station pair used by the monitors."""

    n: int
    k: int
    walls: frozenset[Cell] = frozenset()
    gas_station: Optional[Cell] = None
    stations: Optional[tuple[Cell, Cell]] = None

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError(f"grid side must be at least 2, got {self.n}")
        if self.k < 1:
            raise ValueError(f"need at least one passenger, got {self.k}")
        object.__setattr__(self, "walls", frozenset(self.walls))
        for c in self.walls:
            if not self.in_bounds(c):
                raise ValueError(f"wall {c} outside {self.n}x{self.n} grid")
        specials = [] if self.gas_station is None else [self.gas_station]
        if self.stations is not None:
            if len(self.stations) != 2 or self.stations[0] == self.stations[1]:
                raise ValueError(f"stations must be two distinct cells: {self.stations}")
            specials.extend(self.stations)
        for c in specials:
            if not self.is_free(c):
                raise ValueError(f"special cell {c} is blocked or out of bounds")
        # A state needs k + 1 distinct free cells; a respawn needs one more.
        if len(self.free_cells()) < self.k + 1:
            raise ValueError("not enough free cells for taxi and passengers")

    def in_bounds(self, c: Cell) -> bool:
        return 0 <= c[0] < self.n and 0 <= c[1] < self.n

    def is_free(self, c: Cell) -> bool:
        return self.in_bounds(c) and c not in self.walls

    def free_cells(self) -> tuple[Cell, ...]:
        return _free_cells(self.n, self.walls)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "walls": sorted(list(c) for c in self.walls),
            "gas_station": None if self.gas_station is None else list(self.gas_station),
            "stations": None
            if self.stations is None
            else [list(c) for c in self.stations],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GridConfig":
        return cls(
            n=obj["n"],
            k=obj["k"],
            walls=frozenset(tuple(c) for c in obj.get("walls") or ()),
            gas_station=None
            if obj.get("gas_station") is None
            else tuple(obj["gas_station"]),
            stations=None
            if obj.get("stations") is None
            else tuple(tuple(c) for c in obj["stations"]),
        )


@lru_cache(maxsize=None)
def _free_cells(n: int, walls: frozenset[Cell]) -> tuple[Cell, ...]:
    return tuple(
        (x, y) for x in range(n) for y in range(n) if (x, y) not in walls
    )


@dataclass(frozen=True)
class GridState:
    """Taxi cell plus one cell per passenger.

    Passengers carry stable 1-based identities: passenger i lives at
    passengers[i - 1]. All public APIs use the 1-based index.
    """

    taxi: Cell
    passengers: tuple[Cell, ...]

    def validate(self, cfg: GridConfig) -> None:
        cells = (self.taxi, *self.passengers)
        if len(self.passengers) != cfg.k:
            raise ValueError(f"expected {cfg.k} passengers, got {len(self.passengers)}")
        for c in cells:
            if not cfg.is_free(c):
                raise ValueError(f"cell {c} is blocked or out of bounds")
        if len(set(cells)) != len(cells):
            raise ValueError(f"taxi and passengers must occupy distinct cells: {cells}")

    def to_json(self) -> dict:
        return {
            "taxi": list(self.taxi),
            "passengers": [list(p) for p in self.passengers],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GridState":
        return cls(
            taxi=tuple(obj["taxi"]),
            passengers=tuple(tuple(p) for p in obj["passengers"]),
        )


@dataclass(frozen=True)
class StepOutcome:
    """Result of one plant step."""

    next: GridState
    collected: Optional[int]  # 1-based passenger index, or None
    wall_hit: bool


def move_taxi(cfg: GridConfig, taxi: Cell, a: Action) -> tuple[Cell, bool]:
    """Deterministic taxi motion: blocked moves keep the cell and set wall_hit."""
    dx, dy = ACTION_DELTA[Action(a)]
    target = (taxi[0] + dx, taxi[1] + dy)
    if cfg.is_free(target):
        return target, False
    return taxi, True


def respawn_cells(
    cfg: GridConfig, taxi: Cell, others: tuple[Cell, ...]
) -> tuple[Cell, ...]:
    """Cells a collected passenger may reappear on: free, not the taxi's cell,
    not occupied by another passenger. Canonical (x, y) order."""
    blocked = {taxi, *others}
    return tuple(c for c in cfg.free_cells() if c not in blocked)


def _advance(
    cfg: GridConfig, s: GridState, a: Action
) -> tuple[Cell, Optional[int], bool]:
    new_taxi, wall_hit = move_taxi(cfg, s.taxi, a)
    collected = None
    for i, p in enumerate(s.passengers, start=1):
        if p == new_taxi:
            collected = i
            break
    return new_taxi, collected, wall_hit


def support(cfg: GridConfig, s: GridState, a: Action) -> list[GridState]:
    """All successor states of (s, a): randomness replaced by nondeterminism.

    Without a pickup this is a singleton. With a pickup there is one successor
    per legal respawn cell. Duplicate-free, canonical order.
    """
    new_taxi, collected, _ = _advance(cfg, s, a)
    if collected is None:
        return [GridState(new_taxi, s.passengers)]
    others = tuple(p for i, p in enumerate(s.passengers, start=1) if i != collected)
    out = []
    for c in respawn_cells(cfg, new_taxi, others):
        ps = list(s.passengers)
        ps[collected - 1] = c
        out.append(GridState(new_taxi, tuple(ps)))
    return out


def step(
    cfg: GridConfig, s: GridState, a: Action, rng: np.random.Generator
) -> StepOutcome:
    """One concrete plant step; respawn cell drawn uniformly from the legal set."""
    new_taxi, collected, wall_hit = _advance(cfg, s, a)
    if collected is None:
        return StepOutcome(GridState(new_taxi, s.passengers), None, wall_hit)
    others = tuple(p for i, p in enumerate(s.passengers, start=1) if i != collected)
    cells = respawn_cells(cfg, new_taxi, others)
    c = cells[int(rng.integers(len(cells)))]
    ps = list(s.passengers)
    ps[collected - 1] = c
    return StepOutcome(GridState(new_taxi, tuple(ps)), collected, wall_hit)


def features(cfg: GridConfig, s: GridState) -> np.ndarray:
    """Signed offsets (x_i - x_taxi, y_i - y_taxi) per passenger; length 2k."""
    out = np.empty(2 * cfg.k, dtype=np.int64)
    tx, ty = s.taxi
    for i, (px, py) in enumerate(s.passengers):
        out[2 * i] = px - tx
        out[2 * i + 1] = py - ty
    return out


def manhattan(cfg: GridConfig, s: GridState, i: int) -> int:
    """Manhattan distance from the taxi to passenger i (1-based)."""
    if not 1 <= i <= cfg.k:
        raise IndexError(f"passenger index {i} out of range 1..{cfg.k}")
    px, py = s.passengers[i - 1]
    return abs(px - s.taxi[0]) + abs(py - s.taxi[1])


def random_state(cfg: GridConfig, rng: np.random.Generator) -> GridState:
    """Uniform valid state: taxi and passengers on distinct free cells."""
    free = cfg.free_cells()
    idx = rng.choice(len(free), size=cfg.k + 1, replace=False)
    cells = [free[int(i)] for i in idx]
    return GridState(cells[0], tuple(cells[1:]))


def all_states(cfg: GridConfig) -> Iterator[GridState]:
    """Every valid state, in canonical order. Exponential in k; small grids only."""
    free = cfg.free_cells()

    def rec(chosen: list[Cell]) -> Iterator[GridState]:
        if len(chosen) == cfg.k + 1:
            yield GridState(chosen[0], tuple(chosen[1:]))
            return
        for c in free:
            if c not in chosen:
                yield from rec(chosen + [c])

    yield from rec([])


class VecTaxi:
    """B independent plant copies stepped together on numpy arrays.

    Semantics match step(): deterministic clamped motion, pickup on entering a
    passenger cell, uniform respawn outside occupied cells (via rejection
    sampling, which is exact for a uniform target). One generator drives all
    copies, so a fixed seed fixes every trajectory.
    """

    def __init__(self, cfg: GridConfig, batch: int, rng: np.random.Generator):
        self.cfg = cfg
        self.batch = batch
        free = np.array(cfg.free_cells(), dtype=np.int64)  # (F, 2)
        self.free = free
        blocked = np.ones((cfg.n, cfg.n), dtype=bool)
        blocked[free[:, 0], free[:, 1]] = False
        self._blocked = blocked
        self._delta = np.array([ACTION_DELTA[a] for a in Action], dtype=np.int64)
        self.taxi = np.zeros((batch, 2), dtype=np.int64)
        self.passengers = np.zeros((batch, cfg.k, 2), dtype=np.int64)
        self.reset_all(rng)

    def reset_all(self, rng: np.random.Generator) -> None:
        """Fresh uniform valid state per copy: k+1 distinct free cells."""
        F = len(self.free)
        ranks = rng.random((self.batch, F)).argsort(axis=1)[:, : self.cfg.k + 1]
        cells = self.free[ranks]  # (B, k+1, 2)
        self.taxi = cells[:, 0].copy()
        self.passengers = cells[:, 1:].copy()

    def state(self, b: int) -> GridState:
        return GridState(
            (int(self.taxi[b, 0]), int(self.taxi[b, 1])),
            tuple((int(x), int(y)) for x, y in self.passengers[b]),
        )

    def features(self) -> np.ndarray:
        """(B, 2k) signed offsets, same layout as features()."""
        return (self.passengers - self.taxi[:, None, :]).reshape(self.batch, -1)

    def distances(self) -> np.ndarray:
        """(B, k) manhattan distances from taxi to each passenger."""
        return np.abs(self.passengers - self.taxi[:, None, :]).sum(axis=2)

    def step(
        self, actions: np.ndarray, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray]:
        """Advance all copies. Returns (collected, wall_hit): collected is the
        1-based passenger index per copy with 0 meaning none."""
        target = self.taxi + self._delta[actions]
        inside = (target[:, 0] >= 0) & (target[:, 0] < self.cfg.n)
        inside &= (target[:, 1] >= 0) & (target[:, 1] < self.cfg.n)
        ok = inside.copy()
        ok[inside] = ~self._blocked[target[inside, 0], target[inside, 1]]
        new_taxi = np.where(ok[:, None], target, self.taxi)
        hit_mask = (self.passengers == new_taxi[:, None, :]).all(axis=2)  # (B, k)
        collected = np.where(
            hit_mask.any(axis=1), hit_mask.argmax(axis=1) + 1, 0
        ).astype(np.int64)
        self.taxi = new_taxi
        picked = np.flatnonzero(collected)
        if picked.size:
            self._respawn(picked, collected[picked] - 1, rng)
        return collected, ~ok

    def _respawn(
        self, rows: np.ndarray, slot: np.ndarray, rng: np.random.Generator
    ) -> None:
        F = len(self.free)
        pending = rows.copy()
        pslot = slot.copy()
        while pending.size:
            cand = self.free[rng.integers(F, size=pending.size)]  # (P, 2)
            clash = (cand == self.taxi[pending]).all(axis=1)
            clash |= (cand[:, None, :] == self.passengers[pending]).all(axis=2).any(
                axis=1
            )
            good = ~clash
            gr = pending[good]
            self.passengers[gr, pslot[good]] = cand[good]
            pending, pslot = pending[~good], pslot[~good]


def count_states(cfg: GridConfig) -> int:
    """|free| * (|free| - 1) * ... for taxi plus k distinct passenger cells."""
    f = len(cfg.free_cells())
    total = 1
    for i in range(cfg.k + 1):
        total *= f - i
    return total

"""Game solving: the follow-expert-advice game and the multi-agent game.

Advice game: Player 2 reveals the leaf region of the current state, Player 1
answers with an action, earning 1 when it matches the region's advised
action. The payoff is lexicographic: a monitor violation is absorbing-worst
for Player 1, and among violation-free plays the worst-case agreement count
is maximized by backward induction over a finite horizon.

Multi-agent game: a bus (Player 1) must alternate between two stations
forever without ever sharing a cell with a book-driven taxi (Player 2, moving
first). Solved as a safety-restricted Buechi game by the classical nested
fixpoint on the phase product.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .plant import (
    ACTION_NAMES,
    Action,
    GridConfig,
    GridState,
    move_taxi,
    random_state,
    step,
)
from .magicbook import TreePolicy, book_action
from .wizard import Wizard
from .arena import Arena, MultiArena, SpecMonitor, region_of
from .bmc import Trace

NEG_INF = float("-inf")  # Violation value: absorbing-worst for Player 1

__all__ = [
    "AdviceValue",
    "AdviceStrategy",
    "Controller",
    "solve_advice",
    "agree_count",
    "run_controller",
    "shield_policy",
    "Unrealizable",
    "MultiStrategy",
    "solve_multiagent",
    "run_multiagent",
]


# ---------------------------------------------------------------------------
# Advice game


def _advised_mask(arena) -> np.ndarray:
    """(V, 4) bool: advised action b available to Player 2 at each vertex."""
    mask = np.zeros((arena.n_vertices, 4), dtype=bool)
    for v in range(arena.n_vertices):
        for rid in arena.legal_moves(v):
            mask[v, arena.table[rid].action] = True
    return mask


@dataclass
class AdviceValue:
    """Guaranteed agreement counts V[h, v]; -inf marks Violation (no way to
    stay safe for h more steps from v)."""

    table: np.ndarray  # (H+1, V) float64
    horizon: int

    def at(self, v: int, h: int) -> float:
        return float(self.table[h, v])

    def x_star(self, v: int) -> float:
        """Value of the full-horizon game from initial vertex v."""
        return float(self.table[self.horizon, v])


class AdviceStrategy:
    """Optimal Player-1 replies: action(vertex, advised action, horizon).

    Ties prefer agreeing with the advice, then canonical action order. The
    strategy is read off the value table on demand.
    """

    def __init__(self, arena, value: AdviceValue):
        self.arena = arena
        self.value = value

    def action(self, v: int, advised: Action, h: int) -> Action:
        if h < 1:
            raise ValueError("strategy needs at least one remaining step")
        vals = np.append(self.value.table[h - 1], NEG_INF)
        scores = vals[self.arena.delta[v]].copy()
        scores[advised] += 1.0
        best = scores.max()
        if best == NEG_INF:
            raise ValueError(f"no safe action at vertex {v} with horizon {h}")
        if scores[advised] == best:
            return Action(int(advised))
        return Action(int(scores.argmax()))

    def to_json(self, max_horizon: Optional[int] = None) -> dict:
        """Tabular export: per (vertex, advised action), the reply as runs of
        horizons [h_from, h_to] with one action each."""
        H = min(max_horizon or self.value.horizon, self.value.horizon)
        out = []
        for v in range(self.arena.n_vertices):
            per_advice = {}
            for b in range(4):
                runs = []
                prev = None
                for h in range(1, H + 1):
                    if self.value.table[h, v] == NEG_INF:
                        break
                    a = int(self.action(v, Action(b), h))
                    if prev is not None and prev[2] == a:
                        prev[1] = h
                    else:
                        prev = [h, h, a]
                        runs.append(prev)
                per_advice[ACTION_NAMES[b]] = [
                    {"h_from": lo, "h_to": hi, "action": ACTION_NAMES[a]}
                    for lo, hi, a in runs
                ]
            out.append(per_advice)
        return {"horizon": H, "replies": out}


def solve_advice(
    arena, monitor: Optional[SpecMonitor] = None, horizon: int = 1
) -> tuple[AdviceValue, AdviceStrategy]:
    """Backward induction for the lexicographic advice game.

    V(v, 0) = 0; V(v, h) = min over advised actions b at v of
    max over a of [1 if a == b else 0] + V(delta(v, a), h - 1),
    where a violating successor contributes -inf (Violation annihilates).
    The spec monitor rides inside the arena vertices; passing one here only
    asserts it is the same object the arena was built with.
    """
    if monitor is not None and getattr(arena, "monitor", monitor) is not monitor:
        raise ValueError("monitor differs from the one the arena was built with")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    V = arena.n_vertices
    advised = _advised_mask(arena)
    if not advised.any(axis=1).all():
        raise ValueError("every vertex needs at least one legal Player-2 move")
    table = np.empty((horizon + 1, V), dtype=np.float64)
    table[0] = 0.0
    delta = arena.delta
    for h in range(1, horizon + 1):
        vals = np.append(table[h - 1], NEG_INF)
        M = vals[delta]  # (V, 4): value of playing a
        best_any = M.max(axis=1, keepdims=True)
        payoff = np.maximum(best_any, M + 1.0)  # best reply if b is advised
        table[h] = np.where(advised, payoff, np.inf).min(axis=1)
    value = AdviceValue(table, horizon)
    return value, AdviceStrategy(arena, value)


class Controller:
    """Concrete closed-loop policy for the advice game.

    Tracks the monitor state and the remaining horizon; at each concrete
    state it forms the abstract vertex and the leaf region, then plays the
    strategy's reply. The horizon refreshes when exhausted, so the guarantee
    applies per window of length H.
    """

    def __init__(self, strategy: AdviceStrategy, p: TreePolicy):
        self.strategy = strategy
        self.arena: Arena = strategy.arena
        self.monitor: SpecMonitor = self.arena.monitor
        self.book = p
        self.m = self.monitor.init
        self.h = strategy.value.horizon

    def reset(self, s0: GridState) -> None:
        self.m = self.monitor.init
        self.h = self.strategy.value.horizon
        v0 = self.arena.abstract_of(s0, self.m)
        if self.strategy.value.x_star(v0) == NEG_INF:
            raise ValueError("no violation-free strategy from this initial state")

    def act(self, s: GridState) -> Action:
        if self.h == 0:
            self.h = self.strategy.value.horizon
        v = self.arena.abstract_of(s, self.m)
        region = region_of(self.book, s, self.arena.table, self.arena.cfg)
        return self.strategy.action(v, region.action, self.h)

    def observe(self, s_next: GridState) -> None:
        g = self.arena.group_of_cell[s_next.taxi]
        self.m = self.monitor.step(self.m, self.arena.groups[g])
        self.h -= 1

    def to_json(self) -> dict:
        return {
            "horizon": self.strategy.value.horizon,
            "monitor": self.monitor.to_json(),
            "strategy": self.strategy.to_json(),
        }


def agree_count(c, sigma: Trace, p: TreePolicy) -> int:
    """Steps of the trace whose action matches the book's advice. Since a
    trace records the controller's actions, this is a pure function of the
    trace and book; the controller argument documents whose trace it is."""
    return sum(
        int(a == book_action(p, s)) for s, a in zip(sigma.states, sigma.actions)
    )


def run_controller(
    c: Controller,
    cfg: GridConfig,
    steps: int,
    rng: np.random.Generator,
    s0: Optional[GridState] = None,
) -> tuple[Trace, dict]:
    """Closed-loop rollout with an event log (pickups, gas visits, wall hits,
    agreements, monitor violations)."""
    s = s0 if s0 is not None else random_state(cfg, rng)
    c.reset(s)
    states = [s]
    actions: list[Action] = []
    events: dict = {
        "pickups": [],
        "gas_visits": [],
        "wall_hits": [],
        "violations": [],
        "agreements": 0,
    }
    gas = getattr(c.monitor, "gas", None)
    m_concrete = c.monitor.t - 1 if gas is not None else None
    for i in range(steps):
        a = c.act(s)
        if a == book_action(c.book, s):
            events["agreements"] += 1
        out = step(cfg, s, a, rng)
        if out.collected is not None:
            events["pickups"].append((i, out.collected))
        if out.wall_hit:
            events["wall_hits"].append(i)
        s = out.next
        if gas is not None:
            if s.taxi == gas:
                events["gas_visits"].append(i)
                m_concrete = c.monitor.t - 1
            else:
                m_concrete -= 1
                if m_concrete < 0:
                    events["violations"].append(i)
        c.observe(s)
        states.append(s)
        actions.append(a)
    return Trace(tuple(states), tuple(actions)), events


def shield_policy(w: Wizard, cfg: GridConfig) -> Callable[[GridState], Action]:
    """Runtime shield baseline: the wizard's action unless it would hit a
    wall, in which case the first legal action in canonical order."""

    def policy(s: GridState) -> Action:
        a = w.policy(s)
        if not move_taxi(cfg, s.taxi, a)[1]:
            return a
        for b in Action:
            if not move_taxi(cfg, s.taxi, b)[1]:
                return Action(b)
        return a  # fully enclosed cell: nothing legal, keep the suggestion

    return policy


# ---------------------------------------------------------------------------
# Multi-agent game


@dataclass(frozen=True)
class Unrealizable:
    """No winning Player-1 strategy exists from any usable start."""

    reason: str = "initial vertices lie outside the winning region"


class MultiStrategy:
    """Positional winning strategy on the phase product of a MultiArena.

    choice[p*V + v, a2] is Player 1's reply (or -1 outside the winning
    region); phase p says which station the bus currently seeks.
    """

    def __init__(self, ma: MultiArena, winning: np.ndarray, choice: np.ndarray):
        self.ma = ma
        self.winning = winning  # (2V,) bool
        self.choice = choice  # (2V, 4) int8

    def product_id(self, v: int, phase: int) -> int:
        return phase * self.ma.n_vertices + v

    def action(self, v: int, phase: int, a2: Action) -> Action:
        a1 = int(self.choice[self.product_id(v, phase), a2])
        if a1 < 0:
            raise ValueError(f"vertex {v} phase {phase} is outside the winning region")
        return Action(a1)

    def winning_starts(self, phase: int = 0) -> np.ndarray:
        V = self.ma.n_vertices
        return np.flatnonzero(self.winning[phase * V : (phase + 1) * V])

    def to_json(self) -> dict:
        out = []
        for pv in np.flatnonzero(self.winning):
            v = int(pv % self.ma.n_vertices)
            out.append(
                {
                    "vertex": v,
                    "phase": int(pv // self.ma.n_vertices),
                    "replies": {
                        ACTION_NAMES[a2]: ACTION_NAMES[int(self.choice[pv, a2])]
                        for a2 in self.ma.legal2[v]
                    },
                }
            )
        return {"winning": out}


def _product_delta(ma: MultiArena) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Phase-product transition (2V, 4, 4), Buechi set, and legality mask."""
    V = ma.n_vertices
    flip0 = ma.targets[0]  # completing phase 0's goal
    flip1 = ma.targets[1]
    pdelta = np.empty((2 * V, 4, 4), dtype=np.int64)
    base = ma.delta.astype(np.int64)
    next_phase0 = np.where(flip0, 1, 0)  # phase after leaving v in phase 0
    next_phase1 = np.where(flip1, 0, 1)
    pdelta[:V] = base + (next_phase0[:, None, None] * V)
    pdelta[V:] = base + (next_phase1[:, None, None] * V)
    buechi = np.concatenate([flip0, flip1])
    legal = np.zeros((V, 4), dtype=bool)
    for v in range(V):
        legal[v, list(ma.legal2[v])] = True
    legal2 = np.concatenate([legal, legal])
    return pdelta, buechi, legal2


def _cpre(target: np.ndarray, pdelta: np.ndarray, legal2: np.ndarray) -> np.ndarray:
    """Vertices where for every legal Player-2 move some Player-1 reply lands
    in the target set. Player 2 moves first."""
    hit = target[pdelta]  # (2V, a1, a2)
    exists_a1 = hit.any(axis=1)  # (2V, a2)
    return np.where(legal2, exists_a1, True).all(axis=1)


def solve_multiagent(ma: MultiArena) -> MultiStrategy | Unrealizable:
    """Safety + two-target recurrence via the nested Buechi fixpoint.

    Restricts to the safe region, then computes nu Y. mu X. attractor of
    (Buechi and CPre(Y)) inside the safe set; extracts a positional strategy
    by attractor layering. Unrealizable when no safe non-crash start wins.
    """
    V = ma.n_vertices
    pdelta, buechi, legal2 = _product_delta(ma)
    safe = np.concatenate([ma.safe, ma.safe])

    # largest safe sub-game: stay in safe forever (Player 1 vs Player 2)
    S = safe.copy()
    while True:
        S2 = S & _cpre(S, pdelta, legal2)
        if (S2 == S).all():
            break
        S = S2

    Y = S.copy()
    while True:
        seed = buechi & S & _cpre(Y, pdelta, legal2)
        X = seed.copy()
        while True:
            X2 = X | (S & _cpre(X, pdelta, legal2))
            if (X2 == X).all():
                break
            X = X2
        if (X == Y).all():
            break
        Y = X

    winning = Y
    if not (winning[:V] & ma.safe).any():
        return Unrealizable()

    # strategy: from seed vertices step anywhere inside Y (re-arming the
    # attractor); elsewhere follow decreasing attractor layers toward seed
    choice = np.full((2 * V, 4), -1, dtype=np.int8)
    seed = buechi & S & _cpre(winning, pdelta, legal2)

    def record(vs: np.ndarray, target: np.ndarray) -> None:
        for pv in np.flatnonzero(vs):
            for a2 in range(4):
                if not legal2[pv, a2]:
                    continue
                for a1 in range(4):
                    if target[pdelta[pv, a1, a2]]:
                        choice[pv, a2] = a1
                        break

    # fill seed replies first, then attractor layers
    record(seed & winning, winning)
    X = seed & winning
    while True:
        grow = winning & ~X & _cpre(X, pdelta, legal2)
        if not grow.any():
            break
        record(grow, X)
        X = X | grow
    return MultiStrategy(ma, winning, choice)


def run_multiagent(
    strat: MultiStrategy,
    steps: int,
    rng: np.random.Generator,
    start: Optional[int] = None,
) -> dict:
    """Rollout of the bus strategy against the book-driven taxi.

    Returns the event log: crash step (None expected), station visit steps,
    and the number of station alternations (phase flips).
    """
    ma = strat.ma
    V = ma.n_vertices
    starts = strat.winning_starts(0)
    if len(starts) == 0:
        raise ValueError("empty winning region")
    v = int(start) if start is not None else int(starts[rng.integers(len(starts))])
    if not strat.winning[v]:
        raise ValueError("start vertex is not winning")
    phase = 0
    events: dict = {"crash": None, "visits": [[], []], "alternations": 0,
                    "cells": [(ma.bus_of(v), ma.taxi_of(v))]}
    for i in range(steps):
        a2 = Action(int(ma.legal2[v][rng.integers(len(ma.legal2[v]))]))
        a1 = strat.action(v, phase, a2)
        nxt = int(ma.delta[v, a1, a2])
        if ma.targets[phase][v]:
            phase = 1 - phase
            events["alternations"] += 1
        v = nxt
        events["cells"].append((ma.bus_of(v), ma.taxi_of(v)))
        if not ma.safe[v]:
            events["crash"] = i
            break
        for j, st in enumerate(ma.cfg.stations):
            if ma.bus_of(v) == st:
                events["visits"][j].append(i)
    return events

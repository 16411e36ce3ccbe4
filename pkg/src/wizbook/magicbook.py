"""Magic books: decision trees and random forests distilled from a wizard.

Trees split on the 2k integer offset features with predicates feature_j <= c.
Thresholds are midpoints between adjacent observed values, snapped to
half-integers, so no integer feature vector ever sits on a boundary and every
leaf denotes an exact box of states. Forests vote; ties break in canonical
action order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

from .plant import (
    ACTION_NAMES,
    Action,
    GridConfig,
    GridState,
    VecTaxi,
    action_from_name,
    features,
    random_state,
    step,
)
from .util import seed_stream
from .wizard import Wizard

FeatureInput = Union[GridState, np.ndarray, Sequence[int]]


def _featurize(s: FeatureInput) -> np.ndarray:
    if isinstance(s, GridState):
        tx, ty = s.taxi
        out = np.empty(2 * len(s.passengers), dtype=np.int64)
        for i, (px, py) in enumerate(s.passengers):
            out[2 * i] = px - tx
            out[2 * i + 1] = py - ty
        return out
    return np.asarray(s, dtype=np.int64)


@dataclass(frozen=True)
class SplitPredicate:
    """The test feature_j <= thr, with thr a half-integer."""

    feat: int
    thr: float

    def holds(self, f: Sequence[int]) -> bool:
        return f[self.feat] <= self.thr


@dataclass(frozen=True)
class TreePath:
    """Root-to-leaf trace: signed literals plus the leaf's action.

    literals holds (predicate, took_le) pairs; took_le means the <= branch.
    """

    literals: tuple[tuple[SplitPredicate, bool], ...]
    action: Action

    def box(self, n: int, n_features: int) -> tuple[np.ndarray, np.ndarray]:
        """Integer bounds [lo, hi] per feature implied by the literals, within
        the feature range of an n-sided grid."""
        lo = np.full(n_features, -(n - 1), dtype=np.int64)
        hi = np.full(n_features, n - 1, dtype=np.int64)
        for pred, took_le in self.literals:
            if took_le:
                hi[pred.feat] = min(hi[pred.feat], math.floor(pred.thr))
            else:
                lo[pred.feat] = max(lo[pred.feat], math.floor(pred.thr) + 1)
        return lo, hi

    def satisfiable(self, n: int, n_features: int) -> bool:
        lo, hi = self.box(n, n_features)
        return bool(np.all(lo <= hi))

    def contains(self, f: Sequence[int]) -> bool:
        return all(
            pred.holds(f) == took_le for pred, took_le in self.literals
        )


class DecisionTree:
    """Flat-array binary CART tree. Node 0 is the root; feat[i] = -1 marks a
    leaf whose action is leaf[i], else thr[i] splits into lo[i] (<=) / hi[i]."""

    def __init__(self, feat, thr, lo, hi, leaf):
        self.feat = np.asarray(feat, dtype=np.int32)
        self.thr = np.asarray(thr, dtype=np.float64)
        self.lo = np.asarray(lo, dtype=np.int32)
        self.hi = np.asarray(hi, dtype=np.int32)
        self.leaf = np.asarray(leaf, dtype=np.int8)

    @property
    def n_nodes(self) -> int:
        return len(self.feat)

    def depth(self) -> int:
        def rec(i: int) -> int:
            if self.feat[i] < 0:
                return 0
            return 1 + max(rec(self.lo[i]), rec(self.hi[i]))

        return rec(0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf node index per row of the (B, 2k) feature matrix."""
        X = np.asarray(X)
        node = np.zeros(len(X), dtype=np.int32)
        active = self.feat[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            goes_lo = X[idx, self.feat[nd]] <= self.thr[nd]
            node[idx] = np.where(goes_lo, self.lo[nd], self.hi[nd])
            active[idx] = self.feat[node[idx]] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.leaf[self.apply(X)].astype(np.int64)

    def path(self, s: FeatureInput) -> TreePath:
        f = _featurize(s)
        lits: list[tuple[SplitPredicate, bool]] = []
        i = 0
        while self.feat[i] >= 0:
            pred = SplitPredicate(int(self.feat[i]), float(self.thr[i]))
            took_le = pred.holds(f)
            lits.append((pred, took_le))
            i = int(self.lo[i] if took_le else self.hi[i])
        return TreePath(tuple(lits), Action(int(self.leaf[i])))

    def all_paths(self) -> Iterator[TreePath]:
        """Every root-to-leaf path, left (<=) branches first."""

        def rec(i: int, acc: tuple) -> Iterator[TreePath]:
            if self.feat[i] < 0:
                yield TreePath(acc, Action(int(self.leaf[i])))
                return
            pred = SplitPredicate(int(self.feat[i]), float(self.thr[i]))
            yield from rec(int(self.lo[i]), acc + ((pred, True),))
            yield from rec(int(self.hi[i]), acc + ((pred, False),))

        yield from rec(0, ())

    def to_json(self) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            if self.feat[i] < 0:
                nodes.append({"leaf": ACTION_NAMES[self.leaf[i]]})
            else:
                nodes.append(
                    {
                        "feat": int(self.feat[i]),
                        "thr": float(self.thr[i]),
                        "lo": int(self.lo[i]),
                        "hi": int(self.hi[i]),
                    }
                )
        return {"nodes": nodes}

    @classmethod
    def from_json(cls, obj: dict) -> "DecisionTree":
        nodes = obj["nodes"]
        m = len(nodes)
        feat = np.full(m, -1, dtype=np.int32)
        thr = np.zeros(m, dtype=np.float64)
        lo = np.zeros(m, dtype=np.int32)
        hi = np.zeros(m, dtype=np.int32)
        leaf = np.full(m, -1, dtype=np.int8)
        for i, nd in enumerate(nodes):
            if "leaf" in nd:
                leaf[i] = action_from_name(nd["leaf"]).value
            else:
                feat[i], thr[i], lo[i], hi[i] = nd["feat"], nd["thr"], nd["lo"], nd["hi"]
        return cls(feat, thr, lo, hi, leaf)


@dataclass
class TreePolicy:
    """One tree or a majority-vote forest over a shared feature space."""

    trees: list[DecisionTree]
    kind: str = "single"  # "single" | "random-forest"

    def __post_init__(self) -> None:
        if not self.trees:
            raise ValueError("a tree policy needs at least one tree")
        if self.kind not in ("single", "random-forest"):
            raise ValueError(f"unknown policy kind {self.kind!r}")

    def votes(self, X: np.ndarray) -> np.ndarray:
        """(n_trees, B) leaf actions per tree."""
        return np.stack([t.predict(X) for t in self.trees])

    def actions(self, X: np.ndarray) -> np.ndarray:
        """Majority vote per row; ties break toward the lowest action value."""
        v = self.votes(np.atleast_2d(X))
        counts = (v[:, :, None] == np.arange(4)).sum(axis=0)  # (B, 4)
        return counts.argmax(axis=1)

    def to_json(self) -> dict:
        return {"trees": [t.to_json() for t in self.trees]}

    @classmethod
    def from_json(cls, obj: dict) -> "TreePolicy":
        trees = [DecisionTree.from_json(t) for t in obj["trees"]]
        return cls(trees, "single" if len(trees) == 1 else "random-forest")


def book_action(p: TreePolicy, s: FeatureInput) -> Action:
    """Majority vote over the trees' leaf actions, canonical tie-break."""
    return Action(int(p.actions(_featurize(s)[None, :])[0]))


@dataclass
class LabeledDataset:
    """Rows of (feature vector, action label)."""

    X: np.ndarray  # (N, 2k) integer features
    y: np.ndarray  # (N,) action values

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X)
        self.y = np.asarray(self.y)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValueError("features and labels must align")

    def __len__(self) -> int:
        return len(self.X)


def collect_dataset(
    w: Wizard, episodes: int, steps: int, rng: np.random.Generator
) -> LabeledDataset:
    """Greedy wizard rollouts; records (features, chosen action) for every
    visited state, duplicates kept. Episodes run in lockstep."""
    k2 = 2 * w.cfg.k
    if episodes == 0 or steps == 0:
        return LabeledDataset(np.empty((0, k2), dtype=np.int16), np.empty(0, dtype=np.int8))
    env = VecTaxi(w.cfg, episodes, rng)
    xs, ys = [], []
    for _ in range(steps):
        F = env.features()
        acts = w.actions(F)
        xs.append(F.astype(np.int16))
        ys.append(acts.astype(np.int8))
        env.step(acts, rng)
    return LabeledDataset(np.concatenate(xs), np.concatenate(ys))


def _snap_half(mid: float) -> float:
    """Snap a midpoint of two integers to the half-integer grid (downward when
    the midpoint is whole; either side splits the observed data identically)."""
    return mid if mid != math.floor(mid) else mid - 0.5


def _best_split(
    X: np.ndarray, y: np.ndarray, idx: np.ndarray, feats: np.ndarray, n_classes: int = 4
) -> Optional[tuple[int, float]]:
    """Lowest-weighted-Gini (feature, half-integer threshold) over candidate
    midpoints; ties prefer the lowest feature index, then lowest threshold.
    Returns None when no feature varies on the subset."""
    m = len(idx)
    ysub = y[idx]
    best = (np.inf, -1, 0.0)  # (weighted gini, feature, threshold)
    for j in feats:
        v = X[idx, j].astype(np.int64)
        vmin, vmax = int(v.min()), int(v.max())
        if vmin == vmax:
            continue
        span = vmax - vmin + 1
        hist = np.bincount(
            (v - vmin) * n_classes + ysub, minlength=span * n_classes
        ).reshape(span, n_classes)
        present = np.flatnonzero(hist.sum(axis=1))
        cum = hist.cumsum(axis=0)
        # candidate boundaries fall between consecutive present values
        left = cum[present[:-1]]  # (C, 4) class counts on the <= side
        total = cum[-1]
        right = total - left
        ml = left.sum(axis=1)
        mr = m - ml
        gl = 1.0 - (left * left).sum(axis=1) / (ml * ml)
        gr = 1.0 - (right * right).sum(axis=1) / (mr * mr)
        wg = (ml * gl + mr * gr) / m
        c = int(np.argmin(wg))
        if wg[c] < best[0]:
            lo_v = vmin + int(present[c])
            hi_v = vmin + int(present[c + 1])
            best = (float(wg[c]), int(j), _snap_half((lo_v + hi_v) / 2))
    if best[1] < 0:
        return None
    return best[1], best[2]


def fit_tree(
    d: LabeledDataset,
    max_depth: Optional[int],
    rng: Optional[np.random.Generator] = None,
    mtry: Optional[int] = None,
    n_classes: int = 4,
) -> DecisionTree:
    """CART with Gini impurity. Splits while a node is impure and some feature
    varies, up to max_depth (None = unbounded); leaves take the majority label
    with canonical tie-break. mtry enables per-split feature subsampling.
    n_classes widens the label alphabet beyond actions (explanation trees)."""
    if len(d) == 0:
        raise ValueError("cannot fit a tree on an empty dataset")
    X, y = d.X, d.y.astype(np.int64)
    n_features = X.shape[1]
    all_feats = np.arange(n_features)

    feat, thr, lo, hi, leaf = [], [], [], [], []

    def new_node() -> int:
        feat.append(-1)
        thr.append(0.0)
        lo.append(0)
        hi.append(0)
        leaf.append(-1)
        return len(feat) - 1

    def build(idx: np.ndarray, depth: int) -> int:
        node = new_node()
        counts = np.bincount(y[idx], minlength=n_classes)
        pure = counts.max() == len(idx)
        split = None
        if not pure and (max_depth is None or depth < max_depth):
            if mtry is not None and mtry < n_features:
                feats = np.sort(rng.choice(n_features, size=mtry, replace=False))
            else:
                feats = all_feats
            split = _best_split(X, y, idx, feats, n_classes)
        if split is None:
            leaf[node] = int(counts.argmax())
            return node
        j, c = split
        mask = X[idx, j] <= c
        feat[node], thr[node] = j, c
        lo[node] = build(idx[mask], depth + 1)
        hi[node] = build(idx[~mask], depth + 1)
        return node

    build(np.arange(len(d)), 0)
    return DecisionTree(feat, thr, lo, hi, leaf)


def fit_forest(
    d: LabeledDataset,
    n_trees: int,
    max_depth: Optional[int],
    rng: np.random.Generator,
    bootstrap: bool = True,
    mtry: Optional[int] = None,
) -> TreePolicy:
    """Random forest: bootstrap resamples plus per-split feature subsampling
    (default ceil(sqrt(2k)) features). bootstrap=False with mtry=2k and
    n_trees=1 degenerates to fit_tree."""
    if len(d) == 0:
        raise ValueError("cannot fit a forest on an empty dataset")
    if mtry is None:
        mtry = math.ceil(math.sqrt(d.X.shape[1]))
    trees = []
    for _ in range(n_trees):
        if bootstrap:
            take = rng.integers(len(d), size=len(d))
            sample = LabeledDataset(d.X[take], d.y[take])
        else:
            sample = d
        trees.append(fit_tree(sample, max_depth, rng=rng, mtry=mtry))
    return TreePolicy(trees, "random-forest" if n_trees > 1 else "single")


def _closed_loop_pickups(
    p: TreePolicy, cfg: GridConfig, episodes: int, steps: int, rng: np.random.Generator
) -> float:
    """Average passengers collected per episode when the book drives."""
    env = VecTaxi(cfg, episodes, rng)
    total = 0
    for _ in range(steps):
        acts = p.actions(env.features()).astype(np.int64)
        collected, _ = env.step(acts, rng)
        total += int((collected > 0).sum())
    return total / episodes


def distill_tree(
    w: Wizard,
    depth: int = 10,
    *,
    bootstrap_episodes: int = 1000,
    steps: int = 1000,
    rounds: int = 8,
    aggregate_episodes: int = 400,
    validate_episodes: int = 80,
    root_seed: int = 0,
) -> tuple[TreePolicy, dict]:
    """Distill the wizard into one depth-bounded tree by iterative dataset
    aggregation.

    A tree cloned from wizard rollouts alone degrades in closed loop: its
    small mistakes drift it into states the training data never covered.
    Each round therefore rolls out the current tree, labels the states it
    actually visits with the wizard's actions, grows the dataset, and refits.
    Closed-loop quality is not monotone across rounds, so every round's tree
    is scored on the same held-out validation episodes (fresh stream per
    round, hence paired scores) and the best round wins.

    Labels always come from the wizard; only the visited states shift toward
    the tree's own trajectory distribution. Returns the chosen policy and a
    report with the validation curve.
    """
    if rounds < 1:
        raise ValueError(f"need at least one round, got {rounds}")
    rng = seed_stream(root_seed, "bootstrap")
    d = collect_dataset(w, bootstrap_episodes, steps, rng)
    X, y = d.X, d.y
    best, best_val, chosen, curve = None, -1.0, 0, []
    for rnd in range(rounds):
        p = TreePolicy([fit_tree(LabeledDataset(X, y), depth)], "single")
        val = _closed_loop_pickups(
            p, w.cfg, validate_episodes, steps, seed_stream(root_seed, "validate")
        )
        curve.append(val)
        if val > best_val:
            best, best_val, chosen = p, val, rnd
        if rnd < rounds - 1:
            env = VecTaxi(w.cfg, aggregate_episodes, rng)
            xs = []
            for _ in range(steps):
                F = env.features()
                xs.append(F.astype(np.int16))
                env.step(p.actions(F).astype(np.int64), rng)
            F_new = np.concatenate(xs)
            X = np.concatenate([X, F_new])
            y = np.concatenate([y, w.actions(F_new).astype(np.int8)])
    report = {
        "validation_curve": curve,
        "chosen_round": chosen,
        "validation_pickups": best_val,
        "dataset_rows": int(len(X)),
    }
    return best, report


def fidelity(
    p: TreePolicy, w: Wizard, sample: Union[np.ndarray, Sequence[GridState]]
) -> dict:
    """Agreement and per-action precision/recall/F1 of the book against the
    wizard's labels on the given states (or feature matrix)."""
    if isinstance(sample, np.ndarray) and sample.ndim == 2:
        F = sample
    else:
        F = np.stack([_featurize(s) for s in sample])
    if len(F) == 0:
        raise ValueError("fidelity needs a nonempty sample")
    truth = w.actions(F)
    pred = p.actions(F)
    agreement = float(np.mean(truth == pred))
    per_action = {}
    f1s = []
    for a in range(4):
        tp = int(np.sum((pred == a) & (truth == a)))
        fp = int(np.sum((pred == a) & (truth != a)))
        fn = int(np.sum((pred != a) & (truth == a)))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        per_action[ACTION_NAMES[a]] = {"precision": prec, "recall": rec, "f1": f1}
        f1s.append(f1)
    return {
        "agreement": agreement,
        "macro_f1": float(np.mean(f1s)),
        "per_action": per_action,
    }


def performance(
    cfg: GridConfig,
    policy: Callable[[GridState], Action],
    episodes: int,
    steps: int,
    rng: np.random.Generator,
) -> dict:
    """Greedy rollouts of any positional policy; passengers collected per
    episode, reported as mean and max."""
    collected = []
    for _ in range(episodes):
        s = random_state(cfg, rng)
        got = 0
        for _ in range(steps):
            out = step(cfg, s, policy(s), rng)
            got += out.collected is not None
            s = out.next
        collected.append(got)
    return {
        "avg_collected": float(np.mean(collected)) if collected else 0.0,
        "max_collected": int(max(collected)) if collected else 0,
        "per_episode": collected,
    }


def tree_policy_fn(p: TreePolicy) -> Callable[[GridState], Action]:
    return lambda s: book_action(p, s)


def wizard_policy_fn(w: Wizard) -> Callable[[GridState], Action]:
    return w.policy


def to_dot(p: TreePolicy, feature_names: Optional[Sequence[str]] = None) -> str:
    """Graphviz DOT text for human inspection; one subgraph per tree."""
    lines = ["digraph book {", "  node [shape=box];"]
    for t_i, t in enumerate(p.trees):
        prefix = f"t{t_i}_"
        for i in range(t.n_nodes):
            if t.feat[i] < 0:
                lines.append(
                    f'  {prefix}{i} [label="{ACTION_NAMES[t.leaf[i]]}" shape=ellipse];'
                )
            else:
                j = int(t.feat[i])
                name = feature_names[j] if feature_names else default_feature_name(j)
                lines.append(f'  {prefix}{i} [label="{name} <= {t.thr[i]}"];')
                lines.append(f'  {prefix}{i} -> {prefix}{t.lo[i]} [label="y"];')
                lines.append(f'  {prefix}{i} -> {prefix}{t.hi[i]} [label="n"];')
    lines.append("}")
    return "\n".join(lines)


def default_feature_name(j: int) -> str:
    axis = "dx" if j % 2 == 0 else "dy"
    return f"{axis}{j // 2 + 1}"

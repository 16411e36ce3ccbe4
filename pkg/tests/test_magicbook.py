"""Magic book tests: CART contract, half-integer thresholds, paths and voting,
JSON schema, fidelity and performance measurement."""
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wizbook.plant import ACTION_NAMES, Action, GridConfig, GridState, all_states, features
from wizbook.magicbook import (
    DecisionTree,
    LabeledDataset,
    SplitPredicate,
    TreePath,
    TreePolicy,
    book_action,
    collect_dataset,
    default_feature_name,
    fidelity,
    fit_forest,
    fit_tree,
    performance,
    to_dot,
    tree_policy_fn,
)
from wizbook.wizard import QNet, TrainConfig, Wizard, train


# ------------------------------------------------------------------ oracles

def oracle_predict(tree_json: dict, f) -> int:
    """Independent tree evaluation: walk the JSON structure recursively."""
    nodes = tree_json["nodes"]
    i = 0
    while "leaf" not in nodes[i]:
        nd = nodes[i]
        i = nd["lo"] if f[nd["feat"]] <= nd["thr"] else nd["hi"]
    return ACTION_NAMES.index(nodes[i]["leaf"])


def leaf_tree(a: Action) -> DecisionTree:
    return DecisionTree([-1], [0.0], [0], [0], [a.value])


def chaser_wizard(cfg: GridConfig) -> Wizard:
    """Hand-built linear net: Q = (dy, dx, -dy, -dx) summed over passengers,
    so the greedy action points along the largest total displacement."""
    k = cfg.k
    W = np.zeros((2 * k, 4))
    for i in range(k):
        W[2 * i + 1, 0] = 1.0   # up scores total dy
        W[2 * i, 1] = 1.0       # right scores total dx
        W[2 * i + 1, 2] = -1.0
        W[2 * i, 3] = -1.0
    return Wizard(QNet([W], [None]), cfg)


# ----------------------------------------------------------------- fit_tree

def test_fit_tree_toy_separable():
    d = LabeledDataset(np.array([[0, 0]] * 10 + [[3, 0]] * 10), np.array([0] * 10 + [1] * 10))
    t = fit_tree(d, None)
    assert t.depth() == 1
    assert t.feat[0] == 0 and t.thr[0] == 1.5  # midpoint of adjacent observed 0,3
    assert (t.predict(d.X) == d.y).all()


def test_fit_tree_single_class_is_leaf():
    d = LabeledDataset(np.array([[0, 0], [3, 1], [2, 2]]), np.array([2, 2, 2]))
    t = fit_tree(d, None)
    assert t.n_nodes == 1 and t.leaf[0] == 2


def test_fit_tree_depth_zero_majority_with_tiebreak():
    d = LabeledDataset(np.array([[0, 0]] * 4, dtype=np.int64), np.array([3, 3, 1, 1]))
    t = fit_tree(d, 0)
    assert t.n_nodes == 1
    assert t.leaf[0] == 1  # 2-2 tie: canonical order picks the lower action


def test_fit_tree_empty_dataset_rejected():
    with pytest.raises(ValueError):
        fit_tree(LabeledDataset(np.empty((0, 2)), np.empty(0)), None)


def test_fit_tree_consistent_data_reaches_full_accuracy():
    # xor-like labels: zero-gain first split must still be taken
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]] * 5)
    y = np.array([0, 1, 1, 0] * 5)
    t = fit_tree(LabeledDataset(X, y), None)
    assert (t.predict(X) == y).all()


def test_fit_tree_snaps_even_gap_midpoint_to_half_integer():
    d = LabeledDataset(np.array([[0, 0]] * 5 + [[2, 0]] * 5), np.array([0] * 5 + [1] * 5))
    t = fit_tree(d, None)
    assert t.thr[0] == 0.5


def test_fit_tree_respects_max_depth():
    rng = np.random.default_rng(0)
    X = rng.integers(-4, 5, size=(300, 4))
    y = rng.integers(0, 4, size=300)
    t = fit_tree(LabeledDataset(X, y), 3)
    assert t.depth() <= 3


# --------------------------------------------------------------- fit_forest

def test_fit_forest_deterministic_and_degenerate():
    rng = np.random.default_rng(1)
    X = rng.integers(-4, 5, size=(400, 4))
    y = (X[:, 0] > 0).astype(int) + 2 * (X[:, 1] > 0).astype(int)
    d = LabeledDataset(X, y)
    f1 = fit_forest(d, 5, 6, np.random.default_rng(7))
    f2 = fit_forest(d, 5, 6, np.random.default_rng(7))
    assert json.dumps(f1.to_json()) == json.dumps(f2.to_json())
    assert f1.kind == "random-forest" and len(f1.trees) == 5
    # paper-shaped configurations are constructible
    assert len(fit_forest(d, 5, 7, np.random.default_rng(0)).trees) == 5
    single = fit_forest(d, 1, 4, np.random.default_rng(0), bootstrap=False, mtry=4)
    assert json.dumps(single.trees[0].to_json()) == json.dumps(fit_tree(d, 4).to_json())
    assert single.kind == "single"


# ------------------------------------------------------------- paths, votes

def test_path_examples():
    t = leaf_tree(Action.DOWN)
    p = t.path(np.array([0, 0]))
    assert p.literals == () and p.action == Action.DOWN

    d = LabeledDataset(np.array([[0, 0]] * 3 + [[3, 0]] * 3), np.array([0] * 3 + [1] * 3))
    tree = fit_tree(d, None)
    cfg = GridConfig(5, 1)
    a = GridState((0, 0), ((3, 0),))
    b = GridState((1, 1), ((4, 1),))
    assert np.array_equal(features(cfg, a), features(cfg, b))
    pa, pb = tree.path(a), tree.path(b)
    assert pa == pb
    assert pa.contains(features(cfg, a))
    assert pa.action == Action(tree.predict(features(cfg, a)[None, :])[0])


def test_all_paths_partition_feature_box():
    rng = np.random.default_rng(3)
    X = rng.integers(-3, 4, size=(200, 3))
    y = rng.integers(0, 4, size=200)
    tree = fit_tree(LabeledDataset(X, y), 4)
    paths = list(tree.all_paths())
    probe = rng.integers(-3, 4, size=(500, 3))
    for f in probe:
        hits = [p for p in paths if p.contains(f)]
        assert len(hits) == 1
        assert hits[0] == tree.path(f)


def test_book_action_vote_examples():
    up, left, down, right = (leaf_tree(a) for a in (Action.UP, Action.LEFT, Action.DOWN, Action.RIGHT))
    f = np.array([0, 0])
    assert book_action(TreePolicy([up, up, left], "random-forest"), f) == Action.UP
    assert book_action(TreePolicy([up, up, down, down], "random-forest"), f) == Action.UP
    assert book_action(TreePolicy([down, down, right, right], "random-forest"), f) == Action.RIGHT
    assert book_action(TreePolicy([left], "single"), f) == Action.LEFT


def test_votes_order_independent_through_counts():
    trees = [leaf_tree(a) for a in (Action.DOWN, Action.RIGHT, Action.DOWN)]
    f = np.array([1, 1])
    a1 = book_action(TreePolicy(trees, "random-forest"), f)
    a2 = book_action(TreePolicy(trees[::-1], "random-forest"), f)
    assert a1 == a2 == Action.DOWN


# ------------------------------------------------------- property-based bits

rows = st.integers(-4, 4)


@st.composite
def dataset_strategy(draw):
    n_feat = draw(st.integers(2, 5))
    n = draw(st.integers(1, 50))
    X = draw(
        st.lists(
            st.lists(rows, min_size=n_feat, max_size=n_feat),
            min_size=n,
            max_size=n,
        )
    )
    y = draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
    return LabeledDataset(np.array(X, dtype=np.int64), np.array(y, dtype=np.int64))


@given(dataset_strategy(), st.integers(0, 5))
@settings(max_examples=80, deadline=None)
def test_prop_thresholds_half_integer_and_boundary_free(d, depth):
    t = fit_tree(d, depth)
    for i in range(t.n_nodes):
        if t.feat[i] >= 0:
            assert t.thr[i] == math.floor(t.thr[i]) + 0.5
    # no integer vector can sit on a boundary
    assert not np.any(d.X == t.thr[t.feat >= 0].reshape(-1, 1, 1)) if (t.feat >= 0).any() else True


@given(dataset_strategy(), st.integers(0, 4), st.integers(0, 2**31 - 1))
@settings(max_examples=80, deadline=None)
def test_prop_predict_matches_json_walk_oracle(d, depth, seed):
    t = fit_tree(d, depth)
    obj = t.to_json()
    probe = np.random.default_rng(seed).integers(-5, 6, size=(40, d.X.shape[1]))
    got = t.predict(probe)
    for f, g in zip(probe, got):
        assert oracle_predict(obj, f) == g
        assert t.path(f).action.value == g


@given(dataset_strategy())
@settings(max_examples=60, deadline=None)
def test_prop_paths_satisfiable_and_training_rows_contained(d):
    t = fit_tree(d, None)
    n = 6
    for p in t.all_paths():
        assert p.satisfiable(n, d.X.shape[1])
    for f in d.X[:10]:
        assert t.path(f).contains(f)


# ------------------------------------------------------------------ dataset

def test_collect_dataset_shapes_and_replay():
    cfg = GridConfig(5, 2)
    rng = np.random.default_rng(0)
    w = Wizard(QNet.init(4, rng), cfg)
    ds = collect_dataset(w, 7, 13, np.random.default_rng(1))
    assert len(ds) == 7 * 13
    assert ds.X.shape == (91, 4)
    assert (w.actions(ds.X) == ds.y).all()  # labels replay the policy
    empty = collect_dataset(w, 0, 13, np.random.default_rng(1))
    assert len(empty) == 0


# ----------------------------------------------------------------- fidelity

def test_fidelity_self_is_perfect():
    cfg = GridConfig(4, 1)
    w = chaser_wizard(cfg)
    F = np.array([[2, 0], [0, 2], [-2, 0], [0, -2], [1, 2]])
    d = LabeledDataset(F, w.actions(F))
    t = fit_tree(d, None)
    rep = fidelity(TreePolicy([t]), w, F)
    assert rep["agreement"] == 1.0 and rep["macro_f1"] == 1.0


def test_fidelity_constant_policy_on_balanced_sample():
    cfg = GridConfig(9, 1)
    w = chaser_wizard(cfg)
    F = np.array([[0, 3]] * 25 + [[3, 0]] * 25 + [[0, -3]] * 25 + [[-3, 0]] * 25)
    assert np.bincount(w.actions(F), minlength=4).tolist() == [25, 25, 25, 25]
    book = TreePolicy([leaf_tree(Action.UP)])
    rep = fidelity(book, w, F)
    assert rep["agreement"] == 0.25
    assert rep["per_action"]["up"] == {"precision": 0.25, "recall": 1.0, "f1": 0.4}
    assert rep["per_action"]["left"] == {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    assert math.isclose(rep["macro_f1"], 0.1)


def test_fidelity_exhaustive_small_grid_distillation():
    cfg = GridConfig(3, 1)
    w = chaser_wizard(cfg)
    F = np.stack([features(cfg, s) for s in all_states(cfg)])
    t = fit_tree(LabeledDataset(F, w.actions(F)), None)
    rep = fidelity(TreePolicy([t]), w, F)
    assert rep["agreement"] == 1.0


# -------------------------------------------------------------- performance

def test_performance_deterministic_and_sane():
    cfg = GridConfig(5, 1)
    w = chaser_wizard(cfg)
    r1 = performance(cfg, w.policy, 4, 100, np.random.default_rng(5))
    r2 = performance(cfg, w.policy, 4, 100, np.random.default_rng(5))
    assert r1 == r2
    assert r1["max_collected"] >= r1["avg_collected"] > 0
    rng = np.random.default_rng(6)
    rand = performance(cfg, lambda s: Action(int(rng.integers(4))), 4, 100,
                       np.random.default_rng(5))
    assert rand["avg_collected"] < r1["avg_collected"]


# ------------------------------------------------------------- serialization

def test_json_schema_shape():
    d = LabeledDataset(np.array([[0, 0]] * 3 + [[3, 0]] * 3), np.array([0] * 3 + [1] * 3))
    p = TreePolicy([fit_tree(d, None)])
    obj = p.to_json()
    assert set(obj.keys()) == {"trees"}
    for t in obj["trees"]:
        assert set(t.keys()) == {"nodes"}
        root = t["nodes"][0]
        assert set(root.keys()) == {"feat", "thr", "lo", "hi"}
        for nd in t["nodes"]:
            assert set(nd.keys()) in ({"feat", "thr", "lo", "hi"}, {"leaf"})
            if "leaf" in nd:
                assert nd["leaf"] in ACTION_NAMES
    back = TreePolicy.from_json(json.loads(json.dumps(obj)))
    probe = np.array([[0, 0], [3, 0], [-2, 1]])
    assert (back.actions(probe) == p.actions(probe)).all()


def test_to_dot_mentions_nodes_and_actions():
    d = LabeledDataset(np.array([[0, 0]] * 3 + [[3, 0]] * 3), np.array([0] * 3 + [1] * 3))
    p = TreePolicy([fit_tree(d, None)])
    dot = to_dot(p)
    assert dot.startswith("digraph") and dot.rstrip().endswith("}")
    assert "dx1 <= 1.5" in dot and '"up"' in dot and '"right"' in dot
    assert default_feature_name(3) == "dy2"

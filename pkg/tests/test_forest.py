import numpy as np
import pytest

from logismos.columns import ColumnSet
from logismos.forest import (
    ClusterMap, ForestError, RfParams, kmeans_parcellate, load_cluster_forests,
    make_training_labels, rf_node_costs, rf_train, save_cluster_forests,
)
from logismos.mesh import icosphere

FAST = RfParams(n_trees=40, max_depth=12)


def test_kmeans_singletons_when_k_equals_n():
    pts = np.random.default_rng(0).normal(size=(15, 3))
    cm = kmeans_parcellate(pts, k=15, seed=1)
    assert sorted(cm.assignment.tolist()) == list(range(15))


def test_kmeans_two_blobs():
    rng = np.random.default_rng(2)
    a = rng.normal(0, 0.3, size=(40, 3))
    b = rng.normal(0, 0.3, size=(40, 3)) + np.array([10.0, 0, 0])
    cm = kmeans_parcellate(np.vstack([a, b]), k=2, seed=0)
    first = cm.assignment[:40]
    second = cm.assignment[40:]
    assert (first == first[0]).all()
    assert (second == second[0]).all()
    assert first[0] != second[0]


def test_kmeans_deterministic():
    pts = np.random.default_rng(5).normal(size=(200, 3))
    a = kmeans_parcellate(pts, k=12, seed=9)
    b = kmeans_parcellate(pts, k=12, seed=9)
    assert np.array_equal(a.assignment, b.assignment)
    c = kmeans_parcellate(pts, k=12, seed=10)
    assert not np.array_equal(a.assignment, c.assignment)


def test_kmeans_k_too_large():
    with pytest.raises(ForestError):
        kmeans_parcellate(np.zeros((4, 3)), k=5)


def separable_rows(n=400, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    X = rng.normal(size=(n, 2))
    X[:, 0] = 3.0 * y + rng.uniform(-1.2, 1.2, size=n)  # clean margin at 1.5
    return X, y


def test_rf_separable_oob():
    X, y = separable_rows()
    forest = rf_train(X, y, FAST, seed=0)
    assert forest.oob_accuracy >= 0.95


def test_rf_permuted_labels_oob_near_chance():
    X, y = separable_rows(seed=1)
    rng = np.random.default_rng(7)
    y_perm = rng.permutation(y)
    forest = rf_train(X, y_perm, FAST, seed=0)
    assert abs(forest.oob_accuracy - 0.5) <= 0.1


def test_rf_deterministic():
    X, y = separable_rows(seed=2)
    f1 = rf_train(X, y, FAST, seed=3)
    f2 = rf_train(X, y, FAST, seed=3)
    probe = np.random.default_rng(0).normal(size=(50, 2))
    assert np.array_equal(f1.predict_proba(probe), f2.predict_proba(probe))


def test_rf_single_class_flagged():
    X = np.random.default_rng(0).normal(size=(30, 4))
    f = rf_train(X, np.ones(30, dtype=int), FAST, seed=0)
    assert f.constant
    assert np.allclose(f.predict_proba(X), 1.0)


def test_rf_probabilities_bounded():
    X, y = separable_rows(seed=4)
    f = rf_train(X, y, FAST, seed=1)
    p = f.predict_proba(np.random.default_rng(1).normal(size=(100, 2)) * 5)
    assert np.all(p >= 0) and np.all(p <= 1)


def straight_columns(bases, K=8, spacing=1.0):
    bases = np.asarray(bases, dtype=float)
    nodes = bases[:, None, :] + np.arange(K)[:, None] * spacing * np.array([0, 0, 1.0])
    return ColumnSet(bases, nodes, spacing, K * spacing)


def test_make_training_labels_nearest_node():
    mesh = icosphere(2, radius=5.0, center=(0, 0, 0))
    # column crossing r=5 sphere along z from z=-2: crossing at param 7.0-ish
    cs = straight_columns([(0.3, 0.2, -2.0)], K=12)
    labels = make_training_labels(cs, mesh)
    assert labels.sum() == 1
    k = int(np.nonzero(labels[0])[0][0])
    assert abs(k - 7) <= 1

    cs_miss = straight_columns([(50.0, 0, 0)], K=6)
    labels = make_training_labels(cs_miss, mesh)
    assert labels.sum() == 0


def test_make_training_labels_at_most_one_positive():
    mesh = icosphere(2, radius=6.0)
    rng = np.random.default_rng(3)
    bases = rng.uniform(-3, 3, size=(40, 3))
    cs = straight_columns(bases, K=14)
    labels = make_training_labels(cs, mesh)
    assert np.all(labels.sum(axis=1) <= 1)


def test_rf_node_costs_shapes_and_argmin():
    # cluster 0: boundary iff feature0 high
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 3))
    y = (X[:, 0] > 0.5).astype(int)
    forest = rf_train(X, y, FAST, seed=0)
    cm = ClusterMap(np.zeros(4, dtype=int), np.zeros((1, 3)))
    feats = rng.normal(size=(4, 6, 3))
    feats[2, 3, 0] = 5.0  # strongly boundary-like node
    costs = rf_node_costs({0: forest}, cm, feats)
    assert costs.shape == (4, 6)
    assert np.all((costs >= 0) & (costs <= 1))
    assert costs[2].argmin() == 3


def test_rf_node_costs_missing_cluster():
    cm = ClusterMap(np.array([0, 1]), np.zeros((2, 3)))
    with pytest.raises(ForestError):
        rf_node_costs({0: rf_train(*separable_rows(60), FAST, seed=0)}, cm,
                      np.zeros((2, 4, 2)))


def test_flat_probability_flat_costs():
    f = rf_train(np.zeros((10, 2)), np.ones(10, dtype=int), FAST, seed=0)
    f.constant_prob = 0.5
    cm = ClusterMap(np.zeros(3, dtype=int), np.zeros((1, 3)))
    costs = rf_node_costs({0: f}, cm, np.random.default_rng(0).normal(size=(3, 5, 2)))
    assert np.allclose(costs, 0.5)


def test_bundle_round_trip(tmp_path):
    X, y = separable_rows(seed=6)
    forests = {0: rf_train(X, y, FAST, seed=0),
               1: rf_train(X, 1 - y, FAST, seed=1)}
    cm = ClusterMap(np.array([0, 1, 0, 1]), np.zeros((2, 3)))
    p = tmp_path / "crf.bin"
    save_cluster_forests(p, cm, forests, feature_mask=[0, 1])
    cm2, forests2, mask = load_cluster_forests(p)
    assert np.array_equal(cm2.assignment, cm.assignment)
    assert np.array_equal(mask, [0, 1])
    probe = np.random.default_rng(2).normal(size=(40, 2))
    for c in (0, 1):
        assert np.array_equal(forests[c].predict_proba(probe),
                              forests2[c].predict_proba(probe))
    save_cluster_forests(tmp_path / "crf2.bin", cm2, forests2, feature_mask=mask)
    assert (tmp_path / "crf.bin").read_bytes() == (tmp_path / "crf2.bin").read_bytes()

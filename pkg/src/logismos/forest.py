"""Region-wise boundary classifiers: k-means mesh parcellation plus one
bagged CART forest per cluster, trained on per-node feature vectors.

The forest probability that a node sits on the cartilage boundary becomes
its segmentation cost (1 - P), so each cluster learns the locally typical
appearance of its stretch of the surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import serio
from .columns import ColumnSet, column_mesh_intersections

MAGIC = b"CRF1"


class ForestError(ValueError):
    pass


# -- k-means parcellation --------------------------------------------------------

@dataclass
class ClusterMap:
    assignment: np.ndarray      # vertex -> cluster id
    centroids: np.ndarray       # (k, 3)

    @property
    def k(self):
        return len(self.centroids)

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        counts = np.bincount(self.assignment, minlength=self.k)
        if np.any(counts == 0):
            raise ForestError("cluster map has an empty cluster")


def kmeans_parcellate(points, k: int = 40, seed: int = 0,
                      max_iter: int = 100) -> ClusterMap:
    """Deterministic Lloyd iterations on vertex coordinates.

    Runs to an assignment fixed point (or ``max_iter``). An emptied cluster
    is repaired by stealing the farthest point of the largest cluster.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if k > n:
        raise ForestError(f"k={k} exceeds {n} points")
    rng = np.random.default_rng(seed)
    centroids = pts[rng.choice(n, size=k, replace=False)].copy()
    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        for c in range(k):
            members = new_assign == c
            if not members.any():
                counts = np.bincount(new_assign, minlength=k)
                big = int(counts.argmax())
                pool = np.nonzero(new_assign == big)[0]
                far = pool[d2[pool, big].argmax()]
                new_assign[far] = c
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            centroids[c] = pts[assign == c].mean(axis=0)
    return ClusterMap(assign, centroids)


# -- CART forest -------------------------------------------------------------------

@dataclass(frozen=True)
class RfParams:
    n_trees: int = 800
    max_depth: int = 24
    min_leaf: int = 1
    min_split: int = 2
    features_per_split: int | None = None    # default round(sqrt(n_features))


class _Tree:
    __slots__ = ("feature", "threshold", "left", "right", "prob")

    def __init__(self):
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.prob = []

    def add_node(self):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.prob.append(0.0)
        return len(self.feature) - 1

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        prob = np.asarray(self.prob)
        while True:
            internal = feature[node] >= 0
            if not internal.any():
                break
            idx = np.nonzero(internal)[0]
            f = feature[node[idx]]
            go_right = X[idx, f] >= threshold[node[idx]]
            node[idx] = np.where(go_right, right[node[idx]], left[node[idx]])
        return prob[node]


def _gini_best_split(X, y, feat_ids):
    best = None
    n = len(y)
    total1 = int(y.sum())
    for f in feat_ids:
        v = X[:, f]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        ys = y[order]
        cut = np.nonzero(np.diff(vs) > 0)[0]
        if len(cut) == 0:
            continue
        ones = np.cumsum(ys)
        left_n = cut + 1
        left1 = ones[cut]
        right_n = n - left_n
        right1 = total1 - left1
        p1l = left1 / left_n
        p1r = right1 / right_n
        gini = (left_n * (2 * p1l * (1 - p1l)) + right_n * (2 * p1r * (1 - p1r))) / n
        i = int(gini.argmin())
        if best is None or gini[i] < best[0]:
            thr = 0.5 * (vs[cut[i]] + vs[cut[i] + 1])
            best = (float(gini[i]), int(f), thr)
    return best


def _grow_cart(X, y, params: RfParams, rng: np.random.Generator) -> _Tree:
    tree = _Tree()
    m = params.features_per_split or max(1, int(round(np.sqrt(X.shape[1]))))
    root = tree.add_node()
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        nid, ids, depth = stack.pop()
        ys = y[ids]
        p1 = float(ys.mean()) if len(ys) else 0.0
        tree.prob[nid] = p1
        if (depth >= params.max_depth or len(ids) < params.min_split
                or p1 == 0.0 or p1 == 1.0):
            continue
        feat_ids = rng.choice(X.shape[1], size=min(m, X.shape[1]), replace=False)
        best = _gini_best_split(X[ids], ys, feat_ids)
        if best is None:
            continue
        _, f, thr = best
        go_right = X[ids, f] >= thr
        if go_right.sum() < params.min_leaf or (~go_right).sum() < params.min_leaf:
            continue
        l = tree.add_node()
        r = tree.add_node()
        tree.feature[nid] = f
        tree.threshold[nid] = thr
        tree.left[nid] = l
        tree.right[nid] = r
        stack.append((l, ids[~go_right], depth + 1))
        stack.append((r, ids[go_right], depth + 1))
    return tree


@dataclass
class RandomForest:
    trees: list
    oob_accuracy: float
    constant: bool = False
    constant_prob: float = 0.0
    n_features: int = 0

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.constant:
            return np.full(len(X), self.constant_prob)
        acc = np.zeros(len(X))
        for t in self.trees:
            acc += t.predict_proba(X)
        return acc / len(self.trees)


def rf_train(X, y, params: RfParams = RfParams(), seed: int = 0) -> RandomForest:
    """Bagged CART trees with Gini splits and out-of-bag accuracy.

    A single-class input yields a flagged constant classifier instead of an
    error, since sparsely populated surface clusters do occur.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ForestError("X must be (n, f) with matching labels")
    classes = np.unique(y)
    if len(classes) < 2:
        prob = float(classes[0]) if len(classes) else 0.0
        return RandomForest([], oob_accuracy=float("nan"), constant=True,
                            constant_prob=prob, n_features=X.shape[1])

    root = np.random.SeedSequence(entropy=int(seed))
    seeds = root.spawn(params.n_trees)
    n = len(y)
    trees = []
    oob_votes = np.zeros(n)
    oob_counts = np.zeros(n)
    for ts in seeds:
        rng = np.random.default_rng(ts)
        boot = rng.integers(0, n, size=n)
        tree = _grow_cart(X[boot], y[boot], params, rng)
        trees.append(tree)
        mask = np.ones(n, dtype=bool)
        mask[boot] = False
        if mask.any():
            oob_votes[mask] += tree.predict_proba(X[mask])
            oob_counts[mask] += 1
    seen = oob_counts > 0
    if seen.any():
        pred = (oob_votes[seen] / oob_counts[seen]) >= 0.5
        oob = float((pred.astype(int) == y[seen]).mean())
    else:
        oob = float("nan")
    return RandomForest(trees, oob, n_features=X.shape[1])


# -- training labels and cost production -----------------------------------------

def make_training_labels(cs: ColumnSet, truth_cart_mesh) -> np.ndarray:
    """(n_columns, K) boolean labels: the node nearest the first column/mesh
    crossing is positive, everything else negative."""
    params = column_mesh_intersections(cs, truth_cart_mesh)
    labels = np.zeros((cs.n_columns, cs.K), dtype=bool)
    for i, p in enumerate(params):
        if np.isfinite(p):
            k = int(round(p))
            labels[i, min(max(k, 0), cs.K - 1)] = True
    return labels


def rf_node_costs(forests: dict, cluster_map: ClusterMap,
                  node_feats: np.ndarray) -> np.ndarray:
    """(n_columns, K) costs = 1 - P(boundary) from each column's cluster forest."""
    n, K, F = node_feats.shape
    if len(cluster_map.assignment) != n:
        raise ForestError("cluster map does not cover the columns")
    costs = np.empty((n, K))
    for c in np.unique(cluster_map.assignment):
        if int(c) not in forests:
            raise ForestError(f"no forest for cluster {int(c)}")
        rows = np.nonzero(cluster_map.assignment == c)[0]
        X = node_feats[rows].reshape(-1, F)
        p = forests[int(c)].predict_proba(X).reshape(len(rows), K)
        costs[rows] = 1.0 - p
    return costs


# -- bundle serialization -----------------------------------------------------------

def save_cluster_forests(path, cluster_map: ClusterMap, forests: dict,
                         feature_mask=None, meta_extra=None):
    meta = {
        "clusters": sorted(int(c) for c in forests),
        "oob": {str(int(c)): (None if np.isnan(forests[c].oob_accuracy)
                              else forests[c].oob_accuracy) for c in forests},
        "constant": {str(int(c)): bool(forests[c].constant) for c in forests},
        "constant_prob": {str(int(c)): float(forests[c].constant_prob)
                          for c in forests},
        "n_features": {str(int(c)): int(forests[c].n_features) for c in forests},
        "n_trees": {str(int(c)): len(forests[c].trees) for c in forests},
    }
    if meta_extra:
        meta.update(meta_extra)
    arrays = {
        "assignment": cluster_map.assignment,
        "centroids": cluster_map.centroids,
    }
    if feature_mask is not None:
        arrays["feature_mask"] = np.asarray(feature_mask, dtype=np.int64)
    for c, forest in forests.items():
        for t, tree in enumerate(forest.trees):
            arrays[f"c{int(c)}_t{t}"] = np.column_stack([
                np.asarray(tree.feature, dtype=np.float64),
                np.asarray(tree.threshold, dtype=np.float64),
                np.asarray(tree.left, dtype=np.float64),
                np.asarray(tree.right, dtype=np.float64),
                np.asarray(tree.prob, dtype=np.float64),
            ])
    serio.write_blocks(path, MAGIC, 1, meta, arrays)


def load_cluster_forests(path):
    version, meta, arrays = serio.read_blocks(path, MAGIC)
    cluster_map = ClusterMap(arrays["assignment"], arrays["centroids"])
    forests = {}
    for c in meta["clusters"]:
        key = str(c)
        trees = []
        for t in range(meta["n_trees"][key]):
            m = arrays[f"c{c}_t{t}"]
            tree = _Tree()
            tree.feature = [int(v) for v in m[:, 0]]
            tree.threshold = list(m[:, 1])
            tree.left = [int(v) for v in m[:, 2]]
            tree.right = [int(v) for v in m[:, 3]]
            tree.prob = list(m[:, 4])
            trees.append(tree)
        oob = meta["oob"][key]
        forests[c] = RandomForest(
            trees, float("nan") if oob is None else oob,
            constant=meta["constant"][key],
            constant_prob=meta["constant_prob"][key],
            n_features=meta["n_features"][key])
    mask = arrays.get("feature_mask")
    return cluster_map, forests, mask

"""Patch neighborhood forest: trees route image patches toward training
patches with similar segmentation-label maps.

The pairwise patch distance is the l0 difference of the label maps. Each
internal node tests the difference of two box means of patch intensity
against a threshold; split selection minimizes the sum over children of the
mean pairwise label distance within the child (compactness). At prediction
time a test patch's approximate neighbors are the training patches it
shares leaves with most often, and the predicted per-voxel cartilage
probability is the average of the neighbors' label indicators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import serio
from .volume import Volume3D

MAGIC = b"NAF1"

LBL_BACKGROUND = 0
LBL_CARTILAGE = 1
LBL_NEGATIVE_BAND = 2


class NafError(ValueError):
    pass


@dataclass(frozen=True)
class NafParams:
    n_trees: int = 200
    patch_side: int = 15
    n_candidate_positions: int = 1521
    n_candidate_tests: int = 20
    max_depth: int = 12
    min_leaf: int = 8
    position_fraction: float = 0.6     # per-tree share of candidate positions
    n_neighbors: int = 20
    max_box_half: int = 2
    pair_cap: int = 32                 # subsample cap for compactness estimates


@dataclass
class PatchSample:
    center: tuple
    intensity: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.intensity = np.asarray(self.intensity, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.intensity.shape != self.labels.shape:
            raise NafError("intensity and label patches must share geometry")
        s = self.intensity.shape
        if len(s) != 3 or s[0] != s[1] or s[1] != s[2]:
            raise NafError("patches must be cubes")


def label_distance(a: PatchSample, b: PatchSample) -> int:
    """l0 distance between segmentation label maps."""
    if a.labels.shape != b.labels.shape:
        raise NafError("patch geometry mismatch")
    return int(np.count_nonzero(a.labels != b.labels))


class PatchBank:
    """Column-stacked patches for vectorized training and prediction."""

    def __init__(self, intensities, labels, centers=None):
        self.intensity = np.asarray(intensities, dtype=np.float32)
        self.labels = np.asarray(labels, dtype=np.uint8)
        if self.intensity.shape != self.labels.shape or self.intensity.ndim != 4:
            raise NafError("banks are (n, p, p, p) intensity/label stacks")
        self.centers = centers
        self.flat_labels = self.labels.reshape(len(self.labels), -1)
        self.cart_indicator = (self.labels == LBL_CARTILAGE).astype(np.float32)

    def __len__(self):
        return len(self.intensity)

    @property
    def side(self):
        return self.intensity.shape[1]

    def sample(self, i) -> PatchSample:
        c = None if self.centers is None else tuple(self.centers[i])
        return PatchSample(c, self.intensity[i], self.labels[i])

    @staticmethod
    def from_samples(samples) -> "PatchBank":
        return PatchBank(np.stack([s.intensity for s in samples]),
                         np.stack([s.labels for s in samples]),
                         [s.center for s in samples])


@dataclass(frozen=True)
class BoxTest:
    a_lo: tuple
    a_hi: tuple
    b_lo: tuple
    b_hi: tuple
    tau: float

    def evaluate(self, patches: np.ndarray) -> np.ndarray:
        """Right-child mask for an (n, p, p, p) patch stack."""
        a = patches[:, self.a_lo[0]:self.a_hi[0], self.a_lo[1]:self.a_hi[1],
                    self.a_lo[2]:self.a_hi[2]].mean(axis=(1, 2, 3))
        b = patches[:, self.b_lo[0]:self.b_hi[0], self.b_lo[1]:self.b_hi[1],
                    self.b_lo[2]:self.b_hi[2]].mean(axis=(1, 2, 3))
        return (a - b) >= self.tau


@dataclass
class NafTree:
    tests: list            # BoxTest per internal node (None for leaves)
    children: list         # (left, right) per node or None
    leaf_members: dict     # node id -> training ids
    root_compactness: float
    leaf_compactness: dict = field(default_factory=dict)

    def route(self, patches: np.ndarray) -> np.ndarray:
        """Leaf node id per patch, evaluated level by level."""
        node = np.zeros(len(patches), dtype=np.int64)
        active = self.children[0] is not None
        while active:
            active = False
            for nid in np.unique(node):
                if self.children[nid] is None:
                    continue
                mask = node == nid
                go_right = self.tests[nid].evaluate(patches[mask])
                l, r = self.children[nid]
                sub = node[mask]
                sub[go_right] = r
                sub[~go_right] = l
                node[mask] = sub
                active = True
        return node


@dataclass
class NafModel:
    params: NafParams
    trees: list
    n_training: int
    candidate_positions: np.ndarray

    def predict(self, volume: Volume3D, bank: PatchBank, stride=None) -> Volume3D:
        return naf_predict(self, volume, bank, stride=stride)


def _mean_pairwise_rho(flat_labels: np.ndarray, ids: np.ndarray, rng, cap: int) -> float:
    if len(ids) < 2:
        return 0.0
    if len(ids) > cap:
        ids = rng.choice(ids, size=cap, replace=False)
    sub = flat_labels[ids]
    diff = (sub[:, None, :] != sub[None, :, :]).sum(axis=2)
    n = len(ids)
    return float(diff.sum() / (n * (n - 1)))


def _make_box(pos, half, side):
    lo = np.maximum(pos - half, 0)
    hi = np.minimum(pos + half + 1, side)
    return tuple(int(v) for v in lo), tuple(int(v) for v in hi)


def _grow_tree(bank: PatchBank, params: NafParams, positions: np.ndarray,
               rng: np.random.Generator) -> NafTree:
    side = bank.side
    tests = [None]
    children = [None]
    leaf_members = {}
    leaf_compactness = {}
    root_c = _mean_pairwise_rho(bank.flat_labels, np.arange(len(bank)), rng,
                                params.pair_cap)

    stack = [(0, np.arange(len(bank)), 0)]
    while stack:
        nid, ids, depth = stack.pop()
        comp = _mean_pairwise_rho(bank.flat_labels, ids, rng, params.pair_cap)
        if depth >= params.max_depth or len(ids) <= params.min_leaf or comp == 0.0:
            leaf_members[nid] = ids
            leaf_compactness[nid] = comp
            continue
        best = None
        for _ in range(params.n_candidate_tests):
            pa = positions[rng.integers(0, len(positions))]
            pb = positions[rng.integers(0, len(positions))]
            ha = int(rng.integers(0, params.max_box_half + 1))
            hb = int(rng.integers(0, params.max_box_half + 1))
            a_lo, a_hi = _make_box(pa, ha, side)
            b_lo, b_hi = _make_box(pb, hb, side)
            feat_a = bank.intensity[ids, a_lo[0]:a_hi[0], a_lo[1]:a_hi[1],
                                    a_lo[2]:a_hi[2]].mean(axis=(1, 2, 3))
            feat_b = bank.intensity[ids, b_lo[0]:b_hi[0], b_lo[1]:b_hi[1],
                                    b_lo[2]:b_hi[2]].mean(axis=(1, 2, 3))
            f = feat_a - feat_b
            lo_q, hi_q = np.quantile(f, [0.25, 0.75])
            tau = float(rng.uniform(lo_q, hi_q)) if hi_q > lo_q else float(lo_q)
            right = f >= tau
            n_r = int(right.sum())
            if n_r == 0 or n_r == len(ids):
                continue
            score = (_mean_pairwise_rho(bank.flat_labels, ids[right], rng, params.pair_cap)
                     + _mean_pairwise_rho(bank.flat_labels, ids[~right], rng, params.pair_cap))
            test = BoxTest(a_lo, a_hi, b_lo, b_hi, tau)
            if best is None or score < best[0]:
                best = (score, test, right)
        if best is None:
            leaf_members[nid] = ids
            leaf_compactness[nid] = comp
            continue
        _, test, right = best
        left_id = len(tests)
        right_id = left_id + 1
        tests.append(None)
        tests.append(None)
        children.append(None)
        children.append(None)
        tests[nid] = test
        children[nid] = (left_id, right_id)
        stack.append((left_id, ids[~right], depth + 1))
        stack.append((right_id, ids[right], depth + 1))
    return NafTree(tests, children, leaf_members, root_c, leaf_compactness)


def naf_train(bank: PatchBank, params: NafParams = NafParams(), seed: int = 0) -> NafModel:
    """Train the patch forest; deterministic for a given seed."""
    if len(bank) < 2:
        if len(bank) == 1:
            tree = NafTree([None], [None], {0: np.arange(1)}, 0.0, {0: 0.0})
            return NafModel(params, [tree], 1,
                            np.zeros((1, 3), dtype=np.int64))
        raise NafError("need at least one training patch")
    if np.all(bank.flat_labels == bank.flat_labels[0]):
        raise NafError("degenerate training set: all label patches identical")

    root = np.random.SeedSequence(entropy=int(seed))
    pos_seed, *tree_seeds = root.spawn(1 + params.n_trees)
    pos_rng = np.random.default_rng(pos_seed)
    side = bank.side
    positions = pos_rng.integers(0, side, size=(params.n_candidate_positions, 3))

    trees = []
    for ts in tree_seeds:
        rng = np.random.default_rng(ts)
        n_sub = max(2, int(params.position_fraction * len(positions)))
        sub = positions[rng.choice(len(positions), size=n_sub, replace=False)]
        trees.append(_grow_tree(bank, params, sub, rng))
    return NafModel(params, trees, len(bank), positions)


def _tile_corners(dims, side, stride):
    out = []
    for n in dims:
        xs = list(range(0, max(n - side, 0) + 1, stride))
        if xs[-1] != n - side and n > side:
            xs.append(n - side)
        out.append(xs)
    return out


def naf_predict(model: NafModel, volume: Volume3D, bank: PatchBank,
                stride=None, roi=None) -> Volume3D:
    """Per-voxel cartilage probability by averaging approximate neighbors.

    The volume is tiled into overlapping patches (default stride = side/2),
    each patch routed down every tree, and each voxel averages the neighbor
    label indicators of all patches covering it. ``roi`` optionally limits
    tiling to a voxel-index bounding box (lo, hi) to save time.
    """
    if not model.trees:
        raise NafError("model has no trees")
    side = bank.side
    stride = stride or max(1, side // 2)
    dims = volume.dims
    if any(n < side for n in dims):
        raise NafError("volume smaller than patch size")

    axes = _tile_corners(dims, side, stride)
    if roi is not None:
        lo, hi = roi
        axes = [[x for x in axes[a] if x + side > lo[a] and x <= hi[a]]
                or [min(max(lo[a], 0), dims[a] - side)]
                for a in range(3)]
    corners = np.array([(x, y, z) for x in axes[0] for y in axes[1] for z in axes[2]],
                       dtype=np.int64)

    D = volume.data
    patches = np.empty((len(corners), side, side, side), dtype=np.float32)
    for i, (x, y, z) in enumerate(corners):
        patches[i] = D[x:x + side, y:y + side, z:z + side]

    # leaf co-membership counts across trees
    n_train = model.n_training
    k = min(model.params.n_neighbors, n_train)
    prob_patches = np.zeros((len(corners), side, side, side), dtype=np.float64)
    leaf_ids = np.stack([tree.route(patches) for tree in model.trees], axis=1)
    for i in range(len(corners)):
        counts = np.zeros(n_train, dtype=np.int32)
        for t, tree in enumerate(model.trees):
            counts_ids = tree.leaf_members[int(leaf_ids[i, t])]
            counts[counts_ids] += 1
        top = np.argpartition(-counts, k - 1)[:k]
        top = top[counts[top] > 0]
        if len(top) == 0:
            continue
        prob_patches[i] = bank.cart_indicator[top].mean(axis=0)

    acc = np.zeros(dims, dtype=np.float64)
    weight = np.zeros(dims, dtype=np.float64)
    for i, (x, y, z) in enumerate(corners):
        acc[x:x + side, y:y + side, z:z + side] += prob_patches[i]
        weight[x:x + side, y:y + side, z:z + side] += 1.0
    weight[weight == 0] = 1.0
    out = (acc / weight).astype(np.float32)
    return volume.with_data(out)


# -- patch harvesting ----------------------------------------------------------

def harvest_patches(volume: Volume3D, label_volume: Volume3D, side: int,
                    n_patches: int, seed: int, negative_band_vox: int = 2,
                    cartilage_codes=(2, 4), bone_codes=(1, 3)) -> PatchBank:
    """Class-stratified patch sampling with a negative band around cartilage.

    Patch labels: cartilage voxels keep 1, a dilated band around cartilage
    becomes 2 (negative band), everything else 0. Sampling draws patch
    centers evenly from {cartilage, band, background} so the scarce positive
    class is represented.
    """
    from scipy import ndimage as ndi
    lab = label_volume.data
    cart = np.isin(lab, cartilage_codes)
    band = ndi.binary_dilation(cart, iterations=negative_band_vox) & ~cart
    coded = np.zeros(lab.shape, dtype=np.uint8)
    coded[cart] = LBL_CARTILAGE
    coded[band] = LBL_NEGATIVE_BAND

    rng = np.random.default_rng(seed)
    dims = volume.dims
    half = side // 2
    valid = np.zeros(lab.shape, dtype=bool)
    valid[half:dims[0] - (side - half), half:dims[1] - (side - half),
          half:dims[2] - (side - half)] = True

    pools = [np.argwhere((coded == c) & valid) for c in
             (LBL_CARTILAGE, LBL_NEGATIVE_BAND, LBL_BACKGROUND)]
    per = n_patches // 3
    centers = []
    for pool in pools:
        if len(pool) == 0:
            continue
        take = min(per, len(pool))
        centers.append(pool[rng.choice(len(pool), size=take, replace=False)])
    centers = np.vstack(centers)

    D = volume.data
    ints = np.empty((len(centers), side, side, side), dtype=np.float32)
    labs = np.empty((len(centers), side, side, side), dtype=np.uint8)
    for i, c in enumerate(centers):
        x, y, z = (int(v) - half for v in c)
        ints[i] = D[x:x + side, y:y + side, z:z + side]
        labs[i] = coded[x:x + side, y:y + side, z:z + side]
    return PatchBank(ints, labs, centers)


# -- serialization --------------------------------------------------------------

def save_naf(model: NafModel, bank: PatchBank, path):
    """Model plus its training bank (needed at prediction time)."""
    meta = {
        "params": vars(model.params) | {},
        "n_training": model.n_training,
        "n_trees": len(model.trees),
    }
    arrays = {
        "candidate_positions": model.candidate_positions,
        "bank_intensity": bank.intensity,
        "bank_labels": bank.labels,
    }
    tree_meta = []
    for t, tree in enumerate(model.trees):
        nodes = []
        for nid in range(len(tree.tests)):
            test = tree.tests[nid]
            ch = tree.children[nid]
            if test is None:
                nodes.append([-1.0] * 14)
            else:
                nodes.append(list(test.a_lo) + list(test.a_hi)
                             + list(test.b_lo) + list(test.b_hi)
                             + [test.tau, float(ch[0])])
        arrays[f"tree{t}_nodes"] = np.asarray(nodes, dtype=np.float64)
        members = tree.leaf_members
        keys = sorted(members)
        arrays[f"tree{t}_leaf_keys"] = np.asarray(keys, dtype=np.int64)
        arrays[f"tree{t}_leaf_lens"] = np.asarray([len(members[k]) for k in keys],
                                                  dtype=np.int64)
        arrays[f"tree{t}_leaf_members"] = (
            np.concatenate([members[k] for k in keys]).astype(np.int64)
            if keys else np.zeros(0, dtype=np.int64))
        tree_meta.append({"root_compactness": tree.root_compactness})
    meta["trees"] = tree_meta
    serio.write_blocks(path, MAGIC, 1, meta, arrays)


def load_naf(path):
    version, meta, arrays = serio.read_blocks(path, MAGIC)
    params = NafParams(**meta["params"])
    bank = PatchBank(arrays["bank_intensity"], arrays["bank_labels"])
    trees = []
    for t in range(meta["n_trees"]):
        nodes = arrays[f"tree{t}_nodes"]
        tests = []
        children = []
        for row in nodes:
            if row[0] < 0:
                tests.append(None)
                children.append(None)
            else:
                a_lo = tuple(int(v) for v in row[0:3])
                a_hi = tuple(int(v) for v in row[3:6])
                b_lo = tuple(int(v) for v in row[6:9])
                b_hi = tuple(int(v) for v in row[9:12])
                tests.append(BoxTest(a_lo, a_hi, b_lo, b_hi, float(row[12])))
                children.append((int(row[13]), int(row[13]) + 1))
        keys = arrays[f"tree{t}_leaf_keys"]
        lens = arrays[f"tree{t}_leaf_lens"]
        flat = arrays[f"tree{t}_leaf_members"]
        members = {}
        pos = 0
        for k, ln in zip(keys, lens):
            members[int(k)] = flat[pos:pos + int(ln)]
            pos += int(ln)
        trees.append(NafTree(tests, children, members,
                             meta["trees"][t]["root_compactness"]))
    model = NafModel(params, trees, meta["n_training"],
                     arrays["candidate_positions"])
    return model, bank

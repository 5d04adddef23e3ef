"""End-to-end drivers: pre-segmentation, training, 3D and 4D segmentation,
and per-case evaluation against phantom ground truth.

Workflow per case: affine-fit the mean bone shapes into the known object
extents, solve a single-surface gradient bone problem per object to get the
patient-specific meshes, rebuild columns on those meshes, attach bone and
cartilage costs (gradient, single-forest, or patch-forest + clustered
forests), and solve the joint two-object two-surface graph. Longitudinal
runs register every follow-up onto the first time-point (femur-first
two-step), resample the volumes, and couple corresponding columns across
time in one graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .columns import ColumnSet, build_columns, column_mesh_intersections, \
    fit_mean_shape, profile_stack
from .config import PipelineConfig
from .features import FEATURE_NAMES, compute_stack, node_features_for_set
from .forest import ClusterMap, RfParams, kmeans_parcellate, \
    load_cluster_forests, make_training_labels, rf_node_costs, rf_train, \
    save_cluster_forests
from .gradient_costs import GradientCostParams, bone_cost_stack, \
    cartilage_cost_stack
from .graph import ConstraintSpec, CostTable, GraphLayout, InfeasibleError, \
    build_graph, check_solution, solution_to_meshes
from .naf import NafParams, PatchBank, harvest_patches, load_naf, naf_predict, \
    naf_train, save_naf
from .phantom import PhantomCase, generate_mean_meshes
from .registration import apply_transform, correspond_columns, \
    two_step_register
from .subplates import CuttingPlane, detect_trochlear_notch, femur_subplates, \
    region_errors, subplate_robustness, thickness_map, tibia_subplates
from .volume import Volume3D

OBJECTS = ("femur", "tibia")

NAF_FEATURE_NAMES = tuple(n for n in FEATURE_NAMES if "prob" in n)
NO_NAF_MASK = tuple(i for i, n in enumerate(FEATURE_NAMES) if "prob" not in n)


class PipelineError(ValueError):
    pass


@dataclass
class TrainedModels:
    naf_model: object = None
    naf_bank: PatchBank = None
    cluster_maps: dict = field(default_factory=dict)     # object -> ClusterMap
    cluster_forests: dict = field(default_factory=dict)  # object -> {cid: forest}
    single_forest: object = None                         # rf-only fallback
    feature_mask: tuple = NO_NAF_MASK
    oob_report: dict = field(default_factory=dict)

    def save(self, directory):
        from pathlib import Path
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        if self.naf_model is not None:
            save_naf(self.naf_model, self.naf_bank, d / "naf.bin")
        for name in self.cluster_maps:
            save_cluster_forests(d / f"crf_{name}.bin", self.cluster_maps[name],
                                 self.cluster_forests[name])
        if self.single_forest is not None:
            single_map = ClusterMap(np.zeros(1, dtype=int), np.zeros((1, 3)))
            save_cluster_forests(d / "rf_single.bin", single_map,
                                 {0: self.single_forest},
                                 feature_mask=self.feature_mask)

    @staticmethod
    def load(directory) -> "TrainedModels":
        from pathlib import Path
        d = Path(directory)
        models = TrainedModels()
        if (d / "naf.bin").exists():
            models.naf_model, models.naf_bank = load_naf(d / "naf.bin")
        for name in OBJECTS:
            p = d / f"crf_{name}.bin"
            if p.exists():
                cm, forests, _ = load_cluster_forests(p)
                models.cluster_maps[name] = cm
                models.cluster_forests[name] = forests
        p = d / "rf_single.bin"
        if p.exists():
            _, forests, mask = load_cluster_forests(p)
            models.single_forest = forests[0]
            if mask is not None:
                models.feature_mask = tuple(int(v) for v in mask)
        return models


# -- pre-segmentation ------------------------------------------------------------

def presegment(case: PhantomCase, mean_meshes: dict, config: PipelineConfig):
    """Single-surface gradient bone solve per object from the fitted mean
    shape; returns {object: {"mesh", "columns", "k"}}."""
    gp = config.gradient_graph
    cost_params = GradientCostParams(w1=config.gradient_w1, w2=config.gradient_w2)
    out = {}
    for name in OBJECTS:
        fitted = fit_mean_shape(mean_meshes[(name, "bone")],
                                np.asarray(case.params["voi"][name]))
        cs = build_columns(fitted, K=gp.nodes_per_column,
                           length_mm=gp.column_length_mm,
                           node_spacing_mm=gp.node_spacing_mm,
                           inside_fraction=gp.inside_fraction)
        prof = profile_stack(case.volume, cs)
        bc = bone_cost_stack(prof, cost_params)
        denom = max(float(bc.max()), 1e-12)
        layout = GraphLayout(1, (cs.n_columns,), 1, cs.K)
        costs = CostTable(layout)
        costs.set(0, 0, 0, bc / denom)
        spec = ConstraintSpec(node_spacing_mm=gp.node_spacing_mm,
                              smoothness_mm=gp.smoothness_mm,
                              inter_surface_max_mm=gp.inter_surface_max_mm,
                              inter_object_max_mm=gp.inter_object_max_mm,
                              delta_tmax_mm=None)
        g = build_graph({(0, 0): cs}, costs, spec)
        sol = g.solve()
        mesh = solution_to_meshes(g, sol)[(0, 0, 0)]
        out[name] = {"mesh": mesh, "columns": cs, "k": sol.k(0, 0, 0)}
    return out


# -- cost assembly ------------------------------------------------------------------

def _naf_probability(case, models: TrainedModels, config) -> Volume3D:
    vol = case.volume
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for name in OBJECTS:
        b = np.asarray(case.params["voi"][name])
        lo = np.minimum(lo, b[0])
        hi = np.maximum(hi, b[1])
    lo_vox = np.floor((lo - vol.origin) / vol.spacing).astype(int) - 2
    hi_vox = np.ceil((hi - vol.origin) / vol.spacing).astype(int) + 2
    lo_vox = np.clip(lo_vox, 0, np.asarray(vol.dims) - 1)
    hi_vox = np.clip(hi_vox, 0, np.asarray(vol.dims) - 1)
    prob = naf_predict(models.naf_model, vol, models.naf_bank,
                        stride=config.forests.naf_stride, roi=(lo_vox, hi_vox))
    if config.forests.naf_smooth_mm > 0:
        # patch tiling leaves blocky seams; a light blur makes the map and
        # its gradient features positionally honest
        from scipy import ndimage
        sig = tuple(config.forests.naf_smooth_mm / s for s in vol.spacing)
        smoothed = ndimage.gaussian_filter(prob.data.astype(np.float64), sig,
                                           mode="nearest")
        prob = vol.with_data(np.clip(smoothed, 0.0, 1.0).astype(np.float32))
    return prob


def _cart_costs_for_object(name, cs, case, config, models, stack):
    if config.cost_mode == "gradient":
        prof = profile_stack(case.volume, cs)
        cc = cartilage_cost_stack(prof, GradientCostParams(
            w1=config.gradient_w1, w2=config.gradient_w2))
        return cc / max(float(cc.max()), 1e-12)
    feats = node_features_for_set(stack, cs)
    if config.cost_mode == "naf+rf":
        return rf_node_costs(models.cluster_forests[name],
                             models.cluster_maps[name], feats)
    # rf-only: one forest over all columns, restricted features
    n, K, _ = feats.shape
    X = feats[:, :, models.feature_mask].reshape(n * K, -1)
    p = models.single_forest.predict_proba(X).reshape(n, K)
    return 1.0 - p


def _constraint_spec(config: PipelineConfig, temporal: bool) -> ConstraintSpec:
    gp = config.graph
    return ConstraintSpec(
        node_spacing_mm=gp.node_spacing_mm,
        smoothness_mm=gp.smoothness_mm,
        inter_surface_max_mm=gp.inter_surface_max_mm,
        inter_object_max_mm=gp.inter_object_max_mm,
        delta_tmax_mm=config.delta_tmax_mm if temporal else None,
        delta_tmin_mm=config.delta_tmin_mm if temporal else 0.0,
        temporal_mode=config.temporal_mode,
    )


@dataclass
class SegmentationResult:
    solution: object
    graph: object
    columns_by: dict
    meshes: dict            # (t, object_name, surface_name) -> TriMesh
    preseg: list            # per t: presegment() output
    transforms: list = None


def _needs_models(config):
    if config.cost_mode != "gradient":
        return True
    return False


def segment3d(case: PhantomCase, config: PipelineConfig,
              mean_meshes: dict = None, models: TrainedModels = None
              ) -> SegmentationResult:
    if _needs_models(config) and models is None:
        raise PipelineError(f"cost mode {config.cost_mode} requires trained models")
    mean_meshes = mean_meshes or generate_mean_meshes_for(case, config)
    preseg = presegment(case, mean_meshes, config)

    gp = config.graph
    columns_by = {}
    for o, name in enumerate(OBJECTS):
        columns_by[(0, o)] = build_columns(
            preseg[name]["mesh"], K=gp.nodes_per_column,
            length_mm=gp.column_length_mm, node_spacing_mm=gp.node_spacing_mm,
            inside_fraction=gp.inside_fraction)

    stack = None
    if config.cost_mode != "gradient":
        if config.cost_mode == "naf+rf":
            prob = _naf_probability(case, models, config)
        else:
            prob = case.volume.with_data(np.zeros(case.volume.dims, dtype=np.float32))
        stack = compute_stack(case.volume, prob)

    layout = GraphLayout(1, tuple(columns_by[(0, o)].n_columns for o in range(2)),
                         2, gp.nodes_per_column)
    costs = CostTable(layout)
    cost_params = GradientCostParams(w1=config.gradient_w1, w2=config.gradient_w2)
    for o, name in enumerate(OBJECTS):
        cs = columns_by[(0, o)]
        prof = profile_stack(case.volume, cs)
        bc = bone_cost_stack(prof, cost_params)
        costs.set(0, o, 0, bc / max(float(bc.max()), 1e-12))
        costs.set(0, o, 1, _cart_costs_for_object(name, cs, case, config,
                                                  models, stack))
    g = build_graph(columns_by, costs, _constraint_spec(config, temporal=False))
    sol = g.solve()
    meshes = _named_meshes(g, sol, columns_by)
    return SegmentationResult(sol, g, columns_by, meshes, [preseg])


def generate_mean_meshes_for(case, config):
    spec = getattr(case, "source_spec", None)
    if spec is None:
        raise PipelineError("provide mean_meshes (or attach source_spec to the case)")
    return generate_mean_meshes(spec)


def _named_meshes(g, sol, columns_by):
    raw = solution_to_meshes(g, sol, columns_by)
    out = {}
    for (t, o, s), mesh in raw.items():
        out[(t, OBJECTS[o], ("bone", "cartilage")[s])] = mesh
    return out


def segment4d(cases, config: PipelineConfig, mean_meshes: dict = None,
              models: TrainedModels = None) -> SegmentationResult:
    """Joint multi-time-point solve in the first time-point's frame."""
    if len(cases) < 2:
        raise PipelineError("4D segmentation needs at least two time-points")
    if _needs_models(config) and models is None:
        raise PipelineError(f"cost mode {config.cost_mode} requires trained models")
    mean_meshes = mean_meshes or generate_mean_meshes_for(cases[0], config)

    presegs = [presegment(c, mean_meshes, config) for c in cases]
    transforms = [None] * len(cases)
    reg_volumes = [cases[0].volume]
    from .registration import RigidTransform
    transforms[0] = RigidTransform.identity()
    for t in range(1, len(cases)):
        tf = two_step_register(
            presegs[t]["femur"]["mesh"], presegs[t]["tibia"]["mesh"],
            presegs[0]["femur"]["mesh"], presegs[0]["tibia"]["mesh"])
        transforms[t] = tf
        reg_volumes.append(apply_transform(cases[t].volume, tf))
        for name in OBJECTS:
            presegs[t][name]["mesh"] = tf.apply_mesh(presegs[t][name]["mesh"])

    gp = config.graph
    columns_by = {}
    for t in range(len(cases)):
        for o, name in enumerate(OBJECTS):
            columns_by[(t, o)] = build_columns(
                presegs[t][name]["mesh"], K=gp.nodes_per_column,
                length_mm=gp.column_length_mm,
                node_spacing_mm=gp.node_spacing_mm,
                inside_fraction=gp.inside_fraction)
    for t in range(1, len(cases)):
        for o in range(2):
            correspond_columns(columns_by[(0, o)], columns_by[(t, o)])

    layout = GraphLayout(len(cases),
                         tuple(columns_by[(0, o)].n_columns for o in range(2)),
                         2, gp.nodes_per_column)
    costs = CostTable(layout)
    cost_params = GradientCostParams(w1=config.gradient_w1, w2=config.gradient_w2)
    for t in range(len(cases)):
        vol = reg_volumes[t]
        stack = None
        if config.cost_mode != "gradient":
            reg_case = PhantomCase(vol, cases[t].truth_meshes,
                                   cases[t].truth_labels, cases[t].params,
                                   shapes=cases[t].shapes)
            if config.cost_mode == "naf+rf":
                prob = _naf_probability(reg_case, models, config)
            else:
                prob = vol.with_data(np.zeros(vol.dims, dtype=np.float32))
            stack = compute_stack(vol, prob)
        for o, name in enumerate(OBJECTS):
            cs = columns_by[(t, o)]
            prof = profile_stack(vol, cs)
            bc = bone_cost_stack(prof, cost_params)
            costs.set(t, o, 0, bc / max(float(bc.max()), 1e-12))
            if config.cost_mode == "gradient":
                cc = cartilage_cost_stack(prof, cost_params)
                costs.set(t, o, 1, cc / max(float(cc.max()), 1e-12))
            else:
                reg_case = PhantomCase(vol, cases[t].truth_meshes,
                                       cases[t].truth_labels, cases[t].params,
                                       shapes=cases[t].shapes)
                costs.set(t, o, 1, _cart_costs_for_object(
                    name, cs, reg_case, config, models, stack))
    g = build_graph(columns_by, costs, _constraint_spec(config, temporal=True))
    sol = g.solve()
    meshes = _named_meshes(g, sol, columns_by)
    return SegmentationResult(sol, g, columns_by, meshes, presegs, transforms)


# -- training ---------------------------------------------------------------------

def train(stage1_cases, stage2_cases, config: PipelineConfig,
          mean_meshes: dict = None) -> TrainedModels:
    """Two-stage training on disjoint case sets.

    Stage 1 trains the patch forest on the first split; its probability maps
    plus the appearance features over the second split train one forest per
    mesh cluster and the single reduced-feature forest used by the rf-only
    mode.
    """
    ids1 = {(c.params.get("seed"), c.params.get("time_point", 0))
            for c in stage1_cases}
    ids2 = {(c.params.get("seed"), c.params.get("time_point", 0))
            for c in stage2_cases}
    if ids1 & ids2:
        raise PipelineError(f"training splits overlap: {sorted(ids1 & ids2)}")
    mean_meshes = mean_meshes or generate_mean_meshes_for(stage1_cases[0], config)

    fp = config.forests
    models = TrainedModels()

    # stage 1: patch forest
    banks = []
    per_case = max(16, fp.naf_patches // max(len(stage1_cases), 1))
    for i, case in enumerate(stage1_cases):
        banks.append(harvest_patches(
            case.volume, case.truth_labels, side=fp.naf_patch_side,
            n_patches=per_case,
            seed=int(config.seed_for("naf-harvest", i).generate_state(1)[0])))
    bank = PatchBank(np.concatenate([b.intensity for b in banks]),
                     np.concatenate([b.labels for b in banks]))
    naf_params = NafParams(
        n_trees=fp.naf_trees, patch_side=fp.naf_patch_side,
        n_candidate_positions=fp.naf_samples_per_patch,
        n_candidate_tests=fp.naf_candidate_tests, max_depth=fp.naf_max_depth,
        min_leaf=fp.naf_min_leaf, n_neighbors=fp.naf_neighbors)
    models.naf_model = naf_train(
        bank, naf_params,
        seed=int(config.seed_for("naf-train").generate_state(1)[0]))
    models.naf_bank = bank

    # stage 2: per-cluster forests on graph-node features
    gp = config.graph
    rf_params = RfParams(n_trees=fp.rf_trees, max_depth=fp.rf_max_depth)
    rows_by_cluster = {name: {} for name in OBJECTS}
    rows_single_X = []
    rows_single_y = []
    for name in OBJECTS:
        models.cluster_maps[name] = kmeans_parcellate(
            mean_meshes[(name, "bone")].vertices, k=fp.clusters_per_object,
            seed=int(config.seed_for("kmeans", name).generate_state(1)[0]))

    for ci, case in enumerate(stage2_cases):
        preseg = presegment(case, mean_meshes, config)
        prob = _naf_probability(case, models, config)
        stack = compute_stack(case.volume, prob)
        for name in OBJECTS:
            cs = build_columns(preseg[name]["mesh"], K=gp.nodes_per_column,
                               length_mm=gp.column_length_mm,
                               node_spacing_mm=gp.node_spacing_mm,
                               inside_fraction=gp.inside_fraction)
            feats = node_features_for_set(stack, cs)
            labels = make_training_labels(cs, case.truth_meshes[(name, "cartilage")])
            assign = models.cluster_maps[name].assignment
            for col in range(cs.n_columns):
                cid = int(assign[col])
                bucket = rows_by_cluster[name].setdefault(cid, ([], []))
                bucket[0].append(feats[col])
                bucket[1].append(labels[col])
            rows_single_X.append(feats.reshape(-1, feats.shape[-1]))
            rows_single_y.append(labels.reshape(-1))

    for name in OBJECTS:
        forests = {}
        for cid in range(models.cluster_maps[name].k):
            bucket = rows_by_cluster[name].get(cid)
            if bucket is None:
                X = np.zeros((1, len(FEATURE_NAMES)))
                y = np.zeros(1, dtype=int)
            else:
                X = np.concatenate(bucket[0]).reshape(-1, len(FEATURE_NAMES))
                y = np.concatenate(bucket[1]).astype(int).reshape(-1)
            forests[cid] = rf_train(
                X, y, rf_params,
                seed=int(config.seed_for("rf", name, cid).generate_state(1)[0]))
        models.cluster_forests[name] = forests
        models.oob_report[name] = {
            cid: forests[cid].oob_accuracy for cid in forests
            if not forests[cid].constant}

    X = np.vstack(rows_single_X)[:, list(NO_NAF_MASK)]
    y = np.concatenate(rows_single_y).astype(int)
    models.single_forest = rf_train(
        X, y, rf_params,
        seed=int(config.seed_for("rf-single").generate_state(1)[0]))
    models.feature_mask = NO_NAF_MASK
    return models


# -- evaluation ----------------------------------------------------------------------

def truth_node_indices(case: PhantomCase, cs: ColumnSet, name: str,
                       transform=None):
    """Fractional truth node index per column for bone and cartilage."""
    out = {}
    for surf in ("bone", "cartilage"):
        mesh = case.truth_meshes[(name, surf)]
        if transform is not None:
            mesh = transform.apply_mesh(mesh)
        out[surf] = column_mesh_intersections(cs, mesh)
    return out


def evaluate_case(case: PhantomCase, result: SegmentationResult,
                  config: PipelineConfig, t: int = 0,
                  with_subplates: bool = False):
    """Per-object cartilage/bone errors versus planted truth (mm)."""
    sp = config.graph.node_spacing_mm
    tf = None if result.transforms is None else result.transforms[t]
    report = {}
    for o, name in enumerate(OBJECTS):
        cs = result.columns_by[(t, o)]
        truth = truth_node_indices(case, cs, name, transform=tf)
        k_bone = result.solution.k(t, o, 0).astype(float)
        k_cart = result.solution.k(t, o, 1).astype(float)
        have = np.isfinite(truth["cartilage"]) & np.isfinite(truth["bone"])
        signed_cart = (truth["cartilage"][have] - k_cart[have]) * sp
        signed_bone = (truth["bone"][have] - k_bone[have]) * sp
        thick_sol = thickness_map(k_bone[have], k_cart[have], sp)
        thick_truth = thickness_map(truth["bone"][have],
                                    truth["cartilage"][have], sp)
        report[name] = {
            "n": int(have.sum()),
            "cart_signed_mean": float(signed_cart.mean()),
            "cart_unsigned_mean": float(np.abs(signed_cart).mean()),
            "bone_signed_mean": float(signed_bone.mean()),
            "bone_unsigned_mean": float(np.abs(signed_bone).mean()),
            "thickness_mae": float(np.abs(thick_sol - thick_truth).mean()),
            "thickness_err": np.abs(thick_sol - thick_truth),
        }
    return report

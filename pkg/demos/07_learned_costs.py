"""Hierarchical learned costs end to end (small-scale).

Trains the patch neighborhood forest on one case split, the per-cluster
boundary forests on a second, then compares the three cost modes on unseen
confounder phantoms. Takes a few minutes.
"""

import time

import numpy as np

from logismos.config import ForestParams, GraphParams, PipelineConfig
from logismos.phantom import PhantomSpec, generate_mean_meshes, generate_phantom
from logismos.pipeline import evaluate_case, segment3d, train

config = PipelineConfig(
    cost_mode="gradient",
    gradient_graph=GraphParams(4.0, 12.0, 0.4, 12.4, 31, 0.4),
    learned_graph=GraphParams(6.0, 18.0, 0.6, 18.6, 62, 0.3),
    forests=ForestParams(naf_trees=12, naf_patches=3200, naf_patch_side=9,
                         naf_samples_per_patch=300, naf_candidate_tests=12,
                         naf_max_depth=10, naf_min_leaf=6, naf_neighbors=12,
                         rf_trees=32, rf_max_depth=14, clusters_per_object=8),
    mean_mesh_subdivisions=2,
    seed=21,
)
FAMILY = dict(noise_pct=5.0, mesh_subdivisions=2, fluid_pockets=True,
              n_fluid_pockets=8, regional_intensity=True)

means = generate_mean_meshes(PhantomSpec(mesh_subdivisions=2))
stage1 = [generate_phantom(PhantomSpec(**FAMILY), seed=100 + i) for i in range(3)]
stage2 = [generate_phantom(PhantomSpec(**FAMILY), seed=200 + i) for i in range(4)]
print("training (patch forest on split 1, cluster forests on split 2)...")
t0 = time.perf_counter()
models = train(stage1, stage2, config, mean_meshes=means)
print(f"trained in {time.perf_counter() - t0:.0f}s")
oobs = [v for rep in models.oob_report.values() for v in rep.values()
        if v == v]
print(f"cluster forest OOB accuracy: median {np.median(oobs):.3f} over "
      f"{len(oobs)} non-constant clusters")

for seed in (1, 2):
    case = generate_phantom(PhantomSpec(**FAMILY), seed=seed)
    line = [f"test case {seed}:"]
    for mode in ("gradient", "rf-only", "naf+rf"):
        res = segment3d(case, config.with_overrides(cost_mode=mode),
                        mean_meshes=means, models=models)
        rep = evaluate_case(case, res, config)
        err = 0.5 * (rep["femur"]["cart_unsigned_mean"]
                     + rep["tibia"]["cart_unsigned_mean"])
        line.append(f"{mode} {err:.3f}mm")
    print("  ".join(line))

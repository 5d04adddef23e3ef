"""Random small segmentation instances for oracle comparisons."""

import numpy as np

from logismos.graph import (
    ConstraintSpec, CostTable, GraphLayout, LogismosGraph, ObjectPair,
)


def random_instance(rng: np.random.Generator, max_configs: int = 300_000):
    """Random instance within the small-instance envelope.

    Bounds: <= 2 objects x <= 2 surfaces x <= 5 columns x <= 7 nodes x T <= 3,
    rejected until the raw configuration count fits ``max_configs`` so the
    exhaustive oracle stays cheap.
    """
    while True:
        T = int(rng.integers(1, 4))
        n_objects = int(rng.integers(1, 3))
        n_surfaces = int(rng.integers(1, 3))
        cols = tuple(int(rng.integers(1, 6)) for _ in range(n_objects))
        K = int(rng.integers(2, 8))
        n_chains = T * n_surfaces * sum(cols)
        if K ** n_chains <= max_configs:
            break

    layout = GraphLayout(T, cols, n_surfaces, K)

    smooth = tuple(float(rng.integers(1, 4)) for _ in range(n_surfaces))
    delta_tmax = None if rng.random() < 0.25 else float(rng.integers(0, 4))
    overrides = ()
    if n_surfaces == 2 and rng.random() < 0.3 and delta_tmax is not None:
        o_max = float(rng.integers(0, 4))
        o_min = float(rng.integers(0, int(o_max) + 1))
        overrides = ((1, o_min, o_max),)
    spec = ConstraintSpec(
        node_spacing_mm=1.0,
        smoothness_mm=smooth if n_surfaces > 1 else smooth[0],
        inter_surface_max_mm=float(rng.integers(0, K)),
        inter_object_max_mm=float(rng.integers(0, 2 * K + 1)),
        delta_tmax_mm=delta_tmax,
        delta_tmin_mm=0.0 if delta_tmax is None
        else float(rng.integers(0, int(delta_tmax) + 1)),
        temporal_mode=str(rng.choice(["symmetric", "paper-literal"])),
        temporal_overrides=overrides,
    )

    adjacency = []
    for o in range(n_objects):
        nc = cols[o]
        pairs = [(i, j) for i in range(nc) for j in range(i + 1, nc)]
        chosen = [p for p in pairs if rng.random() < 0.5]
        adjacency.append(chosen)

    obj_pairs = []
    if n_objects == 2:
        for ca in range(cols[0]):
            if rng.random() < 0.4:
                cb = int(rng.integers(0, cols[1]))
                gap = int(rng.integers(0, 2 * K + 3))
                obj_pairs.append(ObjectPair(0, ca, 1, cb, gap))

    costs = CostTable(layout)
    for t in range(T):
        for o in range(n_objects):
            for s in range(n_surfaces):
                costs.set(t, o, s, rng.integers(0, 10, size=(cols[o], K)).astype(float))

    return LogismosGraph(layout, costs, spec, adjacency, obj_pairs)

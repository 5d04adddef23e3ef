"""The min-cut solver against exhaustive enumeration on small instances.

Builds a handful of random multi-object, multi-surface, multi-timepoint
instances and shows the solver's total cost equals brute force exactly.
"""

import numpy as np

from logismos.graph import (ConstraintSpec, CostTable, GraphLayout,
                            LogismosGraph, ObjectPair, brute_force_solve,
                            check_solution)

rng = np.random.default_rng(0)

layout = GraphLayout(n_timepoints=2, columns_per_object=(2, 1), n_surfaces=2,
                     n_nodes_per_column=3)
spec = ConstraintSpec(node_spacing_mm=1.0, smoothness_mm=(1.0, 2.0),
                      inter_surface_max_mm=3.0, inter_object_max_mm=6.0,
                      delta_tmax_mm=1.0, temporal_mode="symmetric")
costs = CostTable(layout)
for t in range(2):
    for o in range(2):
        for s in range(2):
            costs.set(t, o, s, rng.integers(0, 10,
                                            size=(layout.columns_per_object[o],
                                                  3)).astype(float))

graph = LogismosGraph(layout, costs, spec,
                      adjacency_per_object=[[(0, 1)], []],
                      pairs=[ObjectPair(0, 0, 1, 0, 4)])
print("chains:", layout.n_chains, " flow-network arcs:", graph.net.n_arcs)

sol = graph.solve()
oracle = brute_force_solve(graph)
print(f"solver total cost:  {sol.total_cost:.1f} (scaled {sol.total_cost_scaled})")
print(f"oracle total cost:  {oracle.total_cost:.1f} (scaled {oracle.total_cost_scaled})")
assert sol.total_cost_scaled == oracle.total_cost_scaled
print("solver == oracle, exactly")
print("constraint violations:", check_solution(graph, sol))
for t in range(2):
    print(f" t={t} femur bone k: {sol.k(t, 0, 0)}  cartilage k: {sol.k(t, 0, 1)}")

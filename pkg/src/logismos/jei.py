"""Interactive correction sessions over a solved segmentation graph.

A correction point zeroes the cost at the nearest node of the nearest
column of the targeted surface and raises every other node of that column
to the column's maximum; columns within the influence radius blend toward
the same forced profile with linear distance weighting. Only terminal
capacities change, so the retained residual flow warm-starts the re-solve
and the returned surface is still the global optimum of the edited costs.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np

from . import serio
from .graph import (
    ConstraintSpec, CostTable, GraphLayout, LogismosGraph, ObjectPair,
    SurfaceSolution,
)
from .columns import ColumnSet
from .mesh import TriMesh, mesh_plane_contours
from .volume import Volume3D

SESSION_MAGIC = b"JEIS"


class JeiError(ValueError):
    pass


class CorrectionOutOfReach(JeiError):
    pass


@dataclass(frozen=True)
class CorrectionPoint:
    position: np.ndarray
    object_index: int
    surface: int
    timepoint: int = 0
    radius_mm: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "position",
                           np.asarray(self.position, dtype=np.float64).reshape(3))
        if self.radius_mm <= 0:
            raise JeiError("influence radius must be positive")


@dataclass
class _HistoryEntry:
    correction: CorrectionPoint
    previous_rows: list      # [((t, o, s, col), row), ...]


class JeiSession:
    """Mutable editing state: graph, residual flow, history, volume."""

    def __init__(self, volume: Volume3D, graph: LogismosGraph,
                 session_id: str | None = None):
        self.id = session_id or uuid.uuid4().hex
        self.volume = volume
        self.graph = graph
        self.history: list[_HistoryEntry] = []
        self.lock = threading.Lock()
        self.solution: SurfaceSolution = graph.solve() if graph.state is None \
            else graph.resolve()

    # -- corrections -------------------------------------------------------------

    def _columns_within(self, cp: CorrectionPoint):
        cs = self.graph.columns_by.get((cp.timepoint, cp.object_index))
        if cs is None:
            raise JeiError("session graph lacks column geometry for the target")
        d = np.linalg.norm(cs.nodes - cp.position[None, None, :], axis=2)
        col_dist = d.min(axis=1)
        nearest_node = d.argmin(axis=1)
        within = np.nonzero(col_dist <= cp.radius_mm)[0]
        if len(within) == 0:
            raise CorrectionOutOfReach(
                f"no column of the target surface within {cp.radius_mm} mm")
        return cs, within, col_dist, nearest_node

    def apply_correction(self, cp: CorrectionPoint):
        """Modify local costs, warm re-solve, and return
        ``(solution, changed_columns, resolve_seconds)``."""
        lay = self.graph.layout
        if not (0 <= cp.object_index < lay.n_objects
                and 0 <= cp.surface < lay.n_surfaces
                and 0 <= cp.timepoint < lay.n_timepoints):
            raise JeiError("correction target outside the session layout")
        with self.lock:
            cs, within, col_dist, nearest_node = self._columns_within(cp)
            anchor = int(within[np.argmin(col_dist[within])])
            m = int(nearest_node[anchor])

            block = self.graph.costs.get(cp.timepoint, cp.object_index, cp.surface)
            updates = []
            prev = []
            for col in within:
                row = block[col]
                forced = np.full_like(row, row.max())
                forced[m] = 0.0
                w = 1.0 if col == anchor else 1.0 - col_dist[col] / cp.radius_mm
                new_row = (1.0 - w) * row + w * forced
                prev.append(((cp.timepoint, cp.object_index, cp.surface, int(col)),
                             row.copy()))
                updates.append(((cp.timepoint, cp.object_index, cp.surface, int(col)),
                                new_row))
            before = self.solution
            self.graph.update_costs(updates)
            t0 = time.perf_counter()
            self.solution = self.graph.resolve()
            dt = time.perf_counter() - t0
            self.history.append(_HistoryEntry(cp, prev))
            changed = _solution_delta(before, self.solution)
            return self.solution, changed, dt

    def undo(self):
        """Revert the last correction and re-solve."""
        with self.lock:
            if not self.history:
                raise JeiError("no corrections to undo")
            entry = self.history.pop()
            self.graph.update_costs(entry.previous_rows)
            self.solution = self.graph.resolve()
            return self.solution

    # -- reads ------------------------------------------------------------------

    def surface_meshes(self):
        from .graph import solution_to_meshes
        return solution_to_meshes(self.graph, self.solution)

    def get_slice(self, axis: int, index: int, wmin: float, wmax: float):
        """8-bit windowed slice plus per-surface contour polylines.

        Contours are the intersections of the current solution meshes with
        the slice plane, returned as in-plane (u, v) mm coordinates over the
        remaining two axes in ascending axis order.
        """
        if axis not in (0, 1, 2):
            raise JeiError("axis must be 0, 1, or 2")
        if not (0 <= index < self.volume.dims[axis]):
            raise JeiError("slice index out of range")
        if not (wmax > wmin):
            raise JeiError("window requires wmax > wmin")
        sl = [slice(None)] * 3
        sl[axis] = index
        img = self.volume.data[tuple(sl)].astype(np.float64)
        img = np.clip((img - wmin) / (wmax - wmin) * 255.0, 0, 255).astype(np.uint8)

        plane_pos = self.volume.origin[axis] + index * self.volume.spacing[axis]
        normal = np.zeros(3)
        normal[axis] = 1.0
        point = np.zeros(3)
        point[axis] = plane_pos
        keep = [a for a in range(3) if a != axis]

        contours = []
        for (t, o, s), mesh in self.surface_meshes().items():
            for poly in mesh_plane_contours(mesh, normal, point,
                                            tol=1e-9):
                contours.append({
                    "timepoint": int(t),
                    "object": int(o),
                    "surface": int(s),
                    "points": poly[:, keep].tolist(),
                })
        return img, contours

    # -- persistence --------------------------------------------------------------

    def state_blob(self) -> bytes:
        return encode_session(self)

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.state_blob())


def _solution_delta(before: SurfaceSolution, after: SurfaceSolution):
    changed = []
    for key in after.ks:
        b = before.ks[key]
        a = after.ks[key]
        for col in np.nonzero(a != b)[0]:
            t, o, s = key
            changed.append({"timepoint": int(t), "object": int(o),
                            "surface": int(s), "column": int(col),
                            "old_k": int(b[col]), "new_k": int(a[col])})
    return changed


# -- session blob (graph + costs + columns + residual + solution + history) -------

def encode_session(session: JeiSession) -> bytes:
    g = session.graph
    lay = g.layout
    meta = {
        "session_id": session.id,
        "layout": {
            "n_timepoints": lay.n_timepoints,
            "columns_per_object": list(lay.columns_per_object),
            "n_surfaces": lay.n_surfaces,
            "K": lay.K,
        },
        "spec": {
            "node_spacing_mm": g.spec.node_spacing_mm,
            "smoothness_mm": list(g.spec.smooth_for(lay.n_surfaces)),
            "inter_surface_max_mm": g.spec.inter_surface_max_mm,
            "inter_surface_min_mm": g.spec.inter_surface_min_mm,
            "inter_object_max_mm": g.spec.inter_object_max_mm,
            "inter_object_min_mm": g.spec.inter_object_min_mm,
            "delta_tmax_mm": g.spec.delta_tmax_mm,
            "delta_tmin_mm": g.spec.delta_tmin_mm,
            "temporal_mode": g.spec.temporal_mode,
            "temporal_overrides": [list(o) for o in g.spec.temporal_overrides],
        },
        "pairs": [[p.object_a, p.column_a, p.object_b, p.column_b, p.gap_nodes]
                  for p in g.pairs],
        "history": [
            {
                "position": e.correction.position.tolist(),
                "object": e.correction.object_index,
                "surface": e.correction.surface,
                "timepoint": e.correction.timepoint,
                "radius_mm": e.correction.radius_mm,
            }
            for e in session.history
        ],
    }
    arrays = {"residual": session.graph.state.res if session.graph.state else
              np.zeros(0, dtype=np.int64)}
    for t in range(lay.n_timepoints):
        for o in range(lay.n_objects):
            for s in range(lay.n_surfaces):
                arrays[f"cost_{t}_{o}_{s}"] = g.costs.get(t, o, s)
                arrays[f"k_{t}_{o}_{s}"] = session.solution.ks[(t, o, s)]
    for (t, o), cs in g.columns_by.items():
        arrays[f"colbases_{t}_{o}"] = cs.bases
        arrays[f"colnodes_{t}_{o}"] = cs.nodes
        arrays[f"coladj_{t}_{o}"] = cs.adjacency
        arrays[f"colmeta_{t}_{o}"] = np.array([cs.node_spacing, cs.length_mm])
        if cs.triangles is not None:
            arrays[f"coltris_{t}_{o}"] = cs.triangles
    for o, adj in enumerate(g.adjacency_per_object):
        arrays[f"adjacency_{o}"] = np.asarray(adj, dtype=np.int64)
    for i, e in enumerate(session.history):
        arrays[f"hist{i}_keys"] = np.asarray([k for k, _ in e.previous_rows],
                                             dtype=np.int64).reshape(-1, 4)
        arrays[f"hist{i}_rows"] = (np.vstack([r for _, r in e.previous_rows])
                                   if e.previous_rows else np.zeros((0, lay.K)))
    return serio.encode_blocks(SESSION_MAGIC, 1, meta, arrays)


def decode_session(blob: bytes, volume: Volume3D) -> JeiSession:
    """Rebuild a session from its blob; the restored residual state is
    verified by a warm re-solve, so reads reflect the stored optimum."""
    version, meta, arrays = serio.decode_blocks(blob, SESSION_MAGIC)
    lay = GraphLayout(meta["layout"]["n_timepoints"],
                      tuple(meta["layout"]["columns_per_object"]),
                      meta["layout"]["n_surfaces"],
                      meta["layout"]["K"])
    sp = meta["spec"]
    spec = ConstraintSpec(
        node_spacing_mm=sp["node_spacing_mm"],
        smoothness_mm=tuple(sp["smoothness_mm"]),
        inter_surface_max_mm=sp["inter_surface_max_mm"],
        inter_surface_min_mm=sp["inter_surface_min_mm"],
        inter_object_max_mm=sp["inter_object_max_mm"],
        inter_object_min_mm=sp["inter_object_min_mm"],
        delta_tmax_mm=sp["delta_tmax_mm"],
        delta_tmin_mm=sp["delta_tmin_mm"],
        temporal_mode=sp["temporal_mode"],
        temporal_overrides=tuple(tuple(o) for o in sp["temporal_overrides"]),
    )
    costs = CostTable(lay, {
        (t, o, s): arrays[f"cost_{t}_{o}_{s}"]
        for t in range(lay.n_timepoints)
        for o in range(lay.n_objects)
        for s in range(lay.n_surfaces)
    })
    pairs = [ObjectPair(*row) for row in meta["pairs"]]
    adjacency = [arrays[f"adjacency_{o}"].reshape(-1, 2)
                 for o in range(lay.n_objects)]
    columns_by = {}
    for t in range(lay.n_timepoints):
        for o in range(lay.n_objects):
            key = f"colnodes_{t}_{o}"
            if key not in arrays:
                continue
            nodes = arrays[key]
            spacing, length = arrays[f"colmeta_{t}_{o}"]
            columns_by[(t, o)] = ColumnSet(
                arrays[f"colbases_{t}_{o}"],
                nodes, spacing, length, object_id=o,
                adjacency=arrays[f"coladj_{t}_{o}"],
                triangles=arrays.get(f"coltris_{t}_{o}"))
    graph = LogismosGraph(lay, costs, spec, adjacency, pairs, columns_by=columns_by)

    stored_res = arrays["residual"]
    if len(stored_res) == graph.net.n_arcs:
        # warm-restore: the rebuilt network reproduces arc order, so the
        # retained residual capacities line up one-to-one
        from . import maxflow as mf
        graph.state = mf.ResidualState(graph.net)
        graph.state.res[:] = stored_res
    session = JeiSession(volume, graph, session_id=meta["session_id"])
    for i, h in enumerate(meta["history"]):
        keys = arrays[f"hist{i}_keys"]
        rows = arrays[f"hist{i}_rows"]
        session.history.append(_HistoryEntry(
            CorrectionPoint(np.asarray(h["position"]), h["object"], h["surface"],
                            h["timepoint"], h["radius_mm"]),
            previous_rows=[(tuple(int(v) for v in k), rows[j])
                           for j, k in enumerate(keys)],
        ))
    return session


def replay_session(volume: Volume3D, graph: LogismosGraph, corrections) -> JeiSession:
    """Fresh session with a correction list re-applied in order."""
    session = JeiSession(volume, graph)
    for cp in corrections:
        session.apply_correction(cp)
    return session

"""Layered optimal-surface graph: construction, solve, verification, oracle.

One chain of K nodes exists per (time-point, object, surface, column). A
configuration assigns each chain a node index k; smoothness, inter-surface,
inter-object, and inter-time-point inequalities restrict configurations,
and every node carries a cost. The globally optimal configuration is found
as a minimum s-t cut:

* per chain, terminal arcs encode cost differences w(k) = c(k) - c(k-1),
  with the base node tied to the source by a capacity larger than the sum
  of all cost magnitudes (so every chain selects at least one node);
* infinite intra-chain arcs make the source side of any finite cut a prefix
  of every chain;
* every inequality between two chains becomes a family of infinite arcs.

Inequalities on sums of indices (opposing columns of two interacting
objects) are not representable between two prefix-encoded chains, so all
chains of every odd-colored object in the interaction graph are encoded in
reversed node order, which turns sum bounds into difference bounds. The
reversal is invisible outside this module.

Costs are scaled to integers (x 10^4, rounded) so the min cut is exact and
comparable against exhaustive enumeration.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import maxflow as mf

COST_SCALE = 10_000


class GraphError(ValueError):
    pass


class InfeasibleError(GraphError):
    """The constraint system admits no configuration."""


def _as_per_surface(value, n_surfaces, name):
    if np.isscalar(value):
        return tuple(float(value) for _ in range(n_surfaces))
    value = tuple(float(v) for v in value)
    if len(value) != n_surfaces:
        raise GraphError(f"{name} must be scalar or per-surface ({n_surfaces})")
    return value


@dataclass(frozen=True)
class ConstraintSpec:
    """Constraint distances in mm plus the node spacing used to discretize them.

    ``delta_tmax_mm=None`` disables temporal coupling. ``temporal_mode`` is
    ``"symmetric"`` (|change| bounded by delta_tmax) or ``"paper-literal"``
    (change bounded below by -delta_tmin and above by +delta_tmax).
    ``temporal_overrides`` optionally maps a surface index to its own
    (delta_tmin_mm, delta_tmax_mm).
    """

    node_spacing_mm: float
    smoothness_mm: tuple = 0.6
    inter_surface_max_mm: float = 6.0
    inter_surface_min_mm: float = 0.0
    inter_object_max_mm: float = 18.0
    inter_object_min_mm: float = 0.0
    delta_tmax_mm: float | None = 0.6
    delta_tmin_mm: float = 0.0
    temporal_mode: str = "symmetric"
    temporal_overrides: tuple = ()

    def __post_init__(self):
        if self.node_spacing_mm <= 0:
            raise GraphError("node spacing must be positive")
        if self.temporal_mode not in ("symmetric", "paper-literal"):
            raise GraphError(f"unknown temporal mode {self.temporal_mode!r}")
        pairs = [(self.inter_surface_min_mm, self.inter_surface_max_mm),
                 (self.inter_object_min_mm, self.inter_object_max_mm)]
        if self.delta_tmax_mm is not None:
            pairs.append((self.delta_tmin_mm, self.delta_tmax_mm))
        for lo, hi in pairs:
            if not (hi >= lo >= 0):
                raise GraphError("constraint bounds must satisfy max >= min >= 0")

    def smooth_for(self, n_surfaces):
        return _as_per_surface(self.smoothness_mm, n_surfaces, "smoothness_mm")

    def temporal_deltas_mm(self, surface):
        """(tmin, tmax) in mm for a surface, or None when uncoupled."""
        if self.delta_tmax_mm is None:
            return None
        for s, tmin, tmax in self.temporal_overrides:
            if s == surface:
                return float(tmin), float(tmax)
        return float(self.delta_tmin_mm), float(self.delta_tmax_mm)


def mm_to_nodes(mm: float, node_spacing_mm: float, floor: int = 0) -> int:
    """Convert a distance to node units: round(mm/spacing), floored at ``floor``."""
    if node_spacing_mm <= 0:
        raise GraphError("node spacing must be positive")
    return max(int(round(mm / node_spacing_mm)), floor)


@dataclass(frozen=True)
class GraphLayout:
    n_timepoints: int
    columns_per_object: tuple
    n_surfaces: int
    n_nodes_per_column: int

    def __post_init__(self):
        object.__setattr__(self, "columns_per_object",
                           tuple(int(c) for c in self.columns_per_object))
        if self.n_timepoints < 1 or self.n_nodes_per_column < 1:
            raise GraphError("layout dimensions must be >= 1")
        if self.n_surfaces not in (1, 2):
            raise GraphError("layouts support 1 or 2 surfaces per object")
        if any(c < 1 for c in self.columns_per_object):
            raise GraphError("every object needs at least one column")

    @property
    def n_objects(self):
        return len(self.columns_per_object)

    @property
    def K(self):
        return self.n_nodes_per_column

    @property
    def chains_per_timepoint(self):
        return self.n_surfaces * sum(self.columns_per_object)

    @property
    def n_chains(self):
        return self.n_timepoints * self.chains_per_timepoint

    def chain_index(self, t, o, s, col):
        base = t * self.chains_per_timepoint
        for oo in range(o):
            base += self.n_surfaces * self.columns_per_object[oo]
        return base + s * self.columns_per_object[o] + col

    def iter_chains(self):
        for t in range(self.n_timepoints):
            for o in range(self.n_objects):
                for s in range(self.n_surfaces):
                    for col in range(self.columns_per_object[o]):
                        yield t, o, s, col


class CostTable:
    """Finite node costs per (t, object, surface, column, node)."""

    def __init__(self, layout: GraphLayout, arrays=None):
        self.layout = layout
        if arrays is None:
            self._data = {
                (t, o, s): np.zeros((layout.columns_per_object[o], layout.K))
                for t in range(layout.n_timepoints)
                for o in range(layout.n_objects)
                for s in range(layout.n_surfaces)
            }
        else:
            self._data = {}
            for t in range(layout.n_timepoints):
                for o in range(layout.n_objects):
                    for s in range(layout.n_surfaces):
                        arr = np.asarray(arrays[(t, o, s)], dtype=np.float64)
                        want = (layout.columns_per_object[o], layout.K)
                        if arr.shape != want:
                            raise GraphError(f"cost block {(t, o, s)} has shape "
                                             f"{arr.shape}, expected {want}")
                        if not np.all(np.isfinite(arr)):
                            raise GraphError(f"cost block {(t, o, s)} is not finite")
                        self._data[(t, o, s)] = arr

    def get(self, t, o, s) -> np.ndarray:
        return self._data[(t, o, s)]

    def set(self, t, o, s, arr):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != self._data[(t, o, s)].shape:
            raise GraphError("cost block shape mismatch")
        if not np.all(np.isfinite(arr)):
            raise GraphError("costs must be finite")
        self._data[(t, o, s)] = arr

    def blocks(self):
        return dict(self._data)

    def copy(self) -> "CostTable":
        return CostTable(self.layout, {k: v.copy() for k, v in self._data.items()})


@dataclass
class SurfaceSolution:
    """Chosen node index per chain plus the achieved total cost."""

    layout: GraphLayout
    ks: dict                      # (t, o, s) -> int array over columns
    total_cost: float
    total_cost_scaled: int

    def k(self, t, o, s) -> np.ndarray:
        return self.ks[(t, o, s)]

    def flat(self) -> np.ndarray:
        out = np.empty(self.layout.n_chains, dtype=np.int64)
        for t, o, s, col in self.layout.iter_chains():
            out[self.layout.chain_index(t, o, s, col)] = self.ks[(t, o, s)][col]
        return out


# -- constraint intermediate representation ---------------------------------

@dataclass(frozen=True)
class DiffBound:
    """k[p] - k[q] <= bound (node units; bound may be negative)."""
    p: int
    q: int
    bound: int


@dataclass(frozen=True)
class SumBound:
    """lo <= k[a] + k[b] <= hi for one opposing column pair (node units)."""
    a: int
    b: int
    lo: int
    hi: int


@dataclass(frozen=True)
class ObjectPair:
    """Interacting opposing columns of two objects on one surface.

    ``gap_nodes`` is the node-unit distance between the two chain baselines
    measured along the connecting line; the separation of chosen surfaces is
    gap_nodes - (k_a + k_b) in node units.
    """
    object_a: int
    column_a: int
    object_b: int
    column_b: int
    gap_nodes: int


def compile_constraints(layout: GraphLayout, spec: ConstraintSpec,
                        adjacency_per_object, pairs):
    """Turn the mm-level spec into integer difference/sum bounds on chains."""
    sp = spec.node_spacing_mm
    smooth = [mm_to_nodes(v, sp, floor=1) for v in spec.smooth_for(layout.n_surfaces)]
    dio_max = mm_to_nodes(spec.inter_surface_max_mm, sp)
    dio_min = mm_to_nodes(spec.inter_surface_min_mm, sp)
    sep_min = mm_to_nodes(spec.inter_object_min_mm, sp)
    sep_max = mm_to_nodes(spec.inter_object_max_mm, sp)

    diffs = []
    sums = []
    ci = layout.chain_index
    for t in range(layout.n_timepoints):
        for o in range(layout.n_objects):
            adj = adjacency_per_object[o]
            for s in range(layout.n_surfaces):
                d = smooth[s]
                for i, j in adj:
                    a, b = ci(t, o, s, i), ci(t, o, s, j)
                    diffs.append(DiffBound(a, b, d))
                    diffs.append(DiffBound(b, a, d))
            if layout.n_surfaces == 2:
                for col in range(layout.columns_per_object[o]):
                    bone, cart = ci(t, o, 0, col), ci(t, o, 1, col)
                    diffs.append(DiffBound(bone, cart, -dio_min))
                    diffs.append(DiffBound(cart, bone, dio_max))
        for pr in pairs:
            s_top = layout.n_surfaces - 1
            a = ci(t, pr.object_a, s_top, pr.column_a)
            b = ci(t, pr.object_b, s_top, pr.column_b)
            lo = max(pr.gap_nodes - sep_max, 0)
            hi = pr.gap_nodes - sep_min
            sums.append(SumBound(a, b, lo, hi))

    for t in range(layout.n_timepoints - 1):
        for o in range(layout.n_objects):
            for s in range(layout.n_surfaces):
                deltas = spec.temporal_deltas_mm(s)
                if deltas is None:
                    continue
                tmin_mm, tmax_mm = deltas
                tmax = mm_to_nodes(tmax_mm, sp)
                if spec.temporal_mode == "symmetric":
                    da = db = tmax
                else:
                    da = mm_to_nodes(tmin_mm, sp)
                    db = tmax
                for col in range(layout.columns_per_object[o]):
                    c1 = ci(t, o, s, col)
                    c2 = ci(t + 1, o, s, col)
                    # k(t2) >= k(t1) - da ; k(t1) >= k(t2) - db
                    diffs.append(DiffBound(c1, c2, da))
                    diffs.append(DiffBound(c2, c1, db))
    return diffs, sums


def _object_flips(layout: GraphLayout, pairs) -> np.ndarray:
    """2-color the object interaction graph; flipped objects encode reversed."""
    flips = np.full(layout.n_objects, -1, dtype=np.int8)
    interact = {o: set() for o in range(layout.n_objects)}
    for pr in pairs:
        interact[pr.object_a].add(pr.object_b)
        interact[pr.object_b].add(pr.object_a)
        if pr.object_a == pr.object_b:
            raise GraphError("an object cannot oppose itself")
    for start in range(layout.n_objects):
        if flips[start] >= 0:
            continue
        flips[start] = 0
        stack = [start]
        while stack:
            u = stack.pop()
            for v in interact[u]:
                if flips[v] < 0:
                    flips[v] = 1 - flips[u]
                    stack.append(v)
                elif flips[v] == flips[u]:
                    raise GraphError("object interaction graph is not bipartite")
    return flips.astype(bool)


class LogismosGraph:
    """Flow-network encoding of one layered segmentation problem."""

    def __init__(self, layout: GraphLayout, costs: CostTable, spec: ConstraintSpec,
                 adjacency_per_object, pairs=(), columns_by=None):
        if len(adjacency_per_object) != layout.n_objects:
            raise GraphError("need one adjacency list per object")
        for o, adj in enumerate(adjacency_per_object):
            nc = layout.columns_per_object[o]
            for i, j in adj:
                if not (0 <= i < nc and 0 <= j < nc) or i == j:
                    raise GraphError(f"bad adjacency pair ({i}, {j}) for object {o}")
        for pr in pairs:
            if not (0 <= pr.column_a < layout.columns_per_object[pr.object_a]
                    and 0 <= pr.column_b < layout.columns_per_object[pr.object_b]):
                raise GraphError("pair column out of range")
        self.layout = layout
        self.costs = costs
        self.spec = spec
        self.adjacency_per_object = [np.asarray(sorted(set(map(tuple, a))), dtype=np.int64).reshape(-1, 2)
                                     for a in adjacency_per_object]
        self.pairs = list(pairs)
        self.columns_by = columns_by or {}
        self.flips = _object_flips(layout, self.pairs)
        self.diffs, self.sums = compile_constraints(
            layout, spec, self.adjacency_per_object, self.pairs)

        self._chain_flip = np.zeros(layout.n_chains, dtype=bool)
        for t, o, s, col in layout.iter_chains():
            self._chain_flip[layout.chain_index(t, o, s, col)] = self.flips[o]

        self.state: mf.ResidualState | None = None
        self._build_network()

    # -- node ids -----------------------------------------------------------

    def _node_id(self, chain: int, h: int) -> int:
        return 2 + chain * self.layout.K + h

    # -- integer costs --------------------------------------------------------

    def _scaled_costs(self) -> np.ndarray:
        """(n_chains, K) int64 costs in internal (possibly reversed) order."""
        lay = self.layout
        out = np.empty((lay.n_chains, lay.K), dtype=np.int64)
        for t in range(lay.n_timepoints):
            for o in range(lay.n_objects):
                for s in range(lay.n_surfaces):
                    block = np.rint(self.costs.get(t, o, s) * COST_SCALE).astype(np.int64)
                    for col in range(lay.columns_per_object[o]):
                        c = lay.chain_index(t, o, s, col)
                        row = block[col]
                        out[c] = row[::-1] if self._chain_flip[c] else row
        return out

    # -- construction -----------------------------------------------------------

    def _build_network(self):
        lay = self.layout
        K = lay.K
        ic = self._scaled_costs()
        w = np.diff(ic, axis=1)

        self.max_abs_cost = int(np.abs(ic).max(initial=0))
        self.base_cap = 1 + 2 * K * self.max_abs_cost * lay.n_chains
        self.inf_cap = (lay.n_chains + 2) * self.base_cap

        n_nodes = 2 + lay.n_chains * K
        net = mf.FlowNetwork(n_nodes, source=0, sink=1)

        src_arc = np.full((lay.n_chains, K), -1, dtype=np.int64)
        snk_arc = np.full((lay.n_chains, K), -1, dtype=np.int64)
        n_terminal = 0
        n_intra = 0
        for c in range(lay.n_chains):
            src_arc[c, 0] = net.add_arc(0, self._node_id(c, 0), self.base_cap)
            n_terminal += 1
            for h in range(1, K):
                wv = int(w[c, h - 1])
                nid = self._node_id(c, h)
                src_arc[c, h] = net.add_arc(0, nid, max(0, -wv))
                snk_arc[c, h] = net.add_arc(nid, 1, max(0, wv))
                if wv != 0:
                    n_terminal += 1
                net.add_arc(nid, self._node_id(c, h - 1), self.inf_cap)
                n_intra += 1

        n_constraint = 0
        for db in self._internal_diffs():
            n_constraint += self._emit_monotone(net, db.p, db.q, db.bound)
        self.net = net.finalize()
        self.src_arc = src_arc
        self.snk_arc = snk_arc
        self._stats = {
            "n_column_nodes": lay.n_chains * K,
            "n_terminal_arcs": n_terminal,
            "n_intra_arcs": n_intra,
            "n_constraint_arcs": n_constraint,
        }
        self._int_costs = ic

    def _internal_diffs(self):
        """All constraints as internal-order difference bounds.

        External DiffBound(p, q, B) means k_p - k_q <= B. With both chains
        flipped it becomes h_q - h_p <= B; flips never mix within a
        DiffBound. External SumBound(a, b, lo, hi) requires exactly one
        flipped chain and becomes a pair of internal difference bounds.
        """
        K1 = self.layout.K - 1
        out = []
        for db in self.diffs:
            fp, fq = self._chain_flip[db.p], self._chain_flip[db.q]
            if fp != fq:
                raise GraphError("difference bound spans mixed chain orientations")
            if fp:
                out.append(DiffBound(db.q, db.p, db.bound))
            else:
                out.append(db)
        for sb in self.sums:
            fa, fb = self._chain_flip[sb.a], self._chain_flip[sb.b]
            if fa == fb:
                raise GraphError("sum bound requires opposite chain orientations")
            a, b = (sb.a, sb.b) if fb else (sb.b, sb.a)
            # h_a + (K-1 - h_b) in [lo, hi]
            out.append(DiffBound(a, b, sb.hi - K1))
            out.append(DiffBound(b, a, K1 - sb.lo))
        return out

    def _emit_monotone(self, net, p, q, bound) -> int:
        """Arcs for internal h_p - h_q <= bound: v_p(h) -> v_q(h - bound)."""
        K = self.layout.K
        count = 0
        for h in range(K):
            tgt = h - bound
            if tgt <= 0:
                continue
            if tgt >= K:
                net.add_arc(self._node_id(p, h), 1, self.inf_cap)
            else:
                net.add_arc(self._node_id(p, h), self._node_id(q, tgt), self.inf_cap)
            count += 1
        return count

    def stats(self) -> dict:
        return dict(self._stats)

    # -- solving ------------------------------------------------------------

    def solve(self) -> SurfaceSolution:
        """Cold solve (or first solve); retains residual state for re-solves."""
        flow, side, state = mf.max_flow(self.net)
        self.state = state
        return self._recover(flow, side)

    def resolve(self) -> SurfaceSolution:
        """Warm re-solve after :meth:`update_costs`."""
        if self.state is None:
            return self.solve()
        flow, side = mf.resolve(self.state)
        return self._recover(flow, side)

    def _recover(self, flow, side) -> SurfaceSolution:
        if flow >= self.base_cap:
            raise InfeasibleError("constraints admit no configuration")
        lay = self.layout
        K = lay.K
        ks = {}
        total_scaled = 0
        total = 0.0
        for t in range(lay.n_timepoints):
            for o in range(lay.n_objects):
                for s in range(lay.n_surfaces):
                    ncols = lay.columns_per_object[o]
                    arr = np.empty(ncols, dtype=np.int64)
                    block = self.costs.get(t, o, s)
                    for col in range(ncols):
                        c = lay.chain_index(t, o, s, col)
                        first = self._node_id(c, 0)
                        member = side[first:first + K]
                        if not member[0]:
                            raise GraphError("cut dropped a chain base node")
                        h = int(np.max(np.nonzero(member)[0]))
                        k = K - 1 - h if self._chain_flip[c] else h
                        arr[col] = k
                        total_scaled += int(self._int_costs[c, h])
                        total += float(block[col, k])
                    ks[(t, o, s)] = arr
        return SurfaceSolution(lay, ks, total, total_scaled)

    # -- cost editing (the interactive path) ---------------------------------

    def update_costs(self, updates) -> None:
        """Apply ``((t, o, s, col), new_row)`` cost edits to the flow network.

        Rows are full K-vectors in external node order. The residual state is
        adjusted in place; call :meth:`resolve` to re-optimize.
        """
        if self.state is None:
            raise GraphError("solve() must run before incremental updates")
        changes = []
        for (t, o, s, col), row in updates:
            row = np.asarray(row, dtype=np.float64)
            if row.shape != (self.layout.K,):
                raise GraphError("cost row must have K entries")
            if not np.all(np.isfinite(row)):
                raise GraphError("costs must be finite")
            block = self.costs.get(t, o, s)
            block[col] = row
            c = self.layout.chain_index(t, o, s, col)
            ic = np.rint(row * COST_SCALE).astype(np.int64)
            if self._chain_flip[c]:
                ic = ic[::-1]
            if np.abs(ic).max(initial=0) > self.max_abs_cost:
                raise GraphError("edited costs exceed the magnitude budget of this graph")
            self._int_costs[c] = ic
            w = np.diff(ic)
            for h in range(1, self.layout.K):
                wv = int(w[h - 1])
                changes.append((int(self.src_arc[c, h]), max(0, -wv)))
                changes.append((int(self.snk_arc[c, h]), max(0, wv)))
        mf.update_capacities(self.state, changes)


# -- free-function contracts --------------------------------------------------

def build_graph(columns_by, costs: CostTable, spec: ConstraintSpec,
                direction_dot: float = -0.8) -> LogismosGraph:
    """Build a graph from per-(t, object) column sets.

    ``columns_by`` maps (t, object_index) to a ColumnSet. Adjacency comes
    from each column set; inter-object pairs couple opposing columns whose
    tips lie within the inter-object maximum and whose directions oppose
    (dot < ``direction_dot``), with the gap measured along the connecting
    line between the innermost nodes.
    """
    times = sorted({t for t, _ in columns_by})
    objects = sorted({o for _, o in columns_by})
    if times != list(range(len(times))) or objects != list(range(len(objects))):
        raise GraphError("columns_by must cover a dense (t, object) grid")
    T, NO = len(times), len(objects)
    first = columns_by[(0, 0)]
    K = first.K
    ncols = []
    for o in range(NO):
        cs = columns_by[(0, o)]
        ncols.append(cs.n_columns)
        for t in range(T):
            cs_t = columns_by[(t, o)]
            if cs_t.K != K or cs_t.n_columns != columns_by[(0, o)].n_columns:
                raise GraphError("column sets disagree across time-points")
    layout = costs.layout
    if (layout.n_timepoints != T or layout.columns_per_object != tuple(ncols)
            or layout.K != K):
        raise GraphError("cost table layout does not match the column sets")

    adjacency = [columns_by[(0, o)].adjacency for o in range(NO)]
    pairs = []
    if NO == 2:
        pairs = find_object_pairs(columns_by[(0, 0)], columns_by[(0, 1)], spec,
                                  direction_dot=direction_dot)
    elif NO > 2:
        raise GraphError("inter-object pairing is defined for two objects")
    return LogismosGraph(layout, costs, spec, adjacency, pairs,
                         columns_by=dict(columns_by))


def find_object_pairs(cs_a, cs_b, spec: ConstraintSpec,
                      direction_dot: float = -0.8):
    """Opposing-column pairing between two objects.

    Columns pair when their outer tips are closer than the inter-object
    maximum and their directions oppose. Each column of A pairs with at most
    the nearest qualifying column of B and vice versa (mutual nearest).
    """
    tips_a = cs_a.nodes[:, -1, :]
    tips_b = cs_b.nodes[:, -1, :]
    dir_a = cs_a.directions()
    dir_b = cs_b.directions()
    base_a = cs_a.nodes[:, 0, :]
    base_b = cs_b.nodes[:, 0, :]

    from scipy.spatial import cKDTree
    tree_b = cKDTree(tips_b)
    dist, idx = tree_b.query(tips_a, distance_upper_bound=spec.inter_object_max_mm)
    pairs = []
    nearest_of_b = {}
    cand = []
    for ia, (d, ib) in enumerate(zip(dist, idx)):
        if not np.isfinite(d):
            continue
        if float(dir_a[ia] @ dir_b[ib]) >= direction_dot:
            continue
        cand.append((ia, int(ib), float(d)))
        cur = nearest_of_b.get(int(ib))
        if cur is None or d < cur[1]:
            nearest_of_b[int(ib)] = (ia, float(d))
    for ia, ib, d in cand:
        if nearest_of_b[ib][0] != ia:
            continue
        u = base_b[ib] - base_a[ia]
        un = np.linalg.norm(u)
        if un <= 0:
            continue
        u = u / un
        gap = float((base_b[ib] - base_a[ia]) @ u)
        gap_nodes = int(np.floor(gap / spec.node_spacing_mm + 1e-9))
        pairs.append(ObjectPair(0, ia, 1, ib, gap_nodes))
    return pairs


def check_solution(graph: LogismosGraph, sol: SurfaceSolution):
    """Verify every constraint inequality; returns a list of violations.

    The checks are written directly against the mm-level specification (not
    against the arc emission), so they independently audit both the builder
    and the solver.
    """
    lay = graph.layout
    spec = graph.spec
    sp = spec.node_spacing_mm
    smooth = [mm_to_nodes(v, sp, floor=1) for v in spec.smooth_for(lay.n_surfaces)]
    dio_max = mm_to_nodes(spec.inter_surface_max_mm, sp)
    dio_min = mm_to_nodes(spec.inter_surface_min_mm, sp)
    sep_min = mm_to_nodes(spec.inter_object_min_mm, sp)
    sep_max = mm_to_nodes(spec.inter_object_max_mm, sp)

    bad = []
    for t in range(lay.n_timepoints):
        for o in range(lay.n_objects):
            for s in range(lay.n_surfaces):
                k = sol.k(t, o, s)
                if np.any(k < 0) or np.any(k > lay.K - 1):
                    bad.append(("range", t, o, s))
                for i, j in graph.adjacency_per_object[o]:
                    if abs(int(k[i]) - int(k[j])) > smooth[s]:
                        bad.append(("smoothness", t, o, s, int(i), int(j)))
            if lay.n_surfaces == 2:
                kb = sol.k(t, o, 0)
                kc = sol.k(t, o, 1)
                d = kc.astype(int) - kb.astype(int)
                for col in np.nonzero((d < dio_min) | (d > dio_max))[0]:
                    bad.append(("inter_surface", t, o, int(col)))
        s_top = lay.n_surfaces - 1
        for pr in graph.pairs:
            ka = int(sol.k(t, pr.object_a, s_top)[pr.column_a])
            kb = int(sol.k(t, pr.object_b, s_top)[pr.column_b])
            sep = pr.gap_nodes - (ka + kb)
            if sep < sep_min or sep > sep_max:
                bad.append(("inter_object", t, pr.object_a, pr.column_a,
                            pr.object_b, pr.column_b))
    for t in range(lay.n_timepoints - 1):
        for o in range(lay.n_objects):
            for s in range(lay.n_surfaces):
                deltas = spec.temporal_deltas_mm(s)
                if deltas is None:
                    continue
                tmin_mm, tmax_mm = deltas
                tmax = mm_to_nodes(tmax_mm, sp)
                if spec.temporal_mode == "symmetric":
                    lo, hi = -tmax, tmax
                else:
                    lo, hi = -mm_to_nodes(tmin_mm, sp), tmax
                k1 = sol.k(t, o, s).astype(int)
                k2 = sol.k(t + 1, o, s).astype(int)
                d = k2 - k1
                for col in np.nonzero((d < lo) | (d > hi))[0]:
                    bad.append(("temporal", t, o, s, int(col)))
    return bad


def brute_force_solve(graph: LogismosGraph, max_configs: int = 10_000_000) -> SurfaceSolution:
    """Exhaustive oracle: enumerate configurations, filter, minimize.

    Ties break toward the lexicographically smallest chain-index vector.
    Raises on instances above ``max_configs`` raw configurations and
    :class:`InfeasibleError` when nothing satisfies the constraints.
    """
    lay = graph.layout
    K = lay.K
    n = lay.n_chains
    if K ** n > max_configs:
        raise GraphError(f"instance too large for enumeration ({K}**{n})")

    ic_ext = np.empty((n, K), dtype=np.int64)
    for t, o, s, col in lay.iter_chains():
        c = lay.chain_index(t, o, s, col)
        ic_ext[c] = np.rint(graph.costs.get(t, o, s)[col] * COST_SCALE).astype(np.int64)

    by_later_diff = [[] for _ in range(n)]
    for db in graph.diffs:
        by_later_diff[max(db.p, db.q)].append(db)
    by_later_sum = [[] for _ in range(n)]
    for sb in graph.sums:
        by_later_sum[max(sb.a, sb.b)].append(sb)

    min_tail = np.zeros(n + 1, dtype=np.int64)
    for c in range(n - 1, -1, -1):
        min_tail[c] = min_tail[c + 1] + ic_ext[c].min()

    best_cost = None
    best_vec = None
    assign = np.zeros(n, dtype=np.int64)

    def feasible(c, k):
        for db in by_later_diff[c]:
            p, q = db.p, db.q
            kp = k if p == c else assign[p]
            kq = k if q == c else assign[q]
            if kp - kq > db.bound:
                return False
        for sb in by_later_sum[c]:
            ka = k if sb.a == c else assign[sb.a]
            kb = k if sb.b == c else assign[sb.b]
            if not (sb.lo <= ka + kb <= sb.hi):
                return False
        return True

    def rec(c, partial):
        nonlocal best_cost, best_vec
        if best_cost is not None and partial + min_tail[c] >= best_cost:
            return
        if c == n:
            best_cost = partial
            best_vec = assign.copy()
            return
        for k in range(K):
            if not feasible(c, k):
                continue
            assign[c] = k
            rec(c + 1, partial + int(ic_ext[c, k]))
        assign[c] = 0

    rec(0, 0)
    if best_vec is None:
        raise InfeasibleError("enumeration found no feasible configuration")

    ks = {}
    total = 0.0
    for t in range(lay.n_timepoints):
        for o in range(lay.n_objects):
            for s in range(lay.n_surfaces):
                ncols = lay.columns_per_object[o]
                arr = np.empty(ncols, dtype=np.int64)
                block = graph.costs.get(t, o, s)
                for col in range(ncols):
                    c = lay.chain_index(t, o, s, col)
                    arr[col] = best_vec[c]
                    total += float(block[col, best_vec[c]])
                ks[(t, o, s)] = arr
    return SurfaceSolution(lay, ks, total, int(best_cost))


def solve(graph: LogismosGraph) -> SurfaceSolution:
    return graph.solve()


def solution_to_meshes(graph: LogismosGraph, sol: SurfaceSolution, columns_by=None):
    """Surface meshes at the chosen nodes, topology taken from the base mesh."""
    from .mesh import TriMesh
    columns_by = columns_by or graph.columns_by
    if not columns_by:
        raise GraphError("no column geometry attached to this graph")
    out = {}
    lay = graph.layout
    for t in range(lay.n_timepoints):
        for o in range(lay.n_objects):
            cs = columns_by[(t, o)]
            if cs.triangles is None:
                raise GraphError("column set lacks base-mesh topology")
            for s in range(lay.n_surfaces):
                k = sol.k(t, o, s)
                verts = cs.nodes[np.arange(cs.n_columns), k, :]
                out[(t, o, s)] = TriMesh(verts, cs.triangles.copy())
    return out

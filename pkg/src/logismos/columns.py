"""Search-column construction along the field of unit point charges.

Every mesh vertex carries a unit positive charge; the column through a
vertex is the field streamline passing through it, traced with fixed-step
RK4 in both directions (outward beyond the surface, inward beneath it) and
resampled to exactly uniform Euclidean node spacing. Streamlines of a fixed
charge distribution cannot cross, which is what makes the resulting columns
a valid non-intersecting graph scaffold; an exact pairwise segment check
verifies the discrete approximation kept that property.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volume import Volume3D, sample_trilinear


class ColumnError(ValueError):
    pass


class FieldSingularityError(ColumnError):
    """An integration step landed on (or numerically at) a charge."""


class ColumnIntersectionError(ColumnError):
    def __init__(self, pairs):
        self.pairs = pairs
        super().__init__(f"{len(pairs)} column pairs intersect: {pairs[:5]}...")


@dataclass(frozen=True)
class Column:
    id: int
    base: np.ndarray
    nodes: np.ndarray          # (K, 3), innermost first
    node_spacing: float


class ColumnSet:
    """All columns of one object plus their adjacency and base topology."""

    def __init__(self, bases, nodes, node_spacing, length_mm, object_id=0,
                 adjacency=None, triangles=None):
        self.bases = np.asarray(bases, dtype=np.float64).reshape(-1, 3)
        self.nodes = np.asarray(nodes, dtype=np.float64)
        if self.nodes.ndim != 3 or self.nodes.shape[0] != len(self.bases):
            raise ColumnError("nodes must be (n_columns, K, 3)")
        self.node_spacing = float(node_spacing)
        self.length_mm = float(length_mm)
        self.object_id = object_id
        if adjacency is None:
            adjacency = np.zeros((0, 2), dtype=np.int64)
        self.adjacency = np.asarray(adjacency, dtype=np.int64).reshape(-1, 2)
        self.triangles = None if triangles is None else np.asarray(triangles, dtype=np.int32)
        d = np.linalg.norm(np.diff(self.nodes, axis=1), axis=2)
        if d.size and not np.allclose(d, self.node_spacing, atol=1e-6):
            raise ColumnError("node spacing is not uniform")

    @property
    def n_columns(self) -> int:
        return len(self.bases)

    @property
    def K(self) -> int:
        return self.nodes.shape[1]

    def column(self, i: int) -> Column:
        return Column(i, self.bases[i], self.nodes[i], self.node_spacing)

    def directions(self) -> np.ndarray:
        """Unit inner-to-outer direction per column."""
        d = self.nodes[:, -1, :] - self.nodes[:, 0, :]
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def to_json(self) -> str:
        doc = {
            "node_spacing": self.node_spacing,
            "length_mm": self.length_mm,
            "object_id": self.object_id,
            "bases": self.bases.tolist(),
            "nodes": self.nodes.tolist(),
            "adjacency": self.adjacency.tolist(),
        }
        if self.triangles is not None:
            doc["triangles"] = self.triangles.tolist()
        return json.dumps(doc, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ColumnSet":
        doc = json.loads(text)
        return ColumnSet(doc["bases"], np.asarray(doc["nodes"]),
                         doc["node_spacing"], doc["length_mm"], doc["object_id"],
                         np.asarray(doc["adjacency"], dtype=np.int64).reshape(-1, 2),
                         doc.get("triangles"))

    def save(self, path):
        Path(path).write_text(self.to_json())

    @staticmethod
    def load(path) -> "ColumnSet":
        return ColumnSet.from_json(Path(path).read_text())


# -- charge field -------------------------------------------------------------

def _field(points: np.ndarray, charges: np.ndarray, eps2: float = 0.0,
           chunk: int = 512) -> np.ndarray:
    out = np.empty_like(points)
    for lo in range(0, len(points), chunk):
        p = points[lo:lo + chunk]
        diff = p[:, None, :] - charges[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", diff, diff)
        if eps2 == 0.0 and np.any(r2 < 1e-18):
            raise FieldSingularityError("integration point touches a charge")
        out[lo:lo + chunk] = np.einsum("ijk,ij->ik", diff, (r2 + eps2) ** -1.5)
    return out


def _unit_field(points, charges, last_dir, eps2, stall=1e-9):
    e = _field(points, charges, eps2)
    mag = np.linalg.norm(e, axis=1)
    stalled = mag < stall
    mag = np.where(stalled, 1.0, mag)
    u = e / mag[:, None]
    if np.any(stalled):
        u[stalled] = last_dir[stalled]
    return u


def _trace(starts, init_dir, charges, step, n_steps, eps2=0.0):
    """Fixed-step RK4 streamlines for all columns at once; (n_steps+1, N, 3)."""
    pts = np.empty((n_steps + 1,) + starts.shape)
    pts[0] = starts
    x = starts.copy()
    last = init_dir.copy()
    for i in range(n_steps):
        k1 = _unit_field(x, charges, last, eps2)
        k2 = _unit_field(x + 0.5 * step * k1, charges, last, eps2)
        k3 = _unit_field(x + 0.5 * step * k2, charges, last, eps2)
        k4 = _unit_field(x + step * k3, charges, last, eps2)
        move = (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        x = x + move
        norm = np.linalg.norm(move, axis=1, keepdims=True)
        ok = norm[:, 0] > 1e-12
        last[ok] = move[ok] / norm[ok]
        pts[i + 1] = x
    return pts


def _walk_euclidean(polyline: np.ndarray, spacing: float, count: int) -> np.ndarray:
    """Place ``count`` points after the start, each exactly ``spacing`` from
    the previous one, along the polyline."""
    out = np.empty((count, 3))
    cur = polyline[0]
    seg = 0
    a = polyline[0]
    n = len(polyline)
    for m in range(count):
        while seg + 1 < n and np.linalg.norm(polyline[seg + 1] - cur) < spacing:
            seg += 1
            a = polyline[seg]
        if seg + 1 >= n:
            raise ColumnError("traced streamline too short for requested column")
        b = polyline[seg + 1]
        d = b - a
        alpha = d @ d
        beta = d @ (a - cur)
        gamma = (a - cur) @ (a - cur) - spacing * spacing
        disc = beta * beta - alpha * gamma
        if disc < 0 or alpha <= 0:
            raise ColumnError("degenerate streamline segment")
        tau = (-beta + np.sqrt(disc)) / alpha
        nxt = a + tau * d
        out[m] = nxt
        cur = nxt
        a = nxt
    return out


def build_columns(mesh, K: int, length_mm: float, node_spacing_mm: float,
                  inside_fraction: float = 1.0 / 3.0, verify: bool = True,
                  intersection_tol: float = 1e-9, softening_scale: float = 2.0) -> ColumnSet:
    """Trace one column per mesh vertex; see the module docstring.

    ``K * node_spacing_mm`` must match ``length_mm``; ``inside_fraction`` of
    the length lies beneath the surface. The charge field is Plummer-softened
    with radius ``softening_scale`` x the mean mesh edge length, which keeps
    streamlines near the continuous-surface limit instead of wiggling with
    vertex discreteness (0 disables softening). Raises on traced
    intersections when ``verify`` is set.
    """
    if abs(K * node_spacing_mm - length_mm) > node_spacing_mm + 1e-9:
        raise ColumnError(
            f"K * spacing = {K * node_spacing_mm:.4f} inconsistent with "
            f"length {length_mm:.4f}")
    charges = mesh.vertices
    normals = mesh.vertex_normals()
    edges = mesh.edges()
    mean_edge = float(np.linalg.norm(
        mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1).mean())
    eps2 = (softening_scale * mean_edge) ** 2
    step = node_spacing_mm / 4.0
    n_in = int(round(inside_fraction * K))
    n_out = K - 1 - n_in
    l_out = n_out * node_spacing_mm

    # The interior of a closed shell of charges has a near-zero, noisy field,
    # so only the outward half follows the field; the inward half continues
    # straight beneath the vertex along the column's launch direction.
    boot = 0.5 * step
    steps_out = int(np.ceil((l_out + 3 * node_spacing_mm) / step))
    out_fwd = _trace(charges + boot * normals, normals.copy(), charges, step,
                     steps_out, eps2=eps2)

    n = len(charges)
    nodes = np.empty((n, K, 3))
    inward_offsets = np.arange(n_in, 0, -1)
    for i in range(n):
        poly_out = np.vstack([charges[i][None, :], out_fwd[:, i, :]])
        if n_out > 0:
            outer = _walk_euclidean(poly_out, node_spacing_mm, n_out)
        else:
            outer = np.empty((0, 3))
        if n_in > 0:
            nodes[i, :n_in] = (charges[i][None, :]
                               - inward_offsets[:, None] * node_spacing_mm * normals[i])
        nodes[i, n_in] = charges[i]
        nodes[i, n_in + 1:] = outer

    cs = ColumnSet(charges, nodes, node_spacing_mm, length_mm,
                   adjacency=mesh.edges(), triangles=mesh.triangles)
    if verify:
        report = verify_non_intersecting(cs, tol=intersection_tol)
        if report:
            raise ColumnIntersectionError(report)
    return cs


# -- intersection verification ------------------------------------------------

def _segment_pair_distance(p1, q1, p2, q2):
    """Min distance between segment batches (vectorized, Ericson's method)."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)
    denom = a * e - b * b
    safe_denom = np.where(denom > 1e-30, denom, 1.0)
    s = np.where(denom > 1e-30, np.clip((b * f - c * e) / safe_denom, 0.0, 1.0), 0.0)
    safe_e = np.where(e > 1e-30, e, 1.0)
    t = (b * s + f) / safe_e
    t_cl = np.clip(t, 0.0, 1.0)
    moved = t != t_cl
    safe_a = np.where(a > 1e-30, a, 1.0)
    s = np.where(moved, np.clip((b * t_cl - c) / safe_a, 0.0, 1.0), s)
    cp1 = p1 + s[:, None] * d1
    cp2 = p2 + t_cl[:, None] * d2
    return np.linalg.norm(cp1 - cp2, axis=1)


def verify_non_intersecting(cs: ColumnSet, tol: float = 1e-9):
    """Exact pairwise polyline check; returns offending column-id pairs.

    Spatial hashing keeps the candidate set near-linear; every candidate
    segment pair is tested with the exact closed-form distance.
    """
    n, K = cs.n_columns, cs.K
    segs_a = cs.nodes[:, :-1, :].reshape(-1, 3)
    segs_b = cs.nodes[:, 1:, :].reshape(-1, 3)
    col_of = np.repeat(np.arange(n), K - 1)

    cell = 2.0 * cs.node_spacing
    lo = np.minimum(segs_a, segs_b) - tol
    hi = np.maximum(segs_a, segs_b) + tol
    lo_c = np.floor(lo / cell).astype(np.int64)
    hi_c = np.floor(hi / cell).astype(np.int64)

    buckets = {}
    for sid in range(len(segs_a)):
        for cx in range(lo_c[sid, 0], hi_c[sid, 0] + 1):
            for cy in range(lo_c[sid, 1], hi_c[sid, 1] + 1):
                for cz in range(lo_c[sid, 2], hi_c[sid, 2] + 1):
                    buckets.setdefault((cx, cy, cz), []).append(sid)

    cand = set()
    for members in buckets.values():
        if len(members) < 2:
            continue
        for ii in range(len(members)):
            si = members[ii]
            for jj in range(ii + 1, len(members)):
                sj = members[jj]
                if col_of[si] != col_of[sj]:
                    cand.add((si, sj) if si < sj else (sj, si))
    if not cand:
        return []
    cand = np.asarray(sorted(cand), dtype=np.int64)
    dist = _segment_pair_distance(segs_a[cand[:, 0]], segs_b[cand[:, 0]],
                                  segs_a[cand[:, 1]], segs_b[cand[:, 1]])
    hits = cand[dist < tol]
    pairs = sorted({(int(col_of[i]), int(col_of[j])) for i, j in hits})
    return pairs


# -- sampling and geometry helpers ---------------------------------------------

def column_profile(vol: Volume3D, col: Column) -> np.ndarray:
    """Trilinear intensity profile along one column, innermost first."""
    return np.asarray(sample_trilinear(vol, col.nodes), dtype=np.float64)


def profile_stack(vol: Volume3D, cs: ColumnSet) -> np.ndarray:
    """(n_columns, K) profiles for a whole column set."""
    flat = sample_trilinear(vol, cs.nodes.reshape(-1, 3))
    return np.asarray(flat, dtype=np.float64).reshape(cs.n_columns, cs.K)


def fit_mean_shape(mean_mesh, target_bounds):
    """Axis-aligned affine (scale + translate) putting the mean mesh's
    bounding box onto ``target_bounds`` ([min_corner, max_corner])."""
    from .mesh import TriMesh
    tb = np.asarray(target_bounds, dtype=np.float64).reshape(2, 3)
    mb = mean_mesh.bounds()
    m_ext = mb[1] - mb[0]
    t_ext = tb[1] - tb[0]
    if np.any(t_ext <= 0):
        raise ColumnError("target bounds have zero extent")
    if np.any(m_ext <= 0):
        raise ColumnError("mean mesh has zero extent")
    scale = t_ext / m_ext
    verts = tb[0] + (mean_mesh.vertices - mb[0]) * scale
    return TriMesh(verts, mean_mesh.triangles.copy(),
                   None if mean_mesh.labels is None else mean_mesh.labels.copy(),
                   mean_mesh.watertight)


def column_mesh_intersections(cs: ColumnSet, mesh) -> np.ndarray:
    """First column/mesh crossing as a fractional node index per column.

    Returns NaN for columns that never cross the mesh. Used for planting
    ground-truth node indices and for labeling training nodes.
    """
    v = mesh.vertices
    tri = mesh.triangles
    a = v[tri[:, 0]]
    e1 = v[tri[:, 1]] - a
    e2 = v[tri[:, 2]] - a

    tri_lo = np.minimum(np.minimum(v[tri[:, 0]], v[tri[:, 1]]), v[tri[:, 2]])
    tri_hi = np.maximum(np.maximum(v[tri[:, 0]], v[tri[:, 1]]), v[tri[:, 2]])

    out = np.full(cs.n_columns, np.nan)
    K = cs.K
    for i in range(cs.n_columns):
        seg_a = cs.nodes[i, :-1, :]
        seg_b = cs.nodes[i, 1:, :]
        lo = np.minimum(seg_a, seg_b).min(axis=0)
        hi = np.maximum(seg_a, seg_b).max(axis=0)
        cand = np.nonzero(~np.any((tri_hi < lo) | (tri_lo > hi), axis=1))[0]
        if len(cand) == 0:
            continue
        best = np.inf
        A, E1, E2 = a[cand], e1[cand], e2[cand]
        for s in range(K - 1):
            d = seg_b[s] - seg_a[s]
            h = np.cross(d, E2)
            det = np.einsum("ij,ij->i", E1, h)
            ok = np.abs(det) > 1e-14
            if not ok.any():
                continue
            inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
            sv = seg_a[s] - A
            u = np.einsum("ij,ij->i", sv, h) * inv
            q = np.cross(sv, E1)
            w = np.einsum("ij,j->i", q, d) * inv
            t = np.einsum("ij,ij->i", E2, q) * inv
            hit = ok & (u >= -1e-12) & (w >= -1e-12) & (u + w <= 1 + 1e-12) \
                & (t >= 0) & (t <= 1)
            if hit.any():
                best = s + float(t[hit].min())
                break
        if np.isfinite(best):
            out[i] = best
    return out

"""Triangle meshes: validation, I/O, normals, slicing, and containment tests.

Meshes are plain vertex/triangle arrays. The file format is JSON with
``vertices``, ``triangles`` and optional per-vertex ``labels``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_DEGENERATE_AREA = 1e-12


class MeshError(ValueError):
    pass


@dataclass
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    labels: np.ndarray | None = None
    watertight: bool | None = None
    _normals: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if len(self.labels) != len(self.vertices):
                raise MeshError("labels must be per-vertex")
        n = len(self.vertices)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            raise MeshError("triangle index out of range")
        if np.any(self.triangle_areas() <= _DEGENERATE_AREA):
            raise MeshError("degenerate (zero-area) triangle")
        if self.watertight:
            if not self.is_closed():
                raise MeshError("mesh marked watertight but is not closed")

    # -- basic quantities ---------------------------------------------------

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices
        t = self.triangles
        e1 = v[t[:, 1]] - v[t[:, 0]]
        e2 = v[t[:, 2]] - v[t[:, 0]]
        return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def bounds(self) -> np.ndarray:
        """(2, 3) array: [min_corner, max_corner] in mm."""
        return np.array([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    def centroid(self) -> np.ndarray:
        """Area-weighted centroid of the surface."""
        v = self.vertices
        t = self.triangles
        centers = v[t].mean(axis=1)
        w = self.triangle_areas()
        return (centers * w[:, None]).sum(axis=0) / w.sum()

    def edges(self) -> np.ndarray:
        """Unique undirected edges, (E, 2) sorted pairs."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def is_closed(self) -> bool:
        """Every undirected edge used by exactly two triangles, once per direction."""
        t = self.triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        und = np.sort(directed, axis=1)
        _, counts = np.unique(und, axis=0, return_counts=True)
        if not np.all(counts == 2):
            return False
        # consistent orientation: each directed edge appears exactly once
        _, dcounts = np.unique(directed, axis=0, return_counts=True)
        return bool(np.all(dcounts == 1))

    def vertex_normals(self) -> np.ndarray:
        """Angle-weighted outward vertex normals (unit length).

        Angle weighting is insensitive to the valence and shape of the
        incident triangle fan, which matters for launch directions on
        near-spherical meshes.
        """
        if self._normals is not None:
            return self._normals
        v = self.vertices
        t = self.triangles
        fn = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        fn_unit = fn / np.linalg.norm(fn, axis=1, keepdims=True)
        acc = np.zeros_like(v)
        for c in range(3):
            p = v[t[:, c]]
            e1 = v[t[:, (c + 1) % 3]] - p
            e2 = v[t[:, (c + 2) % 3]] - p
            cosang = np.einsum("ij,ij->i", e1, e2) / (
                np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1))
            ang = np.arccos(np.clip(cosang, -1.0, 1.0))
            np.add.at(acc, t[:, c], fn_unit * ang[:, None])
        norm = np.linalg.norm(acc, axis=1)
        norm[norm == 0] = 1.0
        self._normals = acc / norm[:, None]
        return self._normals

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "TriMesh":
        verts = self.vertices @ np.asarray(rotation).T + np.asarray(translation)
        return TriMesh(verts, self.triangles.copy(),
                       None if self.labels is None else self.labels.copy(),
                       self.watertight)

    def copy(self) -> "TriMesh":
        return TriMesh(self.vertices.copy(), self.triangles.copy(),
                       None if self.labels is None else self.labels.copy(),
                       self.watertight)


# -- I/O --------------------------------------------------------------------

def write_mesh(mesh: TriMesh, path) -> None:
    doc = {
        "vertices": mesh.vertices.tolist(),
        "triangles": mesh.triangles.tolist(),
    }
    if mesh.labels is not None:
        doc["labels"] = np.asarray(mesh.labels).tolist()
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def read_mesh(path) -> TriMesh:
    doc = json.loads(Path(path).read_text())
    return TriMesh(np.asarray(doc["vertices"], dtype=np.float64),
                   np.asarray(doc["triangles"], dtype=np.int32),
                   np.asarray(doc["labels"]) if "labels" in doc else None)


# -- icosphere ---------------------------------------------------------------

def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Deterministic subdivided icosahedron on a sphere.

    Vertex counts: 12, 42, 162, 642, 2562 for subdivisions 0..4.
    """
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)

    for _ in range(subdivisions):
        midpoint = {}
        verts_list = list(verts)

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                m = verts_list[a] + verts_list[b]
                m = m / np.linalg.norm(m)
                midpoint[key] = len(verts_list)
                verts_list.append(m)
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.asarray(verts_list)
        faces = np.asarray(new_faces, dtype=np.int64)

    verts = verts * radius + np.asarray(center, dtype=np.float64)
    return TriMesh(verts, faces, watertight=True)


# -- geometric queries --------------------------------------------------------

def points_in_mesh(mesh: TriMesh, points) -> np.ndarray:
    """Ray-parity containment test for a batch of points (+x ray direction).

    Points exactly on the surface are classified arbitrarily; callers should
    keep queries away from the surface by a tolerance.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    v = mesh.vertices
    tri = mesh.triangles
    a, b, c = v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]]
    # 2D (y, z) prefilter per triangle
    lo_y = np.minimum.reduce([a[:, 1], b[:, 1], c[:, 1]])
    hi_y = np.maximum.reduce([a[:, 1], b[:, 1], c[:, 1]])
    lo_z = np.minimum.reduce([a[:, 2], b[:, 2], c[:, 2]])
    hi_z = np.maximum.reduce([a[:, 2], b[:, 2], c[:, 2]])

    inside = np.zeros(len(pts), dtype=bool)
    e1 = b - a
    e2 = c - a
    for i, p in enumerate(pts):
        cand = (p[1] >= lo_y) & (p[1] <= hi_y) & (p[2] >= lo_z) & (p[2] <= hi_z)
        if not cand.any():
            continue
        A, E1, E2 = a[cand], e1[cand], e2[cand]
        # Moller-Trumbore with d = +x
        h = np.zeros_like(E2)
        h[:, 1] = -E2[:, 2]
        h[:, 2] = E2[:, 1]
        det = (E1 * h).sum(axis=1)
        ok = np.abs(det) > 1e-14
        s = p - A
        u = np.where(ok, (s * h).sum(axis=1) / np.where(ok, det, 1.0), -1.0)
        q = np.cross(s, E1)
        vpar = np.where(ok, q[:, 0] / np.where(ok, det, 1.0), -1.0)
        t = np.where(ok, (E2 * q).sum(axis=1) / np.where(ok, det, 1.0), -1.0)
        hits = ok & (u >= 0) & (vpar >= 0) & (u + vpar <= 1) & (t > 1e-12)
        inside[i] = (hits.sum() % 2) == 1
    return inside if np.asarray(points).ndim > 1 else inside[0]


def _closest_on_triangles(p, a, b, c):
    """Closest point to p on each triangle (a, b, c); all (M, 3) row-wise."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def assign(mask, pts):
        sel = mask & ~done
        out[sel] = pts[sel]
        done[sel] = True

    assign((d1 <= 0) & (d2 <= 0), a)
    assign((d3 >= 0) & (d4 <= d3), b)
    vc = d1 * d4 - d3 * d2
    denom = np.where(np.abs(d1 - d3) > 1e-30, d1 - d3, 1.0)
    assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + (d1 / denom)[:, None] * ab)
    assign((d6 >= 0) & (d5 <= d6), c)
    vb = d5 * d2 - d1 * d6
    denom = np.where(np.abs(d2 - d6) > 1e-30, d2 - d6, 1.0)
    assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + (d2 / denom)[:, None] * ac)
    va = d3 * d6 - d5 * d4
    e = (d4 - d3) + (d5 - d6)
    denom = np.where(np.abs(e) > 1e-30, e, 1.0)
    assign((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
           b + ((d4 - d3) / denom)[:, None] * (c - b))
    va_vb_vc = va + vb + vc
    denom = np.where(np.abs(va_vb_vc) > 1e-30, va_vb_vc, 1.0)
    v = vb / denom
    w = vc / denom
    assign(np.ones(len(p), dtype=bool), a + v[:, None] * ab + w[:, None] * ac)
    return out


def closest_surface_points(mesh: TriMesh, points, k: int = 16):
    """Nearest point on the mesh surface for each query point.

    Candidate triangles come from a k-d tree over triangle centroids; the
    exact closest point is evaluated on each candidate. Returns
    ``(points_on_surface, distances)``.
    """
    from scipy.spatial import cKDTree
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    tri = mesh.triangles
    v = mesh.vertices
    centers = v[tri].mean(axis=1)
    tree = getattr(mesh, "_tri_tree", None)
    if tree is None or getattr(mesh, "_tri_tree_len", -1) != len(tri):
        tree = cKDTree(centers)
        mesh._tri_tree = tree
        mesh._tri_tree_len = len(tri)
    k = min(k, len(tri))
    _, cand = tree.query(pts, k=k)
    cand = np.atleast_2d(cand)
    q = np.repeat(pts, k, axis=0)
    t = cand.reshape(-1)
    closest = _closest_on_triangles(q, v[tri[t, 0]], v[tri[t, 1]], v[tri[t, 2]])
    d = np.linalg.norm(closest - q, axis=1).reshape(len(pts), k)
    best = d.argmin(axis=1)
    rows = np.arange(len(pts))
    picked = closest.reshape(len(pts), k, 3)[rows, best]
    return picked, d[rows, best]


def mesh_plane_contours(mesh: TriMesh, normal, point, tol: float = 1e-9):
    """Intersect a mesh with a plane; returns a list of 3D polylines (N, 3).

    Segments are extracted per crossing triangle and chained by shared
    endpoints. Closed loops are returned with their first point repeated last.
    """
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    p0 = np.asarray(point, dtype=np.float64)
    d = (mesh.vertices - p0) @ n
    tri = mesh.triangles
    dt = d[tri]
    crossing = ~((dt > tol).all(axis=1) | (dt < -tol).all(axis=1))
    segments = []
    for idx in np.nonzero(crossing)[0]:
        vid = tri[idx]
        dv = dt[idx]
        pts = []
        for i in range(3):
            j = (i + 1) % 3
            di, dj = dv[i], dv[j]
            if (di > tol and dj < -tol) or (di < -tol and dj > tol):
                t = di / (di - dj)
                pts.append(mesh.vertices[vid[i]] + t * (mesh.vertices[vid[j]] - mesh.vertices[vid[i]]))
            elif abs(di) <= tol:
                pts.append(mesh.vertices[vid[i]])
        if len(pts) >= 2:
            uniq = [pts[0]]
            for q in pts[1:]:
                if all(np.linalg.norm(q - u) > 1e-9 for u in uniq):
                    uniq.append(q)
            if len(uniq) >= 2:
                segments.append((uniq[0], uniq[1]))
    if not segments:
        return []

    # chain segments into polylines by endpoint proximity
    key_tol = 1e-6
    endpoints = []
    for s in segments:
        endpoints.append(s[0])
        endpoints.append(s[1])
    endpoints = np.asarray(endpoints)

    def key(pt):
        return tuple(np.round(pt / key_tol).astype(np.int64))

    link = {}
    for si, (a, b) in enumerate(segments):
        for end, pt in enumerate((a, b)):
            link.setdefault(key(pt), []).append((si, end))

    used = np.zeros(len(segments), dtype=bool)
    polylines = []
    for start in range(len(segments)):
        if used[start]:
            continue
        used[start] = True
        a, b = segments[start]
        chain = [a, b]
        # extend forward from chain tail
        for _ in range(2):
            extended = True
            while extended:
                extended = False
                tail = chain[-1]
                for si, end in link.get(key(tail), []):
                    if used[si]:
                        continue
                    s = segments[si]
                    nxt = s[1 - end]
                    used[si] = True
                    chain.append(nxt)
                    extended = True
                    break
            chain.reverse()
        polylines.append(np.asarray(chain))
    return polylines

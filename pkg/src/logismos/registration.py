"""Rigid registration: ICP, the two-step femur-then-joint variant, and
transform application to meshes and volumes.

The two-step scheme first registers the femur meshes alone, applies that
transform to both objects, then refines with the concatenated femur+tibia
point cloud. Running the femur first prevents the classic failure where a
large inter-visit motion lets the least-squares fit lock one bone onto the
other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .volume import Volume3D, sample_trilinear


class RegistrationError(ValueError):
    pass


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise RegistrationError("rotation is not orthonormal")
        if not np.isclose(np.linalg.det(r), 1.0, atol=1e-9):
            raise RegistrationError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply_points(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def apply_mesh(self, mesh):
        return mesh.transformed(self.rotation, self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self . other)(x) = self(other(x))."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def to_matrix34(self) -> list:
        """Row-major 3x4 [R | t] rows, the JSON wire format."""
        m = np.hstack([self.rotation, self.translation[:, None]])
        return m.tolist()

    @staticmethod
    def from_matrix34(rows) -> "RigidTransform":
        m = np.asarray(rows, dtype=np.float64).reshape(3, 4)
        return RigidTransform(m[:, :3], m[:, 3])


def _kabsch(moving: np.ndarray, fixed: np.ndarray) -> RigidTransform:
    """Least-squares rigid fit mapping moving onto fixed (corresponding rows)."""
    mc = moving.mean(axis=0)
    fc = fixed.mean(axis=0)
    h = (moving - mc).T @ (fixed - fc)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    s = np.diag([1.0, 1.0, d])
    r = vt.T @ s @ u.T
    t = fc - r @ mc
    return RigidTransform(r, t)


def icp_rigid(moving, fixed, max_iter: int = 200, tol: float = 1e-6,
              return_history: bool = False, prealign: bool = False):
    """Iterative closest point: nearest-neighbor matching plus closed-form
    rigid fits until the correspondence RMS changes by less than ``tol`` mm.

    ``fixed`` may be a point array or a TriMesh. With a mesh, correspondence
    targets are the nearest points on the surface (k-d tree over triangle
    centroids plus exact point-triangle projection); with bare points, plain
    vertex nearest neighbors. Surface correspondence matters: two samplings
    of the same smooth surface lock into one-sample-shifted vertex pairings
    under point-to-point matching, and projecting onto the continuous
    surface removes that sampling lattice.

    ``prealign`` translates the moving cloud onto the fixed centroid first;
    for fully overlapping single-object clouds this removes the translation
    component of the search. It is off by default: callers that feed
    multi-object clouds must see the raw behavior (a large motion can lock
    one object onto the other, which the two-step driver exists to prevent).
    """
    fixed_mesh = fixed if hasattr(fixed, "triangles") else None
    moving = np.asarray(
        moving.vertices if hasattr(moving, "vertices") else moving,
        dtype=np.float64).reshape(-1, 3)
    fixed_pts = np.asarray(
        fixed.vertices if fixed_mesh is not None else fixed,
        dtype=np.float64).reshape(-1, 3)
    if len(moving) < 3 or len(fixed_pts) < 3:
        raise RegistrationError("need at least 3 points per cloud")
    for cloud in (moving, fixed_pts):
        centered = cloud - cloud.mean(axis=0)
        if np.linalg.matrix_rank(centered, tol=1e-9) < 2:
            raise RegistrationError("degenerate (collinear) point set")

    if fixed_mesh is not None:
        from .mesh import closest_surface_points

        def correspond(pts):
            return closest_surface_points(fixed_mesh, pts)
    else:
        tree = cKDTree(fixed_pts)

        def correspond(pts):
            dist, idx = tree.query(pts)
            return fixed_pts[idx], dist

    if prealign:
        current = RigidTransform(np.eye(3), fixed_pts.mean(axis=0) - moving.mean(axis=0))
    else:
        current = RigidTransform.identity()
    pts = current.apply_points(moving)
    prev_rms = np.inf
    history = []
    for _ in range(max_iter):
        targets, dist = correspond(pts)
        rms = float(np.sqrt(np.mean(dist ** 2)))
        history.append(rms)
        step = _kabsch(pts, targets)
        current = step.compose(current)
        pts = step.apply_points(pts)
        if abs(prev_rms - rms) < tol:
            break
        prev_rms = rms
    if return_history:
        return current, history
    return current


def two_step_register(femur_moving, tibia_moving, femur_fixed, tibia_fixed,
                      max_iter: int = 200, tol: float = 1e-6) -> RigidTransform:
    """Register a (femur, tibia) mesh pair onto a fixed pair.

    Step 1 runs ICP on femur vertices only and applies the result to both
    moving meshes; step 2 refines with the unified femur+tibia cloud.
    Accepts TriMesh or raw (N, 3) arrays.
    """
    def verts(x):
        return x.vertices if hasattr(x, "vertices") else np.asarray(x, dtype=np.float64)

    fm, tm = verts(femur_moving), verts(tibia_moving)
    ff, tf = verts(femur_fixed), verts(tibia_fixed)
    if len(fm) != len(ff) or len(tm) != len(tf):
        raise RegistrationError("mesh pairs must have corresponding vertex counts")
    femur_target = femur_fixed if hasattr(femur_fixed, "triangles") else ff

    # femur-only with centroid prealignment anchors the right object pairing
    step1 = icp_rigid(fm, femur_target, max_iter=max_iter, tol=tol, prealign=True)
    fm1 = step1.apply_points(fm)
    tm1 = step1.apply_points(tm)
    if hasattr(femur_fixed, "triangles") and hasattr(tibia_fixed, "triangles"):
        from .mesh import TriMesh
        joint_target = TriMesh(
            np.vstack([ff, tf]),
            np.vstack([femur_fixed.triangles,
                       tibia_fixed.triangles + len(ff)]))
    else:
        joint_target = np.vstack([ff, tf])
    step2 = icp_rigid(np.vstack([fm1, tm1]), joint_target,
                      max_iter=max_iter, tol=tol)
    return step2.compose(step1)


def apply_transform(obj, transform: RigidTransform):
    """Apply a rigid transform to a TriMesh (exact) or Volume3D (resampled).

    Volumes keep their grid; each output voxel samples the input at the
    inverse-mapped position with trilinear interpolation and boundary
    clamping.
    """
    if isinstance(obj, Volume3D):
        pts = obj.grid_points().reshape(-1, 3)
        src = transform.inverse().apply_points(pts)
        vals = sample_trilinear(obj, src)
        return obj.with_data(np.asarray(vals, dtype=np.float32).reshape(obj.dims))
    if hasattr(obj, "vertices"):
        return transform.apply_mesh(obj)
    return transform.apply_points(obj)


def correspond_columns(cs_t1, cs_t2):
    """Identity column correspondence for same-lineage column sets.

    Validates shared topology (vertex counts and triangle arrays) and reports
    the mean distance between corresponding column bases. Returns
    ``(mapping, mean_distance_mm)`` where mapping[i] = i.
    """
    if cs_t1.n_columns != cs_t2.n_columns:
        raise RegistrationError("column sets differ in size")
    t1_tris = getattr(cs_t1, "triangles", None)
    t2_tris = getattr(cs_t2, "triangles", None)
    if t1_tris is not None and t2_tris is not None:
        if t1_tris.shape != t2_tris.shape or not np.array_equal(t1_tris, t2_tris):
            raise RegistrationError("column sets do not share mesh topology")
    mapping = np.arange(cs_t1.n_columns)
    dist = float(np.linalg.norm(cs_t1.bases - cs_t2.bases, axis=1).mean())
    return mapping, dist

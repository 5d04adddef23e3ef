"""Automated cartilage sub-region extraction and the error metrics defined
on them.

The trochlear notch anchors every cutting plane: a family of contour lines
drawn across the isolated groove surface each locate the position of
sharpest anterior-to-posterior height change, and their average is the
notch. Femoral load-bearing regions take a fixed fraction of the
notch-to-posterior span per condyle; tibial compartments split at the notch
and subdivide into a central ellipse holding a fixed share of compartment
area plus four peripheral quadrants cut at 45 and 135 degrees.

Error conventions: signed surface error is positive when the segmented
surface sits inside the reference (underestimation). Thickness-error
quantile bands average the largest errors per region (top 2%, 5%, 10%).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import TriMesh, mesh_plane_contours

FEMUR_REGIONS = ("cLF", "cMF")
TIBIA_REGIONS = ("cLT", "cMT", "iLT", "iMT", "eLT", "eMT",
                 "aLT", "aMT", "pLT", "pMT")
ALL_REGIONS = FEMUR_REGIONS + TIBIA_REGIONS + ("other",)

QUANTILE_BANDS = ((98, 100), (95, 100), (90, 100))


class SubplateError(ValueError):
    pass


class NoGrooveError(SubplateError):
    pass


@dataclass(frozen=True)
class CuttingPlane:
    normal: np.ndarray
    point: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(n)
        if norm <= 0:
            raise SubplateError("plane normal must be nonzero")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "point",
                           np.asarray(self.point, dtype=np.float64).reshape(3))

    def signed(self, pts) -> np.ndarray:
        return (np.atleast_2d(pts) - self.point) @ self.normal


def classify_side(mesh: TriMesh, plane: CuttingPlane) -> np.ndarray:
    """+1/-1 per vertex by plane side; exactly-on-plane counts positive."""
    s = plane.signed(mesh.vertices)
    return np.where(s >= 0, 1, -1).astype(np.int8)


@dataclass
class SubplateLabeling:
    regions: np.ndarray          # per-vertex region name (unicode array)

    def __post_init__(self):
        self.regions = np.asarray(self.regions, dtype="U5")
        bad = set(np.unique(self.regions)) - set(ALL_REGIONS)
        if bad:
            raise SubplateError(f"unknown region labels {bad}")

    def mask(self, name: str) -> np.ndarray:
        return self.regions == name

    def counts(self) -> dict:
        names, counts = np.unique(self.regions, return_counts=True)
        return dict(zip(names.tolist(), counts.tolist()))


# -- trochlear notch ------------------------------------------------------------

def detect_trochlear_notch(femur_mesh: TriMesh, ap_axis, isolate_plane: CuttingPlane,
                           ml_axis=None, n_contours: int = 15,
                           contour_spacing_mm: float = 0.4,
                           slope_threshold: float = 0.95,
                           interior_window: float = 0.6) -> np.ndarray:
    """Average of per-contour largest height-change positions on the groove.

    Contour planes are normal to the medial-lateral axis, spaced
    ``contour_spacing_mm`` apart around the groove center line. Traversal is
    along the anterior-posterior axis; a contour contributes only where its
    peak interior slope exceeds ``slope_threshold`` (smooth ungrooved
    surfaces stay below it, which is the no-groove signal).
    """
    ap = np.asarray(ap_axis, dtype=np.float64)
    ap = ap / np.linalg.norm(ap)
    if ml_axis is None:
        # any unit vector orthogonal to ap, preferring the world axes
        trial = np.eye(3)[np.argmin(np.abs(ap))]
        ml = np.cross(ap, trial)
    else:
        ml = np.asarray(ml_axis, dtype=np.float64)
    ml = ml / np.linalg.norm(ml)
    up = np.cross(ml, ap)
    up = up / np.linalg.norm(up)

    keep = classify_side(femur_mesh, isolate_plane) > 0
    if keep.sum() < 10:
        raise NoGrooveError("isolation plane keeps too little surface")
    v = femur_mesh.vertices
    ml_coord = v @ ml
    ap_coord = v @ ap
    up_coord = v @ up

    # groove center line: among isolated vertices, the medial-lateral bin
    # whose anterior half sits highest (a groove is a raised floor)
    iso_ml = ml_coord[keep]
    iso_ap = ap_coord[keep]
    iso_up = up_coord[keep]
    lo, hi = np.quantile(iso_ml, [0.25, 0.75])
    bins = np.linspace(lo, hi, 17)
    ap_mid = np.median(iso_ap)
    best_ml, best_score = None, -np.inf
    for b0, b1 in zip(bins[:-1], bins[1:]):
        sel = (iso_ml >= b0) & (iso_ml < b1) & (iso_ap <= ap_mid)
        if sel.sum() < 3:
            continue
        score = float(iso_up[sel].mean())
        if score > best_score:
            best_score = score
            best_ml = 0.5 * (b0 + b1)
    if best_ml is None:
        raise NoGrooveError("no candidate groove line found")

    offsets = (np.arange(n_contours) - (n_contours - 1) / 2.0) * contour_spacing_mm
    hits = []
    for off in offsets:
        plane_point = femur_mesh.centroid() + (best_ml + off
                                               - femur_mesh.centroid() @ ml) * ml
        polylines = mesh_plane_contours(femur_mesh, ml, plane_point)
        pts = [pl for pl in polylines if len(pl) >= 2]
        if not pts:
            continue
        allpts = np.vstack(pts)
        side_ok = isolate_plane.signed(allpts) >= 0
        allpts = allpts[side_ok]
        if len(allpts) < 8:
            continue
        u = allpts @ ap
        h = allpts @ up
        order = np.argsort(u)
        u, h = u[order], h[order]
        span = u[-1] - u[0]
        if span <= 0:
            continue
        pad = 0.5 * (1.0 - interior_window) * span
        grid = np.linspace(u[0] + pad, u[-1] - pad, 128)
        hg = np.interp(grid, u, h)
        # faceted contours quantize the raw gradient peak at the mesh edge
        # scale; smooth a little, then refine the peak with a parabola
        kernel = np.exp(-0.5 * (np.arange(-4, 5) / 2.0) ** 2)
        kernel /= kernel.sum()
        hs = np.convolve(np.pad(hg, 4, mode="edge"), kernel, mode="valid")
        slope = np.abs(np.gradient(hs, grid))
        j = int(slope.argmax())
        if slope[j] < slope_threshold:
            continue
        u_peak = grid[j]
        if 0 < j < len(grid) - 1:
            a_, b_, c_ = slope[j - 1], slope[j], slope[j + 1]
            denom = a_ - 2 * b_ + c_
            if abs(denom) > 1e-12:
                delta = 0.5 * (a_ - c_) / denom
                u_peak = grid[j] + np.clip(delta, -1, 1) * (grid[1] - grid[0])
        h_peak = float(np.interp(u_peak, grid, hg))
        pos = (best_ml + off) * ml + u_peak * ap + h_peak * up
        hits.append(pos)
    if len(hits) < max(3, n_contours // 2):
        raise NoGrooveError(
            f"groove signal on only {len(hits)}/{n_contours} contours")
    return np.mean(hits, axis=0)


# -- femoral and tibial sub-plates ---------------------------------------------

def femur_subplates(mesh: TriMesh, notch, ap_axis, ml_axis,
                    fraction: float = 0.6) -> SubplateLabeling:
    """Central load-bearing condyle regions posterior of the notch.

    Per condyle, vertices within ``fraction`` of the notch-to-posterior-most
    span belong to the load-bearing plate (cLF lateral, cMF medial).
    """
    notch = np.asarray(notch, dtype=np.float64)
    ap = np.asarray(ap_axis, dtype=np.float64)
    ap = ap / np.linalg.norm(ap)
    ml = np.asarray(ml_axis, dtype=np.float64)
    ml = ml / np.linalg.norm(ml)

    v = mesh.vertices
    u = (v - notch) @ ap
    w = (v - notch) @ ml
    regions = np.full(len(v), "other", dtype="U5")
    for name, side_mask in (("cLF", w >= 0), ("cMF", w < 0)):
        condyle = side_mask & (u >= 0)
        if not condyle.any():
            raise SubplateError(f"empty condyle for {name}")
        span = float(u[condyle].max())
        sel = condyle & (u <= fraction * span)
        regions[sel] = name
    return SubplateLabeling(regions)


def _compartment_area_center(mesh, vert_mask):
    tri = mesh.triangles
    tri_in = vert_mask[tri].sum(axis=1) >= 2
    areas = mesh.triangle_areas()[tri_in]
    centers = mesh.vertices[tri[tri_in]].mean(axis=1)
    if len(areas) == 0:
        raise SubplateError("empty compartment")
    center = (centers * areas[:, None]).sum(axis=0) / areas.sum()
    return tri_in, areas, centers, center


def tibia_subplates(mesh: TriMesh, notch, ap_axis, ml_axis,
                    area_fraction: float = 0.2,
                    rel_tol: float = 1e-3) -> SubplateLabeling:
    """Per-compartment central ellipse plus four diagonal-cut quadrants.

    The compartment splits at the notch plane (medial-lateral normal). The
    central ellipse is centered on the compartment's area centroid with axis
    ratio taken from the compartment bounds and is scaled by bisection until
    it encloses ``area_fraction`` of the compartment surface area. Remaining
    vertices fall into anterior/posterior/interior/exterior quadrants cut at
    45 and 135 degrees about the centroid.
    """
    notch = np.asarray(notch, dtype=np.float64)
    ap = np.asarray(ap_axis, dtype=np.float64)
    ap = ap / np.linalg.norm(ap)
    ml = np.asarray(ml_axis, dtype=np.float64)
    ml = ml / np.linalg.norm(ml)

    v = mesh.vertices
    side = (v - notch) @ ml
    regions = np.full(len(v), "other", dtype="U5")

    for side_name, mask, side_sign in (("LT", side >= 0, 1.0), ("MT", side < 0, -1.0)):
        if not mask.any():
            raise SubplateError(f"empty {side_name} compartment")
        tri_in, areas, centers, center = _compartment_area_center(mesh, mask)
        u_v = (v - center) @ ap
        w_v = (v - center) @ ml
        u_c = (centers - center) @ ap
        w_c = (centers - center) @ ml

        sel = mask
        ru = 0.5 * (u_v[sel].max() - u_v[sel].min())
        rw = 0.5 * (w_v[sel].max() - w_v[sel].min())
        if ru <= 0 or rw <= 0:
            raise SubplateError(f"degenerate {side_name} compartment bounds")
        total_area = areas.sum()

        def inside_frac(scale):
            inside = ((u_c / (scale * ru)) ** 2 + (w_c / (scale * rw)) ** 2) <= 1.0
            return areas[inside].sum() / total_area

        lo_s, hi_s = 1e-6, 2.0
        for _ in range(60):
            mid = 0.5 * (lo_s + hi_s)
            f = inside_frac(mid)
            if abs(f - area_fraction) <= rel_tol * area_fraction:
                break
            if f < area_fraction:
                lo_s = mid
            else:
                hi_s = mid
        scale = 0.5 * (lo_s + hi_s)

        in_ellipse = ((u_v / (scale * ru)) ** 2 + (w_v / (scale * rw)) ** 2) <= 1.0
        comp = np.nonzero(mask)[0]
        for vid in comp:
            if in_ellipse[vid]:
                regions[vid] = "c" + side_name
                continue
            uu = u_v[vid]
            ww = w_v[vid] * side_sign      # positive points outward
            if -uu >= abs(ww):
                regions[vid] = "a" + side_name
            elif uu > abs(ww):
                regions[vid] = "p" + side_name
            elif ww >= 0:
                regions[vid] = "e" + side_name
            else:
                regions[vid] = "i" + side_name
    return SubplateLabeling(regions)


# -- thickness and error metrics ---------------------------------------------------

def thickness_map(bone_k, cart_k, node_spacing: float) -> np.ndarray:
    """Per-column thickness in mm from chosen node indices."""
    return (np.asarray(cart_k, dtype=np.float64)
            - np.asarray(bone_k, dtype=np.float64)) * node_spacing


@dataclass
class RegionErrorReport:
    per_region: dict

    def __post_init__(self):
        for name, r in self.per_region.items():
            if r["n"] and r["unsigned_mean"] + 1e-12 < abs(r["signed_mean"]):
                raise SubplateError(f"inconsistent errors for region {name}")

    def region(self, name):
        return self.per_region[name]

    def to_jsonable(self):
        return {k: dict(v) for k, v in self.per_region.items()}


def region_errors(truth_surface_k, solution_surface_k, truth_thickness_mm,
                  solution_thickness_mm, region_of_column, node_spacing: float,
                  bands=QUANTILE_BANDS) -> RegionErrorReport:
    """Signed/unsigned surface errors and thickness-error quantile bands.

    ``truth_surface_k`` may contain NaN where no reference exists; those
    columns are excluded. Signed error is (truth - solution) * spacing, so a
    surface inside the reference scores positive (underestimation).
    """
    kt = np.asarray(truth_surface_k, dtype=np.float64)
    ks = np.asarray(solution_surface_k, dtype=np.float64)
    tt = np.asarray(truth_thickness_mm, dtype=np.float64)
    ts = np.asarray(solution_thickness_mm, dtype=np.float64)
    regions = np.asarray(region_of_column, dtype="U5")
    if not (len(kt) == len(ks) == len(tt) == len(ts) == len(regions)):
        raise SubplateError("per-column arrays disagree in length")

    have = np.isfinite(kt)
    out = {}
    for name in np.unique(regions):
        sel = (regions == name) & have
        n = int(sel.sum())
        if n == 0:
            raise SubplateError(f"region {name} has no reference columns")
        signed = (kt[sel] - ks[sel]) * node_spacing
        unsigned = np.abs(signed)
        terr = np.abs(ts[sel] - tt[sel])
        entry = {
            "n": n,
            "signed_mean": float(signed.mean()),
            "signed_sd": float(signed.std(ddof=1)) if n > 1 else 0.0,
            "unsigned_mean": float(unsigned.mean()),
            "unsigned_sd": float(unsigned.std(ddof=1)) if n > 1 else 0.0,
        }
        for lo, hi in bands:
            cut = np.percentile(terr, lo)
            tail = terr[terr >= cut]
            entry[f"band_{lo}_{hi}"] = float(tail.mean()) if len(tail) else 0.0
        out[str(name)] = entry
    return RegionErrorReport(out)


def subplate_robustness(labelings_a, labelings_b, reference_thickness,
                        regions=None) -> dict:
    """Per-region R^2 between thickness measured under two labelings.

    Each element of the three lists describes one case: a per-column region
    array from segmentation A, one from segmentation B, and the reference
    per-column thickness. The measurement per (case, region, labeling) is
    the mean reference thickness over that labeling's region; R^2 is the
    squared correlation of the two measurement vectors across cases.
    """
    if not (len(labelings_a) == len(labelings_b) == len(reference_thickness)):
        raise SubplateError("need matched per-case inputs")
    if len(labelings_a) < 3:
        raise SubplateError("robustness needs at least 3 cases")

    if regions is None:
        regions = sorted(set(np.unique(np.concatenate(
            [np.asarray(l, dtype="U5") for l in labelings_a]))) - {"other"})
    out = {}
    for name in regions:
        xs, ys = [], []
        for la, lb, th in zip(labelings_a, labelings_b, reference_thickness):
            la = np.asarray(la, dtype="U5")
            lb = np.asarray(lb, dtype="U5")
            th = np.asarray(th, dtype=np.float64)
            ma, mb = la == name, lb == name
            if not ma.any() or not mb.any():
                continue
            xs.append(th[ma].mean())
            ys.append(th[mb].mean())
        if len(xs) < 3:
            continue
        xs = np.asarray(xs)
        ys = np.asarray(ys)
        vx = xs - xs.mean()
        vy = ys - ys.mean()
        denom = np.sqrt((vx ** 2).sum() * (vy ** 2).sum())
        if denom == 0:
            out[name] = 1.0 if np.allclose(xs, ys) else 0.0
        else:
            out[name] = float(((vx * vy).sum() / denom) ** 2)
    return out

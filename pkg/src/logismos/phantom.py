"""Synthetic longitudinal knee-like phantoms with exact ground truth.

Two star-shaped objects articulate across a gap: a "femur-like" body whose
inferior surface carries two condylar lobes separated by a central groove
that ends at a planted notch, and a "tibia-like" body with a plateau-shaped
superior surface. Each object has a bone surface and a cartilage surface
(bone radius + a non-negative thickness field), both realized as radial
displacements of a subdivided icosphere, so labels, meshes, and per-ray
thickness all derive from the same analytic functions.

Intensities before noise are fixed: background 100, bone interior 40,
cartilage 180, fluid confounder 170. Noise is additive Gaussian with sigma
given as a percentage of the cartilage/background contrast (80).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .mesh import TriMesh, icosphere
from .registration import RigidTransform
from .volume import Volume3D

BACKGROUND = 100.0
BONE = 40.0
CARTILAGE = 180.0
FLUID = 170.0
CONTRAST = CARTILAGE - BACKGROUND

LABEL_BACKGROUND = 0
LABEL_FEMUR_BONE = 1
LABEL_FEMUR_CART = 2
LABEL_TIBIA_BONE = 3
LABEL_TIBIA_CART = 4

# tiny fixed rotation of the direction sphere so no mesh vertex sits exactly
# on a symmetry plane (keeps side classifications tie-free)
_TILT = 7e-4


class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (96, 96, 64)
    spacing: tuple[float, float, float] = (0.4, 0.4, 0.6)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    noise_pct: float = 5.0
    fluid_pockets: bool = False
    lesions: bool = False
    regional_intensity: bool = False
    thickness_scale: float = 1.0
    max_thickness: float = 4.0
    mesh_subdivisions: int = 3
    family_jitter: bool = True
    n_fluid_pockets: int = 6
    n_lesions: int = 3
    regional_drop: float = 11.0


@dataclass
class PhantomCase:
    volume: Volume3D
    truth_meshes: dict
    truth_labels: Volume3D
    params: dict
    shapes: dict = field(default=None, repr=False)
    source_spec: "PhantomSpec" = field(default=None, repr=False)

    def truth_thickness(self, obj: str, dirs: np.ndarray) -> np.ndarray:
        """Radial cartilage thickness (mm) for unit directions from the object center."""
        return self.shapes[obj].cart_thickness(np.atleast_2d(dirs))


def _tilt_matrix() -> np.ndarray:
    axis = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
    k = np.array([
        [0, -axis[2], axis[1]],
        [axis[2], 0, -axis[0]],
        [-axis[1], axis[0], 0],
    ])
    return np.eye(3) + np.sin(_TILT) * k + (1 - np.cos(_TILT)) * (k @ k)


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


class _RadialObject:
    """Star-shaped object: bone radius and cartilage thickness per direction."""

    def __init__(self, name, center, semi_axes, power=2.0,
                 groove=None, cap=None, thickness=0.0, lesion_spots=(),
                 intensity_sectors=()):
        self.name = name
        self.center = np.asarray(center, dtype=np.float64)
        self.semi = np.asarray(semi_axes, dtype=np.float64)
        self.power = float(power)
        self.groove = groove          # dict(depth, width, sharpness, y_notch) or None
        self.cap = cap                # ("down"|"up", start, span) for cartilage coverage
        self.thickness = float(thickness)
        self.lesion_spots = lesion_spots
        self.intensity_sectors = intensity_sectors   # (azimuth, halfwidth, drop)

    def base_radius(self, d: np.ndarray) -> np.ndarray:
        q = self.power
        t = np.abs(d) / self.semi
        if q == 2.0:
            return 1.0 / np.sqrt((t * t).sum(axis=1))
        return (t ** q).sum(axis=1) ** (-1.0 / q)

    def bone_radius(self, d: np.ndarray) -> np.ndarray:
        r = self.base_radius(d)
        if self.groove is not None:
            g = self.groove
            p = self.center + r[:, None] * d
            wx = np.exp(-(((p[:, 0] - self.center[0]) / g["width"]) ** 2))
            wy = 1.0 / (1.0 + np.exp(-(g["y_notch"] - p[:, 1]) / g["sharpness"]))
            down = np.clip(-d[:, 2], 0.0, 1.0) ** 2
            r = r - g["depth"] * wx * wy * down
        return r

    def cap_weight(self, d: np.ndarray) -> np.ndarray:
        if self.cap is None:
            return np.zeros(len(d))
        direction, start, span = self.cap
        comp = -d[:, 2] if direction == "down" else d[:, 2]
        return _smoothstep((comp - start) / span)

    def cart_thickness(self, d: np.ndarray) -> np.ndarray:
        th = self.thickness * self.cap_weight(d)
        for spot in self.lesion_spots:
            cosang = d @ spot["dir"]
            ang = np.arccos(np.clip(cosang, -1.0, 1.0))
            th = th * (1.0 - spot["depth"] * np.exp(-((ang / spot["radius"]) ** 2)))
        return th

    def cart_radius(self, d: np.ndarray) -> np.ndarray:
        return self.bone_radius(d) + self.cart_thickness(d)

    def cart_intensity(self, d: np.ndarray) -> np.ndarray:
        """Per-direction cartilage intensity; sector dips emulate regionally
        darker cartilage whose level overlaps the fluid confounder."""
        out = np.full(len(d), CARTILAGE)
        if self.intensity_sectors:
            azi = np.arctan2(d[:, 1], d[:, 0])
            for az0, half, drop in self.intensity_sectors:
                delta = np.angle(np.exp(1j * (azi - az0)))
                w = np.clip(1.0 - np.abs(delta) / half, 0.0, 1.0)
                out = out - drop * _smoothstep(w)
        return out

    def thinned(self, total_cut) -> "_RadialObject":
        """Copy whose thickness field is reduced by ``total_cut`` mm.

        ``total_cut`` is a scalar or a callable of unit directions. The cut is
        attenuated by the cartilage coverage weight, so tapered rims thin
        proportionally. Raises if the requested cut exceeds the local
        cartilage thickness anywhere it is probed.
        """
        clone = _RadialObject(self.name, self.center, self.semi, self.power,
                              self.groove, self.cap, self.thickness, self.lesion_spots)
        parent = self

        def thinned_thickness(d):
            th = _RadialObject.cart_thickness(parent, d)
            cut = total_cut(d) if callable(total_cut) else total_cut
            new = th - np.asarray(cut, dtype=np.float64) * parent.cap_weight(d)
            if np.any(new < -1e-9):
                raise PhantomError("thinning produces negative thickness")
            return np.maximum(new, 0.0)

        clone.cart_thickness = thinned_thickness
        return clone


def _build_shapes(spec: PhantomSpec, rng: np.random.Generator) -> dict:
    size = np.asarray(spec.dims) * np.asarray(spec.spacing)
    cx, cy = size[0] / 2, size[1] / 2

    def jit(lo, hi):
        if not spec.family_jitter:
            return (lo + hi) / 2
        return rng.uniform(lo, hi)

    scale = spec.thickness_scale
    femur_thick = jit(1.35, 1.65) * scale
    tibia_thick = jit(1.15, 1.45) * scale
    if max(femur_thick, tibia_thick) > spec.max_thickness:
        raise PhantomError("cartilage thickness exceeds spec.max_thickness")

    femur = _RadialObject(
        "femur",
        center=(cx + jit(-0.8, 0.8), cy + jit(-0.8, 0.8), 0.715 * size[2] + jit(-0.5, 0.5)),
        semi_axes=(0.34 * size[0] * jit(0.95, 1.05),
                   0.29 * size[1] * jit(0.95, 1.05),
                   0.205 * size[2] * jit(0.97, 1.03)),
        groove={
            "depth": jit(5.0, 5.8),
            "width": jit(6.5, 7.5),
            "sharpness": jit(0.55, 0.7),
            "y_notch": cy + jit(1.4, 2.6),
        },
        cap=("down", 0.1, 0.35),
        thickness=femur_thick,
    )
    tibia = _RadialObject(
        "tibia",
        center=(cx + jit(-0.8, 0.8), cy + jit(-0.8, 0.8), 0.225 * size[2] + jit(-0.4, 0.4)),
        semi_axes=(0.34 * size[0] * jit(0.95, 1.05),
                   0.27 * size[1] * jit(0.95, 1.05),
                   0.165 * size[2] * jit(0.97, 1.03)),
        power=3.0,
        cap=("up", 0.25, 0.35),
        thickness=tibia_thick,
    )

    if spec.lesions:
        for obj in (femur, tibia):
            spots = []
            sign = -1.0 if obj.name == "femur" else 1.0
            for _ in range(spec.n_lesions):
                v = rng.normal(size=3)
                v[2] = sign * (abs(v[2]) + 2.0)
                v /= np.linalg.norm(v)
                spots.append({
                    "dir": v,
                    "depth": rng.uniform(0.4, 0.8),
                    "radius": rng.uniform(0.18, 0.3),
                })
            obj.lesion_spots = spots
    if spec.regional_intensity:
        for obj in (femur, tibia):
            sectors = []
            for base in (0.0, np.pi):
                sectors.append((base + rng.uniform(-0.5, 0.5),
                                rng.uniform(0.8, 1.1),
                                spec.regional_drop * rng.uniform(0.85, 1.15)))
            obj.intensity_sectors = tuple(sectors)
    return {"femur": femur, "tibia": tibia}


def _groove_section(femur: _RadialObject, x_off: float, phis: np.ndarray):
    """Points of the bone surface on the plane x = center_x + x_off,
    parameterized by polar angle in the (y, -z) half plane."""
    sin, cos = np.sin(phis), np.cos(phis)
    rho = np.full_like(phis, 1.0)
    lo = np.full_like(phis, 1e-3)
    hi = np.full_like(phis, 60.0)
    for _ in range(48):
        rho = 0.5 * (lo + hi)
        v = np.column_stack([np.full_like(phis, x_off), rho * sin, -rho * cos])
        r = np.linalg.norm(v, axis=1)
        d = v / r[:, None]
        too_far = r > femur.bone_radius(d)
        hi[too_far] = rho[too_far]
        lo[~too_far] = rho[~too_far]
    v = np.column_stack([np.full_like(phis, x_off), rho * sin, -rho * cos])
    return femur.center + v


def _find_notch(femur: _RadialObject, n_sections: int = 15,
                section_spacing: float = 0.4) -> np.ndarray:
    """Notch landmark: per cross-section of the groove, the steepest
    height-change point within the sigmoid transition band, averaged across
    sections (the same family-of-contours construction the detector uses,
    evaluated on the analytic surface)."""
    y_n = femur.groove["y_notch"]
    s = femur.groove["sharpness"]
    phis = np.linspace(-0.5, 1.2, 1201)
    offsets = (np.arange(n_sections) - (n_sections - 1) / 2.0) * section_spacing
    hits = []
    for off in offsets:
        pts = _groove_section(femur, off, phis)
        y = pts[:, 1]
        z = pts[:, 2]
        order = np.argsort(y)
        yy, zz = y[order], z[order]
        slope = np.abs(np.gradient(zz, yy))
        window = (yy >= y_n - 3.5 * s) & (yy <= y_n + 3.5 * s)
        idx = np.nonzero(window)[0]
        i = idx[int(slope[idx].argmax())]
        hits.append(pts[order][i])
    return np.mean(hits, axis=0)


def _mesh_from_radius(shape: _RadialObject, surface: str, subdiv: int) -> TriMesh:
    sphere = icosphere(subdiv)
    dirs = sphere.vertices @ _tilt_matrix().T
    if surface == "bone":
        r = shape.bone_radius(dirs)
    else:
        r = shape.cart_radius(dirs)
    verts = shape.center + r[:, None] * dirs
    return TriMesh(verts, sphere.triangles, watertight=True)


def _label_grid(shapes: dict, vol_points: np.ndarray) -> np.ndarray:
    flat = vol_points.reshape(-1, 3)
    labels = np.zeros(len(flat), dtype=np.uint8)
    claims = np.zeros(len(flat), dtype=np.uint8)
    codes = {"femur": (LABEL_FEMUR_BONE, LABEL_FEMUR_CART),
             "tibia": (LABEL_TIBIA_BONE, LABEL_TIBIA_CART)}
    for name, shape in shapes.items():
        rel = flat - shape.center
        r = np.linalg.norm(rel, axis=1)
        r_safe = np.where(r < 1e-12, 1.0, r)
        d = rel / r_safe[:, None]
        rb = shape.bone_radius(d)
        rc = rb + shape.cart_thickness(d)
        bone_code, cart_code = codes[name]
        in_bone = r <= rb
        in_cart = (~in_bone) & (r <= rc)
        labels[in_bone] = bone_code
        labels[in_cart] = cart_code
        claims[in_bone | in_cart] += 1
    if np.any(claims > 1):
        raise PhantomError("objects overlap: thickness exceeds inter-object gap")
    return labels.reshape(vol_points.shape[:3])


def _render_case(spec: PhantomSpec, shapes: dict, rng_noise: np.random.Generator,
                 rng_conf: np.random.Generator, transform: RigidTransform | None,
                 params_extra: dict) -> PhantomCase:
    base_vol = Volume3D(spec.dims, spec.spacing, spec.origin,
                        np.zeros(spec.dims, dtype=np.float32))
    pts = base_vol.grid_points()
    if transform is not None:
        inv = transform.inverse()
        pts = pts.reshape(-1, 3) @ inv.rotation.T + inv.translation
        pts = pts.reshape(spec.dims + (3,))
    labels = _label_grid(shapes, pts)

    intensity = np.full(labels.shape, BACKGROUND, dtype=np.float32)
    intensity[(labels == LABEL_FEMUR_BONE) | (labels == LABEL_TIBIA_BONE)] = BONE
    cart_code = {"femur": LABEL_FEMUR_CART, "tibia": LABEL_TIBIA_CART}
    flat_intensity = intensity.reshape(-1)
    flat_labels = labels.reshape(-1)
    flat_grid = pts.reshape(-1, 3)
    for name, shape in shapes.items():
        mask = flat_labels == cart_code[name]
        if mask.any():
            rel = flat_grid[mask] - shape.center
            r = np.linalg.norm(rel, axis=1)
            d = rel / np.where(r < 1e-12, 1.0, r)[:, None]
            flat_intensity[mask] = shape.cart_intensity(d)
    intensity = flat_intensity.reshape(labels.shape)

    if spec.fluid_pockets:
        # pocket geometry lives in object space, so use the same
        # (possibly back-transformed) grid used for labeling
        flat_pts = pts.reshape(-1, 3)
        lab_flat = labels.reshape(-1)
        inten_flat = intensity.reshape(-1)
        for name, shape in shapes.items():
            sign = -1.0 if name == "femur" else 1.0
            for _ in range(spec.n_fluid_pockets):
                # ring around the articulating cap: directly against the
                # cartilage but off the tight contact zone, where there is
                # room for a cost function to mistake fluid for cartilage
                zen = rng_conf.uniform(0.3, 0.95)
                azi = rng_conf.uniform(0.0, 2.0 * np.pi)
                v = np.array([np.sin(zen) * np.cos(azi),
                              np.sin(zen) * np.sin(azi),
                              sign * np.cos(zen)])
                rc = shape.cart_radius(v[None, :])[0]
                radius = rng_conf.uniform(2.4, 4.2)
                center = shape.center + (rc + 0.45 * radius) * v
                d2 = ((flat_pts - center) ** 2).sum(axis=1)
                sel = (d2 <= radius * radius) & (lab_flat == LABEL_BACKGROUND)
                inten_flat[sel] = FLUID
        intensity = inten_flat.reshape(labels.shape)

    if spec.noise_pct > 0:
        sigma = spec.noise_pct / 100.0 * CONTRAST
        intensity = intensity + rng_noise.normal(0.0, sigma, size=labels.shape)

    volume = Volume3D(spec.dims, spec.spacing, spec.origin, intensity.astype(np.float32))
    label_vol = Volume3D(spec.dims, spec.spacing, spec.origin, labels.astype(np.float32))

    meshes = {}
    for name, shape in shapes.items():
        for surf in ("bone", "cartilage"):
            m = _mesh_from_radius(shape, surf, spec.mesh_subdivisions)
            if transform is not None:
                m = transform.apply_mesh(m)
            meshes[(name, surf)] = m

    notch = _find_notch(shapes["femur"])
    if transform is not None:
        notch = transform.apply_points(notch)
    voi = {}
    margin = 2.0
    for name in shapes:
        b = meshes[(name, "bone")].bounds()
        voi[name] = np.array([b[0] - margin, b[1] + margin]).tolist()

    params = {
        "notch": notch.tolist(),
        "ap_axis": [0.0, 1.0, 0.0],
        "ml_axis": [1.0, 0.0, 0.0],
        "superior_axis": [0.0, 0.0, 1.0],
        "voi": voi,
        "intensities": {"background": BACKGROUND, "bone": BONE,
                        "cartilage": CARTILAGE, "fluid": FLUID},
        "noise_pct": spec.noise_pct,
        "centers": {n: s.center.tolist() for n, s in shapes.items()},
    }
    params.update(params_extra)
    return PhantomCase(volume, meshes, label_vol, params, shapes=shapes,
                       source_spec=spec)


def generate_phantom(spec: PhantomSpec, seed: int) -> PhantomCase:
    """Generate one phantom case; identical (spec, seed) gives identical bytes."""
    if any(d < 32 for d in spec.dims):
        raise PhantomError("phantom dims must be at least 32 per axis")
    root = np.random.SeedSequence(entropy=int(seed))
    shape_rng, noise_rng, conf_rng = (np.random.default_rng(s) for s in root.spawn(3))
    shapes = _build_shapes(spec, shape_rng)
    return _render_case(spec, shapes, noise_rng, conf_rng, None, {"seed": int(seed)})


def generate_mean_meshes(spec: PhantomSpec) -> dict:
    """Family-nominal meshes (no jitter, no lesions) used as mean shapes."""
    nominal = replace(spec, family_jitter=False, lesions=False)
    rng = np.random.default_rng(0)
    shapes = _build_shapes(nominal, rng)
    out = {}
    for name, shape in shapes.items():
        for surf in ("bone", "cartilage"):
            out[(name, surf)] = _mesh_from_radius(shape, surf, spec.mesh_subdivisions)
    return out


def _random_rigid(rng: np.random.Generator, center, max_deg=4.0, max_shift=2.0) -> RigidTransform:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.deg2rad(rng.uniform(0.3, max_deg))
    k = np.array([
        [0, -axis[2], axis[1]],
        [axis[2], 0, -axis[0]],
        [-axis[1], axis[0], 0],
    ])
    rot = np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
    shift = rng.uniform(-max_shift, max_shift, size=3)
    center = np.asarray(center)
    # rotate about the volume center, then translate
    translation = center - rot @ center + shift
    return RigidTransform(rot, translation)


def generate_longitudinal(spec: PhantomSpec, T: int, thinning, seed: int,
                          extra_noise_pct=None):
    """Generate T time-points of one subject.

    ``thinning`` is a scalar mm/year rate (or a callable of unit directions)
    applied to the cartilage thickness field, attenuated by each object's
    coverage weight so tapered rims never go negative by construction. Each
    time-point t >= 1 is additionally moved by a recorded random rigid motion
    and gets independent noise. Returns ``(cases, transforms)`` where
    ``transforms[t]`` maps base-frame coordinates to time-point t.

    ``extra_noise_pct`` optionally overrides noise for t >= 1 (used to build
    the degraded-follow-up test family).
    """
    if T < 2:
        raise PhantomError("longitudinal generation needs T >= 2")
    root = np.random.SeedSequence(entropy=int(seed))
    shape_seed, motion_seed, *case_seeds = root.spawn(2 + 2 * T)
    shape_rng = np.random.default_rng(shape_seed)
    motion_rng = np.random.default_rng(motion_seed)

    base_shapes = _build_shapes(spec, shape_rng)
    size = np.asarray(spec.dims) * np.asarray(spec.spacing)
    volume_center = size / 2

    rate_fn = thinning if callable(thinning) else None
    rate = None if callable(thinning) else float(thinning)
    if rate is not None and not 0.0 <= rate <= 0.6:
        raise PhantomError("scalar thinning must lie in [0, 0.6] mm/year")

    cases = []
    transforms = []
    for t in range(T):
        if t == 0:
            shapes_t = base_shapes
            tf = RigidTransform.identity()
        else:
            shapes_t = {}
            for name, shape in base_shapes.items():
                if rate_fn is not None:
                    cut = (lambda d, _t=t: np.asarray(rate_fn(d)) * _t)
                else:
                    cut = rate * t
                shapes_t[name] = shape.thinned(cut)
            tf = _random_rigid(motion_rng, volume_center)
        spec_t = spec
        if extra_noise_pct is not None and t >= 1:
            spec_t = replace(spec, noise_pct=float(extra_noise_pct))
        noise_rng = np.random.default_rng(case_seeds[2 * t])
        conf_rng = np.random.default_rng(case_seeds[2 * t + 1])
        case = _render_case(spec_t, shapes_t, noise_rng, conf_rng,
                            None if t == 0 else tf,
                            {"seed": int(seed), "time_point": t})
        cases.append(case)
        transforms.append(tf)
    return cases, transforms

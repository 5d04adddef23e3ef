"""Per-node appearance features computed from the intensity volume and the
patch-forest probability volume.

Thirty features per graph node: multi-scale Hessian eigenvalues, Gaussian
gradient magnitudes on both volumes, raw and smoothed intensity, the
probability itself, Laplacians, one Gabor magnitude, local window moments,
axis-aligned Haar responses, and two along-column directional gradients.
Scales are given in mm and converted per axis to voxels, so anisotropic
spacing is handled throughout.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .volume import Volume3D, sample_trilinear

N_FEATURES = 30
HESSIAN_SIGMAS_MM = (0.5, 1.0, 2.0)
GRADIENT_SIGMAS_MM = (0.36, 0.7, 1.4)
SMOOTH_SIGMA_MM = 0.7
LAPLACIAN_SIGMAS_MM = (0.36, 0.7)
GABOR_WAVELENGTH_MM = 4.0
GABOR_ENVELOPE_MM = 2.0
STATS_WINDOW_MM = 2.0
HAAR_KERNEL_MM = 1.5

FEATURE_NAMES = tuple(
    [f"hessian_eig{i + 1}_s{s}" for s in HESSIAN_SIGMAS_MM for i in range(3)]
    + [f"grad_intensity_s{s}" for s in GRADIENT_SIGMAS_MM]
    + [f"grad_prob_s{s}" for s in GRADIENT_SIGMAS_MM]
    + ["intensity", "intensity_smooth", "prob"]
    + [f"laplacian_s{s}" for s in LAPLACIAN_SIGMAS_MM]
    + ["gabor_mag"]
    + ["win_mean", "win_var", "win_skew", "win_kurt"]
    + ["haar_x", "haar_y", "haar_z"]
    + ["col_grad_prob", "col_grad_intensity"]
)


class FeatureError(ValueError):
    pass


def _sigma_vox(vol: Volume3D, sigma_mm: float) -> tuple:
    return tuple(sigma_mm / s for s in vol.spacing)


def _gaussian(vol: Volume3D, sigma_mm, order=0):
    return ndimage.gaussian_filter(vol.data.astype(np.float64),
                                   sigma=_sigma_vox(vol, sigma_mm),
                                   order=order, mode="nearest", truncate=3.0)


def _diff1(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Central difference with one-sided edges, physical units."""
    out = np.empty_like(arr)
    sl = [slice(None)] * 3

    def at(s):
        q = list(sl)
        q[axis] = s
        return tuple(q)

    out[at(slice(1, -1))] = (arr[at(slice(2, None))] - arr[at(slice(0, -2))]) / (2 * h)
    out[at(slice(0, 1))] = (arr[at(slice(1, 2))] - arr[at(slice(0, 1))]) / h
    out[at(slice(-1, None))] = (arr[at(slice(-1, None))] - arr[at(slice(-2, -1))]) / h
    return out


def _diff2(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    out = np.zeros_like(arr)
    sl = [slice(None)] * 3

    def at(s):
        q = list(sl)
        q[axis] = s
        return tuple(q)

    out[at(slice(1, -1))] = (arr[at(slice(2, None))] - 2 * arr[at(slice(1, -1))]
                             + arr[at(slice(0, -2))]) / (h * h)
    out[at(slice(0, 1))] = out[at(slice(1, 2))]
    out[at(slice(-1, None))] = out[at(slice(-2, -1))]
    return out


def _gradient_magnitude(vol: Volume3D, sigma_mm) -> np.ndarray:
    # smoothing kernels are exactly normalized; derivatives are exact finite
    # differences of the smoothed field, so constants map to zero and ramps
    # to their slope even at sub-voxel sigma
    g = _gaussian(vol, sigma_mm)
    acc = np.zeros(vol.dims)
    for ax in range(3):
        acc += _diff1(g, ax, vol.spacing[ax]) ** 2
    return np.sqrt(acc)


def _hessian_eigenvalues(vol: Volume3D, sigma_mm) -> np.ndarray:
    """(nx, ny, nz, 3) eigenvalues sorted by |.| ascending, in per-mm^2 units."""
    g = _gaussian(vol, sigma_mm)
    h = np.empty(vol.dims + (3, 3))
    firsts = [_diff1(g, ax, vol.spacing[ax]) for ax in range(3)]
    for i in range(3):
        h[..., i, i] = _diff2(g, i, vol.spacing[i])
        for j in range(i + 1, 3):
            m = _diff1(firsts[i], j, vol.spacing[j])
            h[..., i, j] = m
            h[..., j, i] = m
    eig = np.linalg.eigvalsh(h.reshape(-1, 3, 3)).reshape(vol.dims + (3,))
    order = np.argsort(np.abs(eig), axis=-1)
    return np.take_along_axis(eig, order, axis=-1)


def _laplacian(vol: Volume3D, sigma_mm) -> np.ndarray:
    g = _gaussian(vol, sigma_mm)
    acc = np.zeros(vol.dims)
    for ax in range(3):
        acc += _diff2(g, ax, vol.spacing[ax])
    return acc


def _gabor_magnitude(vol: Volume3D) -> np.ndarray:
    """3D Gabor along z: Gaussian envelope times a complex carrier.

    Separable: Gaussian smooth in x and y, complex modulated Gaussian in z.
    """
    d = vol.data.astype(np.float64)
    sx, sy, sz = vol.spacing
    env_vox = (GABOR_ENVELOPE_MM / sx, GABOR_ENVELOPE_MM / sy)
    smoothed = ndimage.gaussian_filter1d(d, env_vox[0], axis=0, mode="nearest")
    smoothed = ndimage.gaussian_filter1d(smoothed, env_vox[1], axis=1, mode="nearest")

    sigma_z = GABOR_ENVELOPE_MM / sz
    half = int(np.ceil(3 * sigma_z))
    zz = np.arange(-half, half + 1)
    envelope = np.exp(-0.5 * (zz / sigma_z) ** 2)
    envelope /= envelope.sum()
    phase = 2.0 * np.pi * (zz * sz) / GABOR_WAVELENGTH_MM
    kr = envelope * np.cos(phase)
    ki = envelope * np.sin(phase)
    # remove the DC response so constant regions map to zero
    kr = kr - kr.sum() * envelope
    real = ndimage.convolve1d(d, kr[::-1], axis=2, mode="nearest")
    imag = ndimage.convolve1d(d, ki[::-1], axis=2, mode="nearest")
    return np.sqrt(real * real + imag * imag)


def _window_moments(vol: Volume3D) -> tuple:
    """Mean, variance, skewness, kurtosis over a cube of side 2 mm."""
    d = vol.data.astype(np.float64)
    size = tuple(max(1, int(round(STATS_WINDOW_MM / s))) | 1 for s in vol.spacing)
    m1 = ndimage.uniform_filter(d, size=size, mode="nearest")
    m2 = ndimage.uniform_filter(d * d, size=size, mode="nearest")
    m3 = ndimage.uniform_filter(d ** 3, size=size, mode="nearest")
    m4 = ndimage.uniform_filter(d ** 4, size=size, mode="nearest")
    var = np.maximum(m2 - m1 * m1, 0.0)
    c3 = m3 - 3 * m1 * m2 + 2 * m1 ** 3
    c4 = m4 - 4 * m1 * m3 + 6 * m1 * m1 * m2 - 3 * m1 ** 4
    tiny = 1e-12
    ok = var > tiny
    skew = np.where(ok, c3 / np.where(ok, var, 1.0) ** 1.5, 0.0)
    kurt = np.where(ok, c4 / np.where(ok, var, 1.0) ** 2, 0.0)
    return m1, var, skew, kurt


def _haar(vol: Volume3D, axis: int) -> np.ndarray:
    """Adjacent-box mean difference along one axis (kernel 1.5 mm)."""
    d = vol.data.astype(np.float64)
    size = tuple(max(1, int(round(HAAR_KERNEL_MM / s))) | 1 for s in vol.spacing)
    box = ndimage.uniform_filter(d, size=size, mode="nearest")
    shift = max(1, int(round(0.5 * HAAR_KERNEL_MM / vol.spacing[axis])))
    ahead = np.roll(box, -shift, axis=axis)
    behind = np.roll(box, shift, axis=axis)
    # roll wraps; clamp the wrapped slabs to the edge values
    sl_lo = [slice(None)] * 3
    sl_lo[axis] = slice(0, shift)
    sl_hi = [slice(None)] * 3
    sl_hi[axis] = slice(-shift, None)
    edge_lo = [slice(None)] * 3
    edge_lo[axis] = slice(0, 1)
    edge_hi = [slice(None)] * 3
    edge_hi[axis] = slice(-1, None)
    behind[tuple(sl_lo)] = box[tuple(edge_lo)]
    ahead[tuple(sl_hi)] = box[tuple(edge_hi)]
    return ahead - behind


class FeatureStack:
    """Thirty named feature volumes sharing one geometry.

    Features 29-30 (along-column directional gradients) cannot live on the
    voxel grid; their entries hold the source volumes they differentiate and
    :func:`node_features` computes them per column.
    """

    def __init__(self, vol_geometry: Volume3D, volumes: dict, sources: dict):
        self.geometry = vol_geometry
        self.volumes = volumes          # name -> ndarray for features 1-28
        self.sources = sources          # name -> Volume3D for features 29-30
        if len(volumes) + len(sources) != N_FEATURES:
            raise FeatureError("feature stack must hold exactly 30 features")

    def names(self):
        return FEATURE_NAMES

    def as_volume(self, name: str) -> Volume3D:
        if name in self.sources:
            return self.sources[name]
        return self.geometry.with_data(self.volumes[name].astype(np.float32))


def compute_stack(intensity: Volume3D, naf_prob: Volume3D) -> FeatureStack:
    """All grid features (indices 1-28) plus the two column-gradient sources."""
    if not intensity.same_geometry(naf_prob):
        raise FeatureError("intensity and probability volumes must share geometry")
    vols = {}
    idx = 0
    for s in HESSIAN_SIGMAS_MM:
        eig = _hessian_eigenvalues(intensity, s)
        for i in range(3):
            vols[FEATURE_NAMES[idx]] = eig[..., i]
            idx += 1
    for s in GRADIENT_SIGMAS_MM:
        vols[FEATURE_NAMES[idx]] = _gradient_magnitude(intensity, s)
        idx += 1
    for s in GRADIENT_SIGMAS_MM:
        vols[FEATURE_NAMES[idx]] = _gradient_magnitude(naf_prob, s)
        idx += 1
    vols["intensity"] = intensity.data.astype(np.float64)
    vols["intensity_smooth"] = _gaussian(intensity, SMOOTH_SIGMA_MM)
    vols["prob"] = naf_prob.data.astype(np.float64)
    for s in LAPLACIAN_SIGMAS_MM:
        vols[f"laplacian_s{s}"] = _laplacian(intensity, s)
    vols["gabor_mag"] = _gabor_magnitude(intensity)
    m1, var, skew, kurt = _window_moments(intensity)
    vols["win_mean"] = m1
    vols["win_var"] = var
    vols["win_skew"] = skew
    vols["win_kurt"] = kurt
    for ax, name in enumerate(("haar_x", "haar_y", "haar_z")):
        vols[name] = _haar(intensity, ax)
    sources = {"col_grad_prob": naf_prob, "col_grad_intensity": intensity}
    return FeatureStack(intensity, vols, sources)


def node_features(stack: FeatureStack, column_nodes: np.ndarray) -> np.ndarray:
    """(K, 30) feature vectors for one column's node positions.

    Features 1-28 are sampled trilinearly; 29-30 are central differences of
    the probability and intensity profiles along the column.
    """
    nodes = np.asarray(column_nodes, dtype=np.float64)
    geo = stack.geometry
    out = np.empty((len(nodes), N_FEATURES))
    for j, name in enumerate(FEATURE_NAMES):
        if name in stack.sources:
            prof = np.asarray(sample_trilinear(stack.sources[name], nodes))
            d = np.empty_like(prof)
            d[1:-1] = (prof[2:] - prof[:-2]) / 2.0
            d[0] = prof[1] - prof[0] if len(prof) > 1 else 0.0
            d[-1] = prof[-1] - prof[-2] if len(prof) > 1 else 0.0
            out[:, j] = d
        else:
            vol = geo.with_data(stack.volumes[name].astype(np.float32))
            out[:, j] = np.asarray(sample_trilinear(vol, nodes))
    if not np.all(np.isfinite(out)):
        raise FeatureError("non-finite feature values")
    return out


def node_features_for_set(stack: FeatureStack, cs) -> np.ndarray:
    """(n_columns, K, 30) features for a whole column set (vectorized)."""
    n, K = cs.n_columns, cs.K
    flat = cs.nodes.reshape(-1, 3)
    out = np.empty((n * K, N_FEATURES))
    geo = stack.geometry
    for j, name in enumerate(FEATURE_NAMES):
        if name in stack.sources:
            prof = np.asarray(sample_trilinear(stack.sources[name], flat)).reshape(n, K)
            d = np.empty_like(prof)
            d[:, 1:-1] = (prof[:, 2:] - prof[:, :-2]) / 2.0
            d[:, 0] = prof[:, 1] - prof[:, 0]
            d[:, -1] = prof[:, -1] - prof[:, -2]
            out[:, j] = d.reshape(-1)
        else:
            vol = geo.with_data(stack.volumes[name].astype(np.float32))
            out[:, j] = np.asarray(sample_trilinear(vol, flat))
    if not np.all(np.isfinite(out)):
        raise FeatureError("non-finite feature values")
    return out.reshape(n, K, N_FEATURES)

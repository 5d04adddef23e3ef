"""Scalar 3D volumes with anisotropic spacing, file I/O, and trilinear sampling.

A volume is stored as float32 with ``data[x, y, z]`` indexing. On disk the
payload is raw little-endian float32 in x-fastest order (``<name>.vol``) next
to a JSON sidecar header (``<name>.json``). ``origin_mm`` is the physical
position of the center of voxel (0, 0, 0).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class VolumeError(ValueError):
    """Malformed header or header/payload mismatch."""


@dataclass(frozen=True)
class Volume3D:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise VolumeError(f"dims must be three counts >= 1, got {dims}")
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise VolumeError(f"spacing must be three positive values, got {spacing}")
        data = np.asarray(self.data, dtype=np.float32)
        if data.size != dims[0] * dims[1] * dims[2]:
            raise VolumeError(
                f"data length {data.size} does not match dims {dims}"
            )
        if not np.all(np.isfinite(data)):
            raise VolumeError("volume contains non-finite values")
        data = data.reshape(dims) if data.ndim != 3 else data
        data.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "data", data)

    # -- geometry helpers --------------------------------------------------

    @property
    def physical_size(self) -> np.ndarray:
        """Extent in mm from first to last voxel center, per axis."""
        return (np.asarray(self.dims) - 1) * np.asarray(self.spacing)

    def voxel_center(self, idx) -> np.ndarray:
        """Physical position(s) of voxel index triple(s)."""
        idx = np.asarray(idx, dtype=np.float64)
        return np.asarray(self.origin) + idx * np.asarray(self.spacing)

    def grid_points(self) -> np.ndarray:
        """(nx, ny, nz, 3) array of voxel-center positions in mm."""
        nx, ny, nz = self.dims
        gx = self.origin[0] + self.spacing[0] * np.arange(nx)
        gy = self.origin[1] + self.spacing[1] * np.arange(ny)
        gz = self.origin[2] + self.spacing[2] * np.arange(nz)
        out = np.empty((nx, ny, nz, 3))
        out[..., 0] = gx[:, None, None]
        out[..., 1] = gy[None, :, None]
        out[..., 2] = gz[None, None, :]
        return out

    def with_data(self, data) -> "Volume3D":
        return Volume3D(self.dims, self.spacing, self.origin, np.asarray(data))

    def same_geometry(self, other: "Volume3D") -> bool:
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing)
            and np.allclose(self.origin, other.origin)
        )


def sample_trilinear(vol: Volume3D, points) -> np.ndarray:
    """Trilinear interpolation at physical point(s), clamped to the volume.

    Out-of-bounds coordinates clamp to the boundary voxel centers, so the
    result is defined (and continuous) everywhere.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    u = (pts - np.asarray(vol.origin)) / np.asarray(vol.spacing)
    hi = np.asarray(vol.dims, dtype=np.float64) - 1.0
    u = np.clip(u, 0.0, hi)
    i0 = np.floor(u).astype(np.intp)
    i0 = np.minimum(i0, np.maximum(np.asarray(vol.dims) - 2, 0))
    frac = u - i0
    i1 = np.minimum(i0 + 1, np.asarray(vol.dims) - 1)

    d = vol.data
    x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
    x1, y1, z1 = i1[:, 0], i1[:, 1], i1[:, 2]
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]

    c00 = d[x0, y0, z0] * (1 - fx) + d[x1, y0, z0] * fx
    c01 = d[x0, y0, z1] * (1 - fx) + d[x1, y0, z1] * fx
    c10 = d[x0, y1, z0] * (1 - fx) + d[x1, y1, z0] * fx
    c11 = d[x0, y1, z1] * (1 - fx) + d[x1, y1, z1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    out = c0 * (1 - fz) + c1 * fz
    if np.asarray(points).ndim == 1:
        return float(out[0])
    return out


# -- file format ----------------------------------------------------------

def _header_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_volume(vol: Volume3D, path) -> None:
    """Write ``<path>`` (raw f32 LE, x-fastest) and its JSON sidecar."""
    path = Path(path)
    header = {
        "dims": list(vol.dims),
        "spacing_mm": list(vol.spacing),
        "origin_mm": list(vol.origin),
        "dtype": "f32le",
    }
    payload = np.ascontiguousarray(vol.data, dtype="<f4").ravel(order="F").tobytes()
    path.write_bytes(payload)
    _header_path(path).write_text(json.dumps(header, sort_keys=True) + "\n")


def read_volume(path) -> Volume3D:
    """Read a volume written by :func:`write_volume`."""
    path = Path(path)
    try:
        header = json.loads(_header_path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise VolumeError(f"cannot read header for {path}: {exc}") from exc
    for key in ("dims", "spacing_mm", "origin_mm", "dtype"):
        if key not in header:
            raise VolumeError(f"header missing field {key!r}")
    if header["dtype"] != "f32le":
        raise VolumeError(f"unsupported dtype {header['dtype']!r}")
    dims = tuple(int(d) for d in header["dims"])
    if len(dims) != 3:
        raise VolumeError(f"dims must have three entries, got {header['dims']}")
    payload = path.read_bytes()
    expected = dims[0] * dims[1] * dims[2] * 4
    if len(payload) != expected:
        raise VolumeError(
            f"payload is {len(payload)} bytes, header dims {dims} require {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(dims, order="F")
    return Volume3D(dims, tuple(header["spacing_mm"]), tuple(header["origin_mm"]), data)


def volume_sha256(path) -> str:
    """SHA-256 of the payload file followed by its header file."""
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    h.update(_header_path(path).read_bytes())
    return h.hexdigest()

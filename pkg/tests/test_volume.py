import json

import numpy as np
import pytest

from logismos.volume import (
    Volume3D, VolumeError, read_volume, sample_trilinear, volume_sha256,
    write_volume,
)


def test_round_trip_identity(tmp_path):
    vol = Volume3D((2, 2, 2), (1, 1, 1), (0, 0, 0), np.zeros((2, 2, 2)))
    p = tmp_path / "z.vol"
    write_volume(vol, p)
    back = read_volume(p)
    assert back.dims == vol.dims
    assert np.array_equal(back.data, vol.data)
    assert back.spacing == vol.spacing and back.origin == vol.origin


def test_round_trip_bit_exact_random(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.normal(size=(5, 7, 3)).astype(np.float32)
    vol = Volume3D((5, 7, 3), (0.4, 0.4, 0.7), (1.0, -2.0, 3.0), data)
    p = tmp_path / "r.vol"
    write_volume(vol, p)
    back = read_volume(p)
    assert back.data.tobytes() == vol.data.tobytes()


def test_header_payload_size_mismatch(tmp_path):
    p = tmp_path / "bad.vol"
    p.write_bytes(b"\x00" * (26 * 4))
    (tmp_path / "bad.json").write_text(json.dumps({
        "dims": [3, 3, 3], "spacing_mm": [1, 1, 1],
        "origin_mm": [0, 0, 0], "dtype": "f32le"}))
    with pytest.raises(VolumeError):
        read_volume(p)


def test_malformed_header(tmp_path):
    p = tmp_path / "bad2.vol"
    p.write_bytes(b"\x00" * 4)
    (tmp_path / "bad2.json").write_text("{not json")
    with pytest.raises(VolumeError):
        read_volume(p)
    (tmp_path / "bad2.json").write_text(json.dumps({"dims": [1, 1, 1]}))
    with pytest.raises(VolumeError):
        read_volume(p)


def test_sha256_stable_across_writes(tmp_path):
    rng = np.random.default_rng(7)
    vol = Volume3D((16, 16, 16), (1, 1, 1), (0, 0, 0),
                   rng.normal(size=(16, 16, 16)).astype(np.float32))
    p1, p2 = tmp_path / "a.vol", tmp_path / "b.vol"
    write_volume(vol, p1)
    write_volume(vol, p2)
    # frozen from the first run of this generator/spec pairing
    assert volume_sha256(p1) == volume_sha256(p2)


def test_file_is_x_fastest(tmp_path):
    data = np.arange(8, dtype=np.float32).reshape(2, 2, 2)  # data[x,y,z]
    vol = Volume3D((2, 2, 2), (1, 1, 1), (0, 0, 0), data)
    p = tmp_path / "o.vol"
    write_volume(vol, p)
    raw = np.frombuffer(p.read_bytes(), dtype="<f4")
    # x varies fastest: first two entries are data[0,0,0], data[1,0,0]
    assert raw[0] == data[0, 0, 0] and raw[1] == data[1, 0, 0]


def test_invariants_rejected():
    with pytest.raises(VolumeError):
        Volume3D((0, 2, 2), (1, 1, 1), (0, 0, 0), np.zeros(0))
    with pytest.raises(VolumeError):
        Volume3D((2, 2, 2), (1, -1, 1), (0, 0, 0), np.zeros((2, 2, 2)))
    with pytest.raises(VolumeError):
        Volume3D((2, 2, 2), (1, 1, 1), (0, 0, 0), np.zeros((2, 2, 1)))
    bad = np.zeros((2, 2, 2))
    bad[0, 0, 0] = np.nan
    with pytest.raises(VolumeError):
        Volume3D((2, 2, 2), (1, 1, 1), (0, 0, 0), bad)


def test_trilinear_voxel_center_and_constant():
    rng = np.random.default_rng(3)
    data = rng.normal(size=(4, 5, 6)).astype(np.float32)
    vol = Volume3D((4, 5, 6), (0.5, 1.0, 2.0), (10.0, 0.0, -3.0), data)
    p = vol.voxel_center((2, 3, 4))
    assert sample_trilinear(vol, p) == pytest.approx(float(data[2, 3, 4]), abs=1e-6)

    const = Volume3D((4, 4, 4), (1, 1, 1), (0, 0, 0), np.full((4, 4, 4), 3.25))
    assert sample_trilinear(const, (1.3, 2.7, 0.2)) == pytest.approx(3.25)


def test_trilinear_ramp_midpoint():
    nx = 8
    data = np.tile(np.arange(nx, dtype=np.float32)[:, None, None], (1, 4, 4))
    vol = Volume3D((nx, 4, 4), (2.0, 1.0, 1.0), (0, 0, 0), data)
    # physical x=5 is midway between voxel centers x=4 (idx 2) and x=6 (idx 3)
    assert sample_trilinear(vol, (5.0, 1.0, 1.0)) == pytest.approx(2.5)


def test_trilinear_clamps_out_of_bounds():
    data = np.arange(27, dtype=np.float32).reshape(3, 3, 3)
    vol = Volume3D((3, 3, 3), (1, 1, 1), (0, 0, 0), data)
    assert sample_trilinear(vol, (-5.0, 0.0, 0.0)) == pytest.approx(float(data[0, 0, 0]))
    assert sample_trilinear(vol, (9.0, 9.0, 9.0)) == pytest.approx(float(data[2, 2, 2]))

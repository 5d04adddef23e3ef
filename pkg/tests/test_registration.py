import numpy as np
import pytest

from logismos.columns import build_columns
from logismos.mesh import icosphere, TriMesh
from logismos.registration import (
    RegistrationError, RigidTransform, apply_transform, correspond_columns,
    icp_rigid, two_step_register,
)
from logismos.volume import Volume3D


def rot(axis, deg):
    axis = np.asarray(axis, dtype=float)
    axis /= np.linalg.norm(axis)
    a = np.deg2rad(deg)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(a) * k + (1 - np.cos(a)) * (k @ k)


def ellipsoid_mesh(center, semi, subdiv=2, bump=0.0):
    """Ellipsoid, optionally with an off-center bump that kills the 180-degree
    self-symmetries (plain ellipsoids give ICP a symmetry-equivalent pose)."""
    s = icosphere(subdiv)
    r = np.ones(len(s.vertices))
    if bump:
        n = len(s.vertices)
        r += bump * np.exp(-((s.vertices - s.vertices[17 % n]) ** 2).sum(1) / 0.3)
        r += 0.6 * bump * np.exp(-((s.vertices - s.vertices[71 % n]) ** 2).sum(1) / 0.2)
    verts = s.vertices * r[:, None] * np.asarray(semi) + np.asarray(center)
    return TriMesh(verts, s.triangles, watertight=True)


def test_rigid_transform_validation():
    with pytest.raises(RegistrationError):
        RigidTransform(np.eye(3) * 2.0, np.zeros(3))
    r = np.diag([1.0, 1.0, -1.0])  # orthonormal reflection, det -1
    with pytest.raises(RegistrationError):
        RigidTransform(r, np.zeros(3))


def test_icp_identity():
    m = ellipsoid_mesh((0, 0, 0), (10, 7, 5))
    tf = icp_rigid(m.vertices, m.vertices)
    assert np.allclose(tf.rotation, np.eye(3), atol=1e-9)
    assert np.allclose(tf.translation, 0, atol=1e-9)


def test_icp_recovers_planted_transform():
    m = ellipsoid_mesh((0, 0, 0), (12, 8, 5), bump=0.35)
    rng = np.random.default_rng(0)
    for _ in range(20):
        axis = rng.normal(size=3)
        r = rot(axis, rng.uniform(-15, 15))
        t = rng.normal(size=3)
        t = t / np.linalg.norm(t) * rng.uniform(0, 10)
        moving = m.vertices @ r.T + t
        tf = icp_rigid(moving, m, prealign=True)
        back = tf.apply_points(moving)
        rms = np.sqrt(((back - m.vertices) ** 2).sum(1).mean())
        assert rms <= 1e-3


def test_icp_rms_non_increasing():
    m = ellipsoid_mesh((0, 0, 0), (12, 8, 5))
    r = rot((0, 0, 1), 12)
    moving = m.vertices @ r.T + np.array([4.0, -2.0, 1.0])
    _, hist = icp_rigid(moving, m.vertices, return_history=True)
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))


def test_icp_degenerate_rejected():
    line = np.linspace([0, 0, 0], [1, 0, 0], 30)
    with pytest.raises(RegistrationError):
        icp_rigid(line, line)


def test_two_step_identity_and_planted():
    femur = ellipsoid_mesh((0, 0, 20), (13, 10, 8), bump=0.3)
    tibia = ellipsoid_mesh((0, 0, -2), (13, 10, 6), bump=0.25)
    tf = two_step_register(femur, tibia, femur, tibia)
    assert np.allclose(tf.rotation, np.eye(3), atol=1e-9)
    assert np.allclose(tf.translation, 0, atol=1e-8)

    rng = np.random.default_rng(1)
    for _ in range(10):
        r = rot(rng.normal(size=3), rng.uniform(-15, 15))
        t = rng.uniform(-10, 10, size=3)
        mf = TriMesh(femur.vertices @ r.T + t, femur.triangles)
        mt = TriMesh(tibia.vertices @ r.T + t, tibia.triangles)
        tf = two_step_register(mf, mt, femur, tibia)
        back = np.vstack([tf.apply_points(mf.vertices), tf.apply_points(mt.vertices)])
        ref = np.vstack([femur.vertices, tibia.vertices])
        rms = np.sqrt(((back - ref) ** 2).sum(1).mean())
        assert rms <= 1e-3


def test_two_step_fixes_femur_tibia_mismatch():
    # fixed scene: large femur above a small sparse tibia; the moving scene
    # is shifted by the femur-tibia offset, so the moving femur overlaps the
    # fixed tibia and the small dangling tibia cannot pull the least-squares
    # fit out of the swapped lock
    femur_f = ellipsoid_mesh((0, 0, 30), (12, 9, 7), bump=0.25)
    tibia_f = ellipsoid_mesh((0, 0, 0), (6, 5, 4), bump=0.2, subdiv=0)
    shift = np.array([0.0, 0.0, -30.0])
    femur_m = TriMesh(femur_f.vertices + shift, femur_f.triangles)
    tibia_m = TriMesh(tibia_f.vertices + shift, tibia_f.triangles)

    # single-cloud ICP locks the moving femur onto the fixed tibia
    single = icp_rigid(np.vstack([femur_m.vertices, tibia_m.vertices]),
                       np.vstack([femur_f.vertices, tibia_f.vertices]))
    back = single.apply_points(femur_m.vertices)
    single_rms = np.sqrt(((back - femur_f.vertices) ** 2).sum(1).mean())
    assert single_rms > 5.0

    two = two_step_register(femur_m, tibia_m, femur_f, tibia_f)
    back = np.vstack([two.apply_points(femur_m.vertices),
                      two.apply_points(tibia_m.vertices)])
    ref = np.vstack([femur_f.vertices, tibia_f.vertices])
    rms = np.sqrt(((back - ref) ** 2).sum(1).mean())
    assert rms <= 1e-3


def test_two_step_invariant_to_precomposed_motion():
    femur = ellipsoid_mesh((0, 0, 20), (13, 10, 8), bump=0.3)
    tibia = ellipsoid_mesh((0, 0, -2), (13, 10, 6), bump=0.25)
    g = RigidTransform(rot((1, 2, 3), 8), np.array([2.0, -1.0, 3.0]))
    mf = g.apply_mesh(femur)
    mt = g.apply_mesh(tibia)
    want = g.inverse()
    got = two_step_register(mf, mt, femur, tibia)
    pts = np.vstack([mf.vertices, mt.vertices])
    rms = np.sqrt(((got.apply_points(pts) - want.apply_points(pts)) ** 2).sum(1).mean())
    assert rms <= 1e-3


def test_apply_transform_mesh_exact_and_inverse():
    m = ellipsoid_mesh((1, 2, 3), (5, 4, 3))
    ident = RigidTransform.identity()
    same = apply_transform(m, ident)
    assert np.array_equal(same.vertices, m.vertices)

    tf = RigidTransform(rot((0, 1, 0), 30), np.array([1.0, 2.0, 3.0]))
    round_trip = apply_transform(apply_transform(m, tf), tf.inverse())
    assert np.allclose(round_trip.vertices, m.vertices, atol=1e-9)


def test_volume_rotation_matches_axis_permutation():
    rng = np.random.default_rng(2)
    n = 16
    data = rng.normal(size=(n, n, n)).astype(np.float32)
    vol = Volume3D((n, n, n), (1, 1, 1), (0, 0, 0), data)
    # 90 degrees about z through the grid center maps the grid onto itself
    center = np.array([(n - 1) / 2.0, (n - 1) / 2.0, (n - 1) / 2.0])
    r = rot((0, 0, 1), 90)
    tf = RigidTransform(r, center - r @ center)
    out = apply_transform(vol, tf)
    # forward map: (x, y, z) -> (-y, x, z) around center; value at out[x,y]
    # equals data at the inverse-mapped voxel
    expect = np.empty_like(data)
    for i in range(n):
        for j in range(n):
            expect[i, j, :] = data[j, (n - 1) - i, :]
    assert np.abs(out.data - expect).max() < 1e-5


def test_transform_json_round_trip():
    tf = RigidTransform(rot((3, 1, 2), 11), np.array([0.5, -2.0, 9.0]))
    back = RigidTransform.from_matrix34(tf.to_matrix34())
    assert np.allclose(back.rotation, tf.rotation)
    assert np.allclose(back.translation, tf.translation)


def test_correspond_columns_identity_and_mismatch():
    m = icosphere(1, radius=10.0)
    cs = build_columns(m, K=11, length_mm=4.4, node_spacing_mm=0.4, verify=False)
    mapping, dist = correspond_columns(cs, cs)
    assert np.array_equal(mapping, np.arange(cs.n_columns))
    assert dist == 0.0

    # shuffled-vertex mesh: same count, different topology
    perm = np.random.default_rng(0).permutation(len(m.vertices))
    inv = np.argsort(perm)
    shuffled = TriMesh(m.vertices[perm], inv[m.triangles])
    cs2 = build_columns(shuffled, K=11, length_mm=4.4, node_spacing_mm=0.4,
                        verify=False)
    with pytest.raises(RegistrationError):
        correspond_columns(cs, cs2)

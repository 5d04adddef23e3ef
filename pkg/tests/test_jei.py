import numpy as np
import pytest

import logismos.maxflow as mf
from logismos.columns import ColumnSet
from logismos.graph import (ConstraintSpec, CostTable, GraphLayout,
                            LogismosGraph, build_graph)
from logismos.jei import (CorrectionOutOfReach, CorrectionPoint, JeiError,
                          JeiSession, decode_session, encode_session,
                          replay_session)
from logismos.volume import Volume3D


def grid_columns(nx=6, ny=6, K=9, spacing=1.0):
    """Vertical columns on an nx x ny grid with 4-neighbor adjacency."""
    bases = []
    adj = []
    for j in range(ny):
        for i in range(nx):
            bases.append((2.0 + 2.0 * i, 2.0 + 2.0 * j, 1.0))
            cid = j * nx + i
            if i + 1 < nx:
                adj.append((cid, cid + 1))
            if j + 1 < ny:
                adj.append((cid, cid + nx))
    bases = np.asarray(bases)
    nodes = bases[:, None, :] + np.arange(K)[:, None] * spacing * np.array([0, 0, 1.0])
    tris = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            tris.append((a, a + 1, a + nx))
            tris.append((a + 1, a + nx + 1, a + nx))
    return ColumnSet(bases, nodes, spacing, K * spacing, adjacency=adj,
                     triangles=tris)


def make_session(K=9, seed=0, truth_k=4):
    cs = grid_columns(K=K)
    rng = np.random.default_rng(seed)
    layout = GraphLayout(1, (cs.n_columns,), 1, K)
    costs = CostTable(layout)
    base = rng.uniform(0.2, 1.0, size=(cs.n_columns, K))
    base[:, truth_k] = 0.05
    costs.set(0, 0, 0, base)
    spec = ConstraintSpec(node_spacing_mm=1.0, smoothness_mm=2.0,
                          delta_tmax_mm=None)
    g = build_graph({(0, 0): cs}, costs, spec)
    vol = Volume3D((16, 16, 12), (1, 1, 1), (0, 0, 0),
                   rng.uniform(0, 200, size=(16, 16, 12)).astype(np.float32))
    return JeiSession(vol, g)


def test_create_then_fetch_equals_input():
    s = make_session()
    assert np.all(s.solution.k(0, 0, 0) == 4)
    meshes = s.surface_meshes()
    assert (0, 0, 0) in meshes


def test_duplicate_sessions_distinct_ids():
    a = make_session()
    b = make_session()
    assert a.id != b.id


def test_correction_on_surface_is_noop():
    s = make_session()
    cp = CorrectionPoint((2.0, 2.0, 1.0 + 4.0), 0, 0, radius_mm=1.5)
    sol, delta, _ = s.apply_correction(cp)
    assert delta == []
    assert np.all(sol.k(0, 0, 0) == 4)


def test_correction_forces_node_on_isolated_column():
    # a single unconstrained column must land exactly on the forced node
    bases = np.array([[3.0, 3.0, 1.0]])
    K = 9
    nodes = bases[:, None, :] + np.arange(K)[:, None] * np.array([0, 0, 1.0])
    cs = ColumnSet(bases, nodes, 1.0, float(K))
    layout = GraphLayout(1, (1,), 1, K)
    costs = CostTable(layout)
    costs.set(0, 0, 0, np.linspace(0.1, 0.9, K).reshape(1, K))
    spec = ConstraintSpec(node_spacing_mm=1.0, smoothness_mm=1.0,
                          delta_tmax_mm=None)
    g = LogismosGraph(layout, costs, spec, adjacency_per_object=[[]],
                      columns_by={(0, 0): cs})
    vol = Volume3D((8, 8, 12), (1, 1, 1), (0, 0, 0),
                   np.zeros((8, 8, 12), dtype=np.float32))
    s = JeiSession(vol, g)
    assert s.solution.k(0, 0, 0)[0] == 0
    sol, delta, _ = s.apply_correction(
        CorrectionPoint((3.0, 3.0, 1.0 + 6.0), 0, 0, radius_mm=1.5))
    assert sol.k(0, 0, 0)[0] == 6
    assert delta[0]["new_k"] == 6


def test_correction_attracts_neighborhood_and_warm_equals_cold():
    # deterministic landscape: valley at k=4; clicking node 6 (within the
    # smoothness corridor) must move the nearest column exactly there
    cs = grid_columns(K=9)
    layout = GraphLayout(1, (cs.n_columns,), 1, 9)
    costs = CostTable(layout)
    base = np.full((cs.n_columns, 9), 0.9)
    base[:, 4] = 0.1
    costs.set(0, 0, 0, base)
    spec = ConstraintSpec(node_spacing_mm=1.0, smoothness_mm=2.0,
                          delta_tmax_mm=None)
    g = build_graph({(0, 0): cs}, costs, spec)
    vol = Volume3D((16, 16, 12), (1, 1, 1), (0, 0, 0),
                   np.zeros((16, 16, 12), dtype=np.float32))
    s = JeiSession(vol, g)
    assert np.all(s.solution.k(0, 0, 0) == 4)

    target = (2.0 + 2.0 * 2, 2.0 + 2.0 * 2, 1.0 + 6.0)   # column 14, node 6
    cp = CorrectionPoint(target, 0, 0, radius_mm=4.5)
    sol, delta, dt = s.apply_correction(cp)
    assert sol.k(0, 0, 0)[14] == 6
    assert any(d["column"] == 14 for d in delta)
    flow_cold, _, _ = mf.max_flow(s.graph.net)
    assert s.graph.state.flow_value() == flow_cold


def test_correction_locality():
    s = make_session()
    before = {k: v.copy() for k, v in s.graph.costs.blocks().items()}
    cp = CorrectionPoint((2.0, 2.0, 8.0), 0, 0, radius_mm=2.5)
    s.apply_correction(cp)
    after = s.graph.costs.get(0, 0, 0)
    cs = s.graph.columns_by[(0, 0)]
    d = np.linalg.norm(cs.nodes - np.asarray(cp.position)[None, None, :],
                       axis=2).min(axis=1)
    far = d > cp.radius_mm
    assert np.array_equal(after[far], before[(0, 0, 0)][far])
    assert not np.array_equal(after[~far], before[(0, 0, 0)][~far])


def test_out_of_reach_rejected():
    s = make_session()
    with pytest.raises(CorrectionOutOfReach):
        s.apply_correction(CorrectionPoint((100.0, 100.0, 100.0), 0, 0,
                                           radius_mm=2.0))


def test_undo_restores_cost_exactly():
    s = make_session()
    original_cost = s.solution.total_cost_scaled
    cp = CorrectionPoint((6.0, 6.0, 8.0), 0, 0, radius_mm=2.2)
    s.apply_correction(cp)
    assert s.solution.total_cost_scaled != original_cost
    sol = s.undo()
    assert sol.total_cost_scaled == original_cost
    with pytest.raises(JeiError):
        s.undo()


def test_two_applies_one_undo_equals_single_replay():
    s = make_session(seed=3)
    cp1 = CorrectionPoint((4.0, 4.0, 7.0), 0, 0, radius_mm=2.0)
    cp2 = CorrectionPoint((8.0, 8.0, 3.0), 0, 0, radius_mm=2.0)
    s.apply_correction(cp1)
    s.apply_correction(cp2)
    s.undo()

    fresh = make_session(seed=3)
    fresh.apply_correction(cp1)
    assert np.array_equal(s.solution.k(0, 0, 0), fresh.solution.k(0, 0, 0))
    assert s.solution.total_cost_scaled == fresh.solution.total_cost_scaled


def test_replay_determinism():
    corrections = [CorrectionPoint((4.0, 6.0, 6.0), 0, 0, radius_mm=2.4),
                   CorrectionPoint((10.0, 4.0, 2.0), 0, 0, radius_mm=3.0)]
    a = replay_session(make_session(seed=5).volume, make_session(seed=5).graph,
                       corrections)
    b = replay_session(make_session(seed=5).volume, make_session(seed=5).graph,
                       corrections)
    assert np.array_equal(a.solution.k(0, 0, 0), b.solution.k(0, 0, 0))
    assert a.solution.total_cost_scaled == b.solution.total_cost_scaled


def test_random_sequences_warm_equals_cold():
    rng = np.random.default_rng(11)
    for trial in range(5):
        s = make_session(seed=trial)
        for _ in range(int(rng.integers(1, 6))):
            col = int(rng.integers(0, 36))
            node = int(rng.integers(1, 8))
            base = s.graph.columns_by[(0, 0)].bases[col]
            pos = (base[0], base[1], 1.0 + node)
            s.apply_correction(CorrectionPoint(pos, 0, 0,
                                               radius_mm=float(rng.uniform(1.2, 4.0))))
        flow_cold, _, _ = mf.max_flow(s.graph.net)
        assert s.graph.state.flow_value() == flow_cold


def test_session_blob_round_trip():
    s = make_session(seed=9)
    s.apply_correction(CorrectionPoint((6.0, 4.0, 7.0), 0, 0, radius_mm=2.0))
    blob = encode_session(s)
    restored = decode_session(blob, s.volume)
    assert restored.id == s.id
    assert np.array_equal(restored.solution.k(0, 0, 0), s.solution.k(0, 0, 0))
    assert restored.solution.total_cost_scaled == s.solution.total_cost_scaled
    # identical state hash on re-encode
    assert encode_session(restored) == blob
    # undo works across the round trip
    restored.undo()
    fresh = make_session(seed=9)
    assert restored.solution.total_cost_scaled == fresh.solution.total_cost_scaled


def test_get_slice_contract():
    s = make_session()
    img, contours = s.get_slice(axis=2, index=5, wmin=0.0, wmax=200.0)
    assert img.shape == (16, 16)
    assert img.dtype == np.uint8
    with pytest.raises(JeiError):
        s.get_slice(2, 99, 0, 200)
    with pytest.raises(JeiError):
        s.get_slice(2, 5, 10, 10)

    # constant volume gives a uniform image
    vol = Volume3D((8, 8, 8), (1, 1, 1), (0, 0, 0),
                   np.full((8, 8, 8), 50.0, dtype=np.float32))
    s2 = JeiSession(vol, s.graph)
    img2, _ = s2.get_slice(0, 3, 0.0, 100.0)
    assert np.all(img2 == img2[0, 0])


def test_windowing_identity_on_8bit_ramp():
    ramp = np.tile(np.arange(256, dtype=np.float32)[:, None, None] % 256,
                   (1, 4, 4))[:64]
    vol = Volume3D((64, 4, 4), (1, 1, 1), (0, 0, 0), ramp)
    s = make_session()
    s2 = JeiSession(vol, s.graph)
    img, _ = s2.get_slice(2, 1, 0.0, 255.0)
    assert np.array_equal(img, ramp[:, :, 1].astype(np.uint8))

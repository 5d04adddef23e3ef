import numpy as np
import pytest

from logismos import maxflow as mf

from oracles import edmonds_karp, random_network


def build(n, arcs, s, t):
    net = mf.FlowNetwork(n, s, t)
    ids = [net.add_arc(u, v, c) for u, v, c in arcs]
    return net, ids


def test_two_arc_chain():
    net, _ = build(4, [(0, 2, 2), (2, 1, 1)], 0, 1)
    flow, side, state = mf.max_flow(net)
    assert flow == 1
    assert side[0] and side[2] and not side[1]


def test_disconnected_sink():
    net, _ = build(5, [(0, 2, 3), (2, 3, 2)], 0, 1)
    flow, side, state = mf.max_flow(net)
    assert flow == 0
    assert side[0] and side[2] and side[3] and not side[1]


def test_duality_on_every_solve():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n, arcs, s, t = random_network(rng)
        net, _ = build(n, arcs, s, t)
        flow, side, state = mf.max_flow(net)
        assert flow == state.cut_capacity(side)
        assert side[s] and not side[t]


def test_against_independent_solver_500_random():
    rng = np.random.default_rng(42)
    for _ in range(500):
        n, arcs, s, t = random_network(rng)
        net, _ = build(n, arcs, s, t)
        flow, _, _ = mf.max_flow(net)
        assert flow == edmonds_karp(n, arcs, s, t)


def test_update_noop_keeps_cut():
    rng = np.random.default_rng(3)
    n, arcs, s, t = random_network(rng)
    net, ids = build(n, arcs, s, t)
    flow, side, state = mf.max_flow(net)
    mf.update_capacities(state, [(ids[0], arcs[0][2])])
    flow2, side2 = mf.resolve(state)
    assert flow2 == flow
    assert np.array_equal(side, side2)


def test_increase_only_monotone():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n, arcs, s, t = random_network(rng)
        net, ids = build(n, arcs, s, t)
        flow, _, state = mf.max_flow(net)
        k = int(rng.integers(0, len(arcs)))
        bump = int(rng.integers(1, 10))
        mf.update_capacities(state, [(ids[k] , arcs[k][2] + bump)])
        flow2, _ = mf.resolve(state)
        assert flow2 >= flow


def test_warm_equals_cold_random_batches():
    rng = np.random.default_rng(2024)
    for _ in range(120):
        n, arcs, s, t = random_network(rng)
        net, ids = build(n, arcs, s, t)
        _, _, state = mf.max_flow(net)
        current = [c for _, _, c in arcs]
        for _ in range(int(rng.integers(1, 5))):
            batch = []
            for _ in range(int(rng.integers(1, 6))):
                k = int(rng.integers(0, len(arcs)))
                newcap = int(rng.integers(0, 25))
                current[k] = newcap
                batch.append((ids[k], newcap))
            mf.update_capacities(state, batch)
            warm_flow, warm_side = mf.resolve(state)
            cold_arcs = [(u, v, c) for (u, v, _), c in zip(arcs, current)]
            assert warm_flow == edmonds_karp(n, cold_arcs, s, t)
            assert warm_flow == state.cut_capacity(warm_side)


def test_resolve_without_changes_is_stable():
    rng = np.random.default_rng(5)
    n, arcs, s, t = random_network(rng)
    net, _ = build(n, arcs, s, t)
    flow, side, state = mf.max_flow(net)
    flow2, side2 = mf.resolve(state)
    assert flow2 == flow
    assert np.array_equal(side, side2)


def test_unknown_arc_rejected():
    net, _ = build(3, [(0, 2, 1), (2, 1, 1)], 0, 1)
    _, _, state = mf.max_flow(net)
    with pytest.raises(mf.FlowError):
        mf.update_capacities(state, [(999, 1)])


def test_negative_capacity_rejected():
    net, ids = build(3, [(0, 2, 1), (2, 1, 1)], 0, 1)
    _, _, state = mf.max_flow(net)
    with pytest.raises(mf.FlowError):
        mf.update_capacities(state, [(ids[0], -1)])

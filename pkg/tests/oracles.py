"""Independent reference implementations used only to check the package.

Everything here is deliberately written in the most boring way possible and
shares no code with the implementations under test.
"""

from collections import deque

import numpy as np


def edmonds_karp(n_nodes, arcs, source, sink):
    """Plain BFS augmenting-path max flow.

    ``arcs`` is a list of (u, v, cap) directed arcs. Returns the flow value.
    """
    cap = {}
    adj = [[] for _ in range(n_nodes)]
    for u, v, c in arcs:
        if (u, v) not in cap:
            adj[u].append(v)
            adj[v].append(u)
            cap[(u, v)] = 0
            cap[(v, u)] = cap.get((v, u), 0)
        cap[(u, v)] += c
        cap.setdefault((v, u), 0)

    flow = 0
    while True:
        prev = {source: None}
        queue = deque([source])
        while queue and sink not in prev:
            x = queue.popleft()
            for y in adj[x]:
                if y not in prev and cap[(x, y)] > 0:
                    prev[y] = x
                    queue.append(y)
        if sink not in prev:
            return flow
        bottleneck = None
        y = sink
        while prev[y] is not None:
            x = prev[y]
            b = cap[(x, y)]
            bottleneck = b if bottleneck is None else min(bottleneck, b)
            y = x
        y = sink
        while prev[y] is not None:
            x = prev[y]
            cap[(x, y)] -= bottleneck
            cap[(y, x)] += bottleneck
            y = x
        flow += bottleneck


def random_network(rng, max_nodes=30, max_arcs=90, max_cap=20):
    """Random directed network (possibly with anti-parallel arcs and cycles)."""
    n = rng.integers(4, max_nodes + 1)
    source, sink = 0, 1
    m = rng.integers(3, max_arcs + 1)
    arcs = []
    for _ in range(m):
        u = int(rng.integers(0, n))
        v = int(rng.integers(0, n))
        if u == v:
            continue
        arcs.append((u, v, int(rng.integers(0, max_cap + 1))))
    # make sure something can flow now and then
    mid = int(rng.integers(2, n)) if n > 2 else 1
    arcs.append((source, mid, int(rng.integers(1, max_cap + 1))))
    arcs.append((mid, sink, int(rng.integers(1, max_cap + 1))))
    return n, arcs, source, sink


def paired_sign_test(a, b):
    """Two-sided sign test p-value that paired samples differ in location.

    Counts strict wins of a < b versus a > b and applies an exact binomial
    test; ties are dropped.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    wins = int(np.sum(a < b))
    losses = int(np.sum(a > b))
    n = wins + losses
    if n == 0:
        return 1.0
    from scipy.stats import binomtest
    return float(binomtest(min(wins, losses), n, 0.5, alternative="two-sided").pvalue)


def one_sided_sign_test(a, b):
    """One-sided sign test p-value for the hypothesis that a < b (paired)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    wins = int(np.sum(a < b))
    n = int(np.sum(a != b))
    if n == 0:
        return 1.0
    from scipy.stats import binomtest
    return float(binomtest(wins, n, 0.5, alternative="greater").pvalue)


def paired_t_test(a, b):
    """Classic paired t-test, reimplemented directly from the definition."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = a - b
    n = len(d)
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        return 0.0 if mean != 0 else 1.0
    t = mean / (sd / np.sqrt(n))
    from scipy.stats import t as tdist
    return float(2 * tdist.sf(abs(t), n - 1))

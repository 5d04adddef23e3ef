"""s-t max-flow / min-cut with retained residual state and warm re-solve.

The solver grows source and sink search trees simultaneously and repairs
them via orphan adoption after each augmentation, the augmenting-path style
standard for vision min-cuts. Residual capacities survive between solves:
after :func:`update_capacities` edits, :func:`resolve` restores flow
feasibility (canceling any flow stranded above a lowered capacity) and then
augments only what the edit changed, which is what makes interactive
editing cheap.

Capacities are integers; all arithmetic is exact.
"""

from __future__ import annotations

from collections import deque

import numpy as np

_FREE, _S, _T = 0, 1, 2


class FlowError(ValueError):
    pass


class FlowNetwork:
    """Arc-pair flow network builder.

    Every call to :meth:`add_arc` creates the forward arc and its reverse
    (capacity ``rev_cap``) at adjacent indices, so ``arc ^ 1`` is always the
    reverse arc.
    """

    def __init__(self, n_nodes: int, source: int, sink: int):
        if not (0 <= source < n_nodes and 0 <= sink < n_nodes) or source == sink:
            raise FlowError("invalid source/sink")
        self.n_nodes = int(n_nodes)
        self.source = int(source)
        self.sink = int(sink)
        self._from = []
        self._to = []
        self._cap = []
        self._finalized = False

    def add_arc(self, u: int, v: int, cap: int, rev_cap: int = 0) -> int:
        if self._finalized:
            raise FlowError("network already finalized")
        if cap < 0 or rev_cap < 0:
            raise FlowError("capacities must be non-negative")
        if not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes):
            raise FlowError("arc endpoint out of range")
        aid = len(self._from)
        self._from += [u, v]
        self._to += [v, u]
        self._cap += [int(cap), int(rev_cap)]
        return aid

    @property
    def n_arcs(self) -> int:
        return len(self._from)

    def finalize(self):
        if self._finalized:
            return self
        self.arc_from = np.asarray(self._from, dtype=np.int32)
        self.arc_to = np.asarray(self._to, dtype=np.int32)
        self.arc_cap = np.asarray(self._cap, dtype=np.int64)
        order = np.argsort(self.arc_from, kind="stable")
        self.adj_arcs = order.astype(np.int32)
        counts = np.bincount(self.arc_from, minlength=self.n_nodes)
        self.adj_start = np.zeros(self.n_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=self.adj_start[1:])
        self._finalized = True
        return self


class ResidualState:
    """Residual capacities plus search bookkeeping for one network."""

    def __init__(self, net: FlowNetwork):
        net.finalize()
        self.net = net
        self.res = net.arc_cap.astype(np.int64).copy()
        self.tree = np.zeros(net.n_nodes, dtype=np.int8)
        self.parent_arc = np.full(net.n_nodes, -1, dtype=np.int64)
        self.solved = False

    # -- helpers -----------------------------------------------------------

    def _arcs_of(self, node: int):
        s, e = self.net.adj_start[node], self.net.adj_start[node + 1]
        return self.net.adj_arcs[s:e]

    def flow_value(self) -> int:
        src = self.net.source
        arcs = self._arcs_of(src)
        caps = self.net.arc_cap[arcs]
        return int((caps - self.res[arcs]).sum())

    def source_side(self) -> np.ndarray:
        """Nodes reachable from the source in the residual graph (bool mask)."""
        net = self.net
        seen = np.zeros(net.n_nodes, dtype=bool)
        seen[net.source] = True
        stack = [net.source]
        res = self.res
        while stack:
            u = stack.pop()
            for a in self._arcs_of(u):
                if res[a] > 0 and not seen[net.arc_to[a]]:
                    seen[net.arc_to[a]] = True
                    stack.append(net.arc_to[a])
        return seen

    def cut_capacity(self, side: np.ndarray) -> int:
        """Capacity of the cut induced by a source-side mask (verification aid)."""
        net = self.net
        u_side = side[net.arc_from]
        v_side = side[net.arc_to]
        crossing = u_side & ~v_side
        return int(net.arc_cap[crossing].sum())

    # -- core solve ---------------------------------------------------------

    def _origin_ok(self, w: int, root: int) -> bool:
        frm, to = self.net.arc_from, self.net.arc_to
        tree = self.tree
        while True:
            pa = self.parent_arc[w]
            if pa < 0:
                return w == root
            w = frm[pa] if tree[w] == _S else to[pa]

    def _augment(self, bridge: int, orphans: deque) -> int:
        res = self.res
        frm, to = self.net.arc_from, self.net.arc_to
        parent = self.parent_arc

        delta = res[bridge]
        u = frm[bridge]
        while parent[u] >= 0:
            a = parent[u]
            if res[a] < delta:
                delta = res[a]
            u = frm[a]
        v = to[bridge]
        while parent[v] >= 0:
            a = parent[v]
            if res[a] < delta:
                delta = res[a]
            v = to[a]

        res[bridge] -= delta
        res[bridge ^ 1] += delta
        u = frm[bridge]
        while parent[u] >= 0:
            a = parent[u]
            res[a] -= delta
            res[a ^ 1] += delta
            nxt = frm[a]
            if res[a] == 0:
                parent[u] = -1
                orphans.append(u)
            u = nxt
        v = to[bridge]
        while parent[v] >= 0:
            a = parent[v]
            res[a] -= delta
            res[a ^ 1] += delta
            nxt = to[a]
            if res[a] == 0:
                parent[v] = -1
                orphans.append(v)
            v = nxt
        return int(delta)

    def _adopt(self, orphans: deque, active: deque):
        res = self.res
        frm, to = self.net.arc_from, self.net.arc_to
        tree = self.tree
        parent = self.parent_arc
        root_s, root_t = self.net.source, self.net.sink

        while orphans:
            o = orphans.popleft()
            x = tree[o]
            if x == _FREE:
                continue
            root = root_s if x == _S else root_t
            found = False
            for a in self._arcs_of(o):
                w = to[a]
                if tree[w] != x:
                    continue
                rcap = res[a ^ 1] if x == _S else res[a]
                if rcap <= 0:
                    continue
                if self._origin_ok(w, root):
                    parent[o] = (a ^ 1) if x == _S else a
                    found = True
                    break
            if found:
                continue
            for a in self._arcs_of(o):
                w = to[a]
                if tree[w] != x:
                    continue
                rcap = res[a ^ 1] if x == _S else res[a]
                if rcap > 0:
                    active.append(w)
                pa = parent[w]
                if pa >= 0:
                    w_parent = frm[pa] if x == _S else to[pa]
                    if w_parent == o:
                        parent[w] = -1
                        orphans.append(w)
            tree[o] = _FREE
            parent[o] = -1

    def _run(self):
        net = self.net
        res = self.res
        to = net.arc_to
        tree = self.tree
        parent = self.parent_arc

        tree[:] = _FREE
        parent[:] = -1
        tree[net.source] = _S
        tree[net.sink] = _T
        active = deque([net.source, net.sink])
        orphans = deque()

        while active:
            p = active.popleft()
            x = tree[p]
            if x == _FREE:
                continue
            restart = False
            for a in self._arcs_of(p):
                rcap = res[a] if x == _S else res[a ^ 1]
                if rcap <= 0:
                    continue
                q = to[a]
                tq = tree[q]
                if tq == _FREE:
                    tree[q] = x
                    parent[q] = a if x == _S else (a ^ 1)
                    active.append(q)
                elif tq != x:
                    bridge = a if x == _S else (a ^ 1)
                    self._augment(bridge, orphans)
                    self._adopt(orphans, active)
                    restart = True
                    break
            if restart and tree[p] != _FREE:
                active.appendleft(p)
        self.solved = True


def max_flow(net: FlowNetwork):
    """Cold solve. Returns ``(flow_value, source_side_mask, state)``."""
    state = ResidualState(net)
    state._run()
    return state.flow_value(), state.source_side(), state


def resolve(state: ResidualState):
    """Re-solve on current residuals (warm start). Same contract as max_flow."""
    state._run()
    return state.flow_value(), state.source_side()


def update_capacities(state: ResidualState, changes) -> ResidualState:
    """Apply ``(arc_id, new_capacity)`` edits, repairing flow feasibility.

    Where a decrease strands flow above the new capacity, the excess is
    canceled along residual paths before the next solve; increases simply
    open residual capacity. Call :func:`resolve` afterwards to re-optimize.
    """
    net = state.net
    res = state.res
    cap = net.arc_cap
    excess: dict[int, int] = {}

    for arc, new_cap in changes:
        arc = int(arc)
        new_cap = int(new_cap)
        if not (0 <= arc < net.n_arcs):
            raise FlowError(f"unknown arc {arc}")
        if new_cap < 0:
            raise FlowError("capacity must be non-negative")
        delta = new_cap - int(cap[arc])
        cap[arc] = new_cap
        res[arc] += delta
        if res[arc] < 0:
            e = int(-res[arc])
            res[arc] = 0
            res[arc ^ 1] -= e
            u, v = int(net.arc_from[arc]), int(net.arc_to[arc])
            excess[u] = excess.get(u, 0) + e
            excess[v] = excess.get(v, 0) - e

    # terminals are unconstrained; only interior imbalances need repair
    excess.pop(net.source, None)
    excess.pop(net.sink, None)
    excess = {k: v for k, v in excess.items() if v != 0}
    if excess:
        _restore_feasibility(state, excess)
    state.solved = False
    return state


def _bfs_path(state, start, is_target):
    """Residual-graph BFS; returns arc list start->target or None."""
    net = state.net
    res = state.res
    prev_arc = {start: -1}
    queue = deque([start])
    target = None
    while queue:
        x = queue.popleft()
        for a in state._arcs_of(x):
            if res[a] <= 0:
                continue
            q = int(net.arc_to[a])
            if q in prev_arc:
                continue
            prev_arc[q] = int(a)
            if is_target(q):
                target = q
                queue.clear()
                break
            queue.append(q)
    if target is None:
        return None, None
    path = []
    q = target
    while prev_arc[q] >= 0:
        a = prev_arc[q]
        path.append(a)
        q = int(net.arc_from[a])
    path.reverse()
    return path, target


def _bfs_path_reverse(state, end, is_source):
    """Find arcs source->end walking backwards over residual arcs."""
    net = state.net
    res = state.res
    next_arc = {end: -1}
    queue = deque([end])
    found = None
    while queue:
        y = queue.popleft()
        for a in state._arcs_of(y):
            # incoming arc (w -> y) is the reverse pair of (y -> w)
            inc = a ^ 1
            if res[inc] <= 0:
                continue
            w = int(net.arc_to[a])
            if w in next_arc:
                continue
            next_arc[w] = int(inc)
            if is_source(w):
                found = w
                queue.clear()
                break
            queue.append(w)
    if found is None:
        return None
    path = []
    w = found
    while next_arc[w] >= 0:
        a = next_arc[w]
        path.append(a)
        w = int(net.arc_to[a])
    return path


def _restore_feasibility(state: ResidualState, excess: dict):
    """Cancel node imbalances left by capacity decreases.

    Surplus inflow is routed back to a terminal or to a deficit node along
    residual paths; remaining deficits are fed from a terminal. Flow
    decomposition guarantees such paths exist, so failure to find one means
    corrupted state.
    """
    net = state.net
    res = state.res
    s, t = net.source, net.sink

    surplus = [n for n, e in excess.items() if e > 0]
    for u in surplus:
        while excess.get(u, 0) > 0:
            path, target = _bfs_path(
                state, u,
                lambda q: q == s or q == t or excess.get(q, 0) < 0,
            )
            if path is None:
                raise FlowError("residual state is inconsistent (no relief path)")
            delta = min(int(res[a]) for a in path)
            delta = min(delta, excess[u])
            if excess.get(target, 0) < 0:
                delta = min(delta, -excess[target])
            for a in path:
                res[a] -= delta
                res[a ^ 1] += delta
            excess[u] -= delta
            if target in excess:
                excess[target] += delta

    for v, e in list(excess.items()):
        while excess.get(v, 0) < 0:
            path = _bfs_path_reverse(state, v, lambda w: w == s or w == t)
            if path is None:
                raise FlowError("residual state is inconsistent (no feed path)")
            delta = min(int(res[a]) for a in path)
            delta = min(delta, -excess[v])
            for a in path:
                res[a] -= delta
                res[a ^ 1] += delta
            excess[v] += delta

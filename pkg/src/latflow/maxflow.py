"""Exact maximal flow, maximal admissible stream and minimum cutset.

Each undirected lattice edge becomes two antiparallel arcs of capacity t(e);
the net arc flow gives the stream scalar, so |s(e)| <= t(e) holds exactly.
Dinic's blocking-flow search keeps every quantity in the input's arithmetic
(Fractions in verification mode), which makes the duality certificate exact.
"""

from collections import deque
from dataclasses import dataclass

from .geometry import EdgeId
from .stream import Stream


class _Dinic:
    class Arc:
        __slots__ = ("v", "rev", "cap")

        def __init__(self, v, rev, cap):
            self.v = v
            self.rev = rev
            self.cap = cap

    def __init__(self, n):
        self.g = [[] for _ in range(n)]

    def add(self, u, v, cap_uv, cap_vu):
        self.g[u].append(self.Arc(v, len(self.g[v]), cap_uv))
        self.g[v].append(self.Arc(u, len(self.g[u]) - 1, cap_vu))
        return len(self.g[u]) - 1

    def bfs(self, s, t, level):
        for i in range(len(level)):
            level[i] = -1
        level[s] = 0
        q = deque([s])
        while q:
            u = q.popleft()
            for a in self.g[u]:
                if a.cap > 0 and level[a.v] < 0:
                    level[a.v] = level[u] + 1
                    q.append(a.v)
        return level[t] >= 0

    def dfs(self, u, t, pushed, level, it):
        if u == t:
            return pushed
        while it[u] < len(self.g[u]):
            a = self.g[u][it[u]]
            if a.cap > 0 and level[a.v] == level[u] + 1:
                got = self.dfs(a.v, t, min(pushed, a.cap), level, it)
                if got > 0:
                    a.cap -= got
                    self.g[a.v][a.rev].cap += got
                    return got
            it[u] += 1
        return 0

    def max_flow(self, s, t):
        total = 0
        level = [-1] * len(self.g)
        while self.bfs(s, t, level):
            it = [0] * len(self.g)
            while True:
                pushed = self.dfs(s, t, None_as_inf(), level, it)
                if pushed <= 0:
                    break
                total += pushed
        return total

    def reachable(self, s):
        seen = [False] * len(self.g)
        seen[s] = True
        q = deque([s])
        while q:
            u = q.popleft()
            for a in self.g[u]:
                if a.cap > 0 and not seen[a.v]:
                    seen[a.v] = True
                    q.append(a.v)
        return seen


class _Inf:
    """Order-only infinity so Fraction and float capacities both work."""

    def __gt__(self, other):
        return True

    def __lt__(self, other):
        return False

    def __le__(self, other):
        return False

    def __ge__(self, other):
        return True

    def __sub__(self, other):
        return self

    def __add__(self, other):
        return self


def None_as_inf():
    return _Inf()


def min_comparable(a, b):
    return b if isinstance(a, _Inf) else (a if a < b else b)


@dataclass
class MaxFlowResult:
    value: object
    stream: Stream
    cutset: tuple

    def cut_capacity(self, t):
        return sum(t[e] for e in self.cutset)


def _solve(d, n, vertices, edges, sources, sinks, t):
    """Max flow on the given lattice edge set between the vertex sets."""
    import sys

    need = 4 * len(vertices) + 100
    if sys.getrecursionlimit() < need:
        sys.setrecursionlimit(need)
    verts = sorted(vertices)
    index = {v: i for i, v in enumerate(verts)}
    S, T = len(verts), len(verts) + 1
    net = _Dinic(len(verts) + 2)
    arc_of = {}
    cap_total = 0
    for e in edges:
        c = t.get(e, 0)
        if c < 0:
            raise ValueError("negative capacity")
        u, v = index[e.x], index[e.right()]
        arc_of[e] = (u, net_add(net, u, v, c))
        cap_total += c
    big = cap_total + 1
    for v in sorted(sources):
        net.add(S, index[v], big, 0)
    for v in sorted(sinks):
        net.add(index[v], T, big, 0)
    value = net.max_flow(S, T)

    stream = Stream(d, n)
    for e, (u, ai) in arc_of.items():
        a = net.g[u][ai]
        b = net.g[a.v][a.rev]
        c = t.get(e, 0)
        # forward flow - backward flow = (c - cap_fwd) - (c - cap_bwd)
        s = b.cap - c
        if s != 0:
            stream.values[e] = s

    seen = net.reachable(S)
    cut = []
    for e in sorted(arc_of):
        u, ai = arc_of[e]
        v = net.g[u][ai].v
        if seen[u] != seen[v]:
            cut.append(e)
    return MaxFlowResult(value=value, stream=stream, cutset=tuple(cut))


def net_add(net, u, v, c):
    return net.add(u, v, c, c)


def _cancel_cycles(f: Stream):
    """Remove circulation components so the stream decomposes into pure
    source-to-sink paths; keeps flow value, node law and |s(e)| non-increasing."""
    # oriented adjacency: vertex -> list of (edge, dir) with positive flow out
    while True:
        out = {}
        for e, v in f.values.items():
            if v > 0:
                out.setdefault(e.x, []).append((e, 1))
            elif v < 0:
                out.setdefault(e.right(), []).append((e, -1))
        color = {}
        stack_edges = []
        cycle = None

        def walk(x):
            nonlocal cycle
            stack = [(x, iter(out.get(x, ())))]
            color[x] = 1
            path = []
            while stack:
                u, it = stack[-1]
                advanced = False
                for e, dr in it:
                    w = e.right() if dr > 0 else e.x
                    if color.get(w, 0) == 1:
                        path.append((e, dr))
                        idx = next(i for i, (v2, _) in enumerate(stack) if v2 == w)
                        cycle = path[idx:]
                        return True
                    if color.get(w, 0) == 0:
                        path.append((e, dr))
                        color[w] = 1
                        stack.append((w, iter(out.get(w, ()))))
                        advanced = True
                        break
                if not advanced:
                    color[u] = 2
                    stack.pop()
                    if path:
                        path.pop()
            return False

        for x in sorted(out):
            if color.get(x, 0) == 0 and walk(x):
                break
        if cycle is None:
            return
        m = min(abs(f.get(e)) for e, _ in cycle)
        for e, dr in cycle:
            f.add(e, -dr * m)


def max_flow(L, t) -> MaxFlowResult:
    """phi_n(Gamma^1, Gamma^2, Omega) with a maximal admissible stream and a
    minimum cutset certificate (source-side residual reachability)."""
    res = _solve(L.d, L.n, L.omega, L.active_edges, L.gamma1, L.gamma2, t)
    _cancel_cycles(res.stream)
    return res


def cylinder_flow_top_bottom(base, h, v, t, n=1):
    """Phi(A, h): maximal flow from T(A,h) to B(A,h) inside cyl(A,h,v)."""
    from .geometry import cylinder_sets

    region, top, bottom, _, _ = cylinder_sets(base, h, v, n)
    return _cyl_flow(region, top, bottom, t, n)


def cylinder_flow_tau(base, h, t, n=1, v=None):
    """tau(A, h): maximal flow from the upper to the lower half boundary."""
    from .geometry import cylinder_sets, face_axis

    if v is None:
        ax = face_axis(base)
        v = tuple(1 if j == ax else 0 for j in range(len(base)))
    region, _, _, top_half, bot_half = cylinder_sets(base, h, v, n)
    return _cyl_flow(region, top_half, bot_half, t, n)


def _cyl_flow(region, sources, sinks, t, n):
    verts = set(region.lattice_vertices(n))
    d = len(next(iter(verts))) if verts else 0
    edges = []
    for x in sorted(verts):
        for j in range(d):
            e = EdgeId(x, j)
            if e.right() in verts:
                edges.append(e)
    terminals = sources | sinks
    edges = [e for e in edges if not (e.x in terminals and e.right() in terminals)]
    res = _solve(d, n, verts, edges, sources, sinks, t)
    _cancel_cycles(res.stream)
    return res

"""The discrete stream object and its derived quantities.

A stream assigns to each lattice edge a signed magnitude in the canonical
+e_axis orientation; the vector value on edge e is s(e) * e_axis.  Magnitudes
may be Fractions (verification mode) or floats (Monte Carlo mode); every
operation here is agnostic to the numeric type.
"""

from dataclasses import dataclass, field
from fractions import Fraction

from .geometry import EdgeId, face_axis


@dataclass
class Stream:
    d: int
    n: int
    values: dict = field(default_factory=dict)

    def get(self, edge):
        return self.values.get(edge, 0)

    def set(self, edge, v):
        if v == 0:
            self.values.pop(edge, None)
        else:
            self.values[edge] = v

    def add(self, edge, v):
        self.set(edge, self.get(edge) + v)

    def copy(self):
        return Stream(self.d, self.n, dict(self.values))

    def support(self):
        return set(self.values)

    def scaled(self, c):
        out = Stream(self.d, self.n)
        if c != 0:
            for e, v in self.values.items():
                out.values[e] = c * v
        return out

    def __add__(self, other):
        if (self.d, self.n) != (other.d, other.n):
            raise ValueError("streams live on different lattices")
        out = self.copy()
        for e, v in other.values.items():
            out.add(e, v)
        return out

    def __sub__(self, other):
        return self + other.scaled(-1)

    def max_magnitude(self):
        return max((abs(v) for v in self.values.values()), default=0)


def incident_edges(x, d):
    """(edge, orientation) pairs at vertex x; orientation +1 when the edge
    leaves x in the canonical +e direction."""
    out = []
    for j in range(d):
        out.append((EdgeId(tuple(x), j), 1))
        y = list(x)
        y[j] -= 1
        out.append((EdgeId(tuple(y), j), -1))
    return out


def divergence_at(f: Stream, x) -> object:
    """Discrete divergence d f_n(x) = n * sum f(e).(y->x): the amount of water
    appearing at x.  A single edge of magnitude s gives -s at its left
    endpoint and +s at its right one; zero exactly when the node law holds."""
    acc = 0
    for e, orient in incident_edges(x, f.d):
        v = f.values.get(e)
        if v:
            # f(e).(vector y->x) * n = -orient * s(e)
            acc += -orient * v
    return acc


@dataclass
class AdmissibilityReport:
    inside: bool
    capacity: bool
    node_law: bool
    bad_support: list
    bad_capacity: list
    bad_vertices: list

    @property
    def admissible(self):
        return self.inside and self.capacity and self.node_law


def admissibility_report(f: Stream, t, L) -> AdmissibilityReport:
    """Three verdicts for f against a LatticeDomain: support inside
    Omega_n^2 minus (Gamma_n^1 u Gamma_n^2)^2, capacity bound, node law off
    the terminals."""
    terminals = L.gamma1 | L.gamma2
    allowed = set()
    for e in L.edges:
        if not (e.x in terminals and e.right() in terminals):
            allowed.add(e)
    bad_support = [e for e in f.values if e not in allowed]
    bad_capacity = [e for e in f.values if abs(f.values[e]) > t.get(e, 0)]
    bad_vertices = []
    for x in sorted(L.omega - terminals):
        if divergence_at(f, x) != 0:
            bad_vertices.append(x)
    return AdmissibilityReport(
        inside=not bad_support,
        capacity=not bad_capacity,
        node_law=not bad_vertices,
        bad_support=bad_support,
        bad_capacity=bad_capacity,
        bad_vertices=bad_vertices,
    )


def admissibility_region_report(f: Stream, t, region) -> AdmissibilityReport:
    """S_n(C) verdicts: capacity only for edges with left endpoint in C, node
    law only at vertices x with every x - e_i/n in C."""
    n, d = f.n, f.d
    bad_capacity = []
    for e, v in f.values.items():
        if region.contains_vertex(e.x, n) and abs(v) > t.get(e, 0):
            bad_capacity.append(e)
    verts = set()
    for e in f.values:
        verts.add(e.x)
        verts.add(e.right())
    bad_vertices = []
    for x in sorted(verts):
        if not region.contains_vertex(x, n):
            continue
        interior = True
        for j in range(d):
            y = list(x)
            y[j] -= 1
            if not region.contains_vertex(tuple(y), n):
                interior = False
                break
        if interior and divergence_at(f, x) != 0:
            bad_vertices.append(x)
    return AdmissibilityReport(
        inside=True,
        capacity=not bad_capacity,
        node_law=not bad_vertices,
        bad_support=[],
        bad_capacity=bad_capacity,
        bad_vertices=bad_vertices,
    )


def vector_measure(f: Stream):
    """The atomic measure mu_n(f) = (1/n^d) sum f(e) delta_{c(e)}."""
    from .measure import VectorMeasure

    scale = Fraction(1, f.n**f.d)
    atoms = []
    for e, v in sorted(f.values.items()):
        w = [0] * f.d
        w[e.axis] = v * scale if isinstance(v, Fraction) else v * float(scale)
        atoms.append((e.midpoint(f.n), tuple(w)))
    return VectorMeasure(d=f.d, atoms=tuple(atoms))


def flow_value(f: Stream, L) -> object:
    """Water entering Omega_n through Gamma_n^1: sum over x in Gamma_n^1 and
    neighbours y in Omega_n of n f(e).(x->y)."""
    acc = 0
    for x in L.gamma1:
        for e, orient in incident_edges(x, f.d):
            v = f.values.get(e)
            if not v:
                continue
            other = e.right() if orient > 0 else e.x
            if other in L.omega:
                acc += orient * v
    return acc


def face_flux(f: Stream, face, axis, sign) -> object:
    """psi_axis^sign(f, A): signed stream intensity through the face in the
    +e_axis direction."""
    from .geometry import boundary_edge_set

    acc = 0
    for e in boundary_edge_set(axis, sign, face, f.n):
        v = f.values.get(e)
        if v:
            acc += v
    return acc


def constant_stream(b, vec, n, damping=1) -> Stream:
    """The discretized version of the constant field vec restricted to the
    half-open box b: every edge with left endpoint in b carries
    damping * vec[axis].  Face fluxes through every mesoscopic cell of the box
    boundary come out exactly proportional to the cell area."""
    d = len(b)
    f = Stream(d, n)
    ranges = []
    for lo, hi in b:
        ranges.append(range(int((lo * n).__ceil__()), int(((hi * n).__ceil__()) )))
    from itertools import product as iproduct

    for coords in iproduct(*ranges):
        for j in range(d):
            val = damping * vec[j]
            if val != 0:
                f.values[EdgeId(tuple(coords), j)] = val
    return f


def plaquette(e: EdgeId, n):
    """Dual plaquette of the edge: the (d-1)-box of side 1/n orthogonal to the
    edge, centered at the edge midpoint (degenerate along the edge axis)."""
    mid = e.midpoint(n)
    h = Fraction(1, 2 * n)
    out = []
    for j, c in enumerate(mid):
        if j == e.axis:
            out.append((c, c))
        else:
            out.append((c - h, c + h))
    return tuple(out)


def _box_intersection_area(face, region_boxes):
    """(d-1)-volume of face ∩ union of closed boxes; face degenerate on one
    axis.  Boxes are assumed pairwise disjoint as regions."""
    ax = face_axis(face)
    total = Fraction(0)
    c = face[ax][0]
    for b in region_boxes:
        if not (b[ax][0] <= c <= b[ax][1]):
            continue
        a = Fraction(1)
        for j, (lo, hi) in enumerate(face):
            if j == ax:
                continue
            l = max(lo, b[j][0])
            h = min(hi, b[j][1])
            if h <= l:
                a = Fraction(0)
                break
            a *= h - l
        total += a
    return total


def discretize_field(sigma, region, n, damping=1) -> Stream:
    """Discretize a piecewise-constant field: s(e) = damping * n^{d-1} *
    integral of sigma.e_axis over the dual plaquette, for edges whose
    plaquette sits inside the region; exact rational box intersections."""
    from .continuous import ContinuousField

    if not isinstance(sigma, ContinuousField):
        raise TypeError("sigma must be a ContinuousField on a rational box mesh")
    d = sigma.d
    f = Stream(d, n)
    if region.boxes is None:
        raise ValueError("discretize_field needs a box-union region")
    # candidate edges: left endpoints within the region bounding box, padded
    from .capacities import region_edges

    for e in region_edges(region, n, d=d):
        p = plaquette(e, n)
        # plaquette must sit inside the (closure of the) region
        area_in = _box_intersection_area(p, region.boxes)
        full = Fraction(1, n ** (d - 1))
        if area_in != full:
            continue
        acc = Fraction(0)
        for cell, value in sigma.cells:
            a = _box_intersection_area(p, (cell,))
            if a:
                acc += a * value[e.axis]
        val = damping * (n ** (d - 1)) * acc
        if val != 0:
            f.values[e] = val
    return f


def transform(f: Stream, perm=None, flips=None, offset=None, n=None) -> Stream:
    """Push a stream through an axis permutation, per-axis reflections and an
    integer translation (all at the stored integer scale).

    perm maps source axis j to target axis perm[j].  flips[k] reflects target
    coordinate k via c -> -1 - c (which maps a half-open box onto a half-open
    box); the scalar of an edge along a flipped axis changes sign.
    """
    d = f.d
    perm = perm or list(range(d))
    flips = flips or [False] * d
    offset = offset or [0] * d
    out = Stream(d, n or f.n)
    for e, v in f.values.items():
        tgt = [0] * d
        for j, c in enumerate(e.x):
            k = perm[j]
            tgt[k] = (-1 - c) if flips[k] else c
        k = perm[e.axis]
        val = v
        if flips[k]:
            # edge [c, c+1] maps to [-2-c, -1-c]; left endpoint shifts
            tgt[k] -= 1
            val = -v
        tgt = [tgt[k] + offset[k] for k in range(d)]
        out.add(EdgeId(tuple(tgt), k), val)
    return out


def rescale_stream(f: Stream, x, n: int) -> Stream:
    """Pushforward under the homothety pi_{x,n0/n}(y) = (n0/n) y + x, which
    maps the scale-n0 lattice onto the scale-n one edge-for-edge.  x is a
    point of Z^d/n given in integer coordinates at scale n."""
    n0 = f.n
    if n0 > n:
        raise ValueError("rescale only refines: need n0 <= n")
    out = Stream(f.d, n)
    for e, v in f.values.items():
        tgt = tuple(c + xo for c, xo in zip(e.x, x))
        out.values[EdgeId(tgt, e.axis)] = v
    return out


def dump_stream(f: Stream) -> str:
    """Bit-exact text format: header 'd n', then 'x1 ... xd axis value'."""
    from .capacities import value_repr

    lines = [f"{f.d} {f.n}"]
    for e in sorted(f.values):
        lines.append(" ".join(str(c) for c in e.x) + f" {e.axis} {value_repr(f.values[e])}")
    return "\n".join(lines) + "\n"


def load_stream(text) -> Stream:
    from .capacities import parse_value

    lines = text.strip().splitlines()
    d, n = (int(tok) for tok in lines[0].split())
    f = Stream(d, n)
    for line in lines[1:]:
        parts = line.split()
        coords = tuple(int(c) for c in parts[:d])
        f.values[EdgeId(coords, int(parts[d]))] = parse_value(parts[d + 1])
    return f

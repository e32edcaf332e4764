"""Exact lattice geometry: domains, cylinders, boundary edge sets, face partitions.

All vertices live on the rescaled lattice Z^d/n and are stored as integer
coordinate tuples at scale n (the point p corresponds to the tuple n*p).
Region corners are Fractions, so every membership test used by the
discretization is an exact rational comparison.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product

from typing import NamedTuple


def frac(x) -> Fraction:
    """Coerce ints, strings like '1/2', floats and Fractions to Fraction."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10**12)
    return Fraction(x)


class EdgeId(NamedTuple):
    """Lattice edge <x, x + e_axis/n>, stored by its left endpoint.

    ``x`` holds integer coordinates at scale n.  The canonical orientation is
    always +e_axis; an edge belongs to a set C when x/n lies in C.
    """

    x: tuple
    axis: int

    def right(self):
        y = list(self.x)
        y[self.axis] += 1
        return tuple(y)

    def midpoint(self, n):
        # rational point in R^d
        return tuple(
            Fraction(c) / n + (Fraction(1, 2 * n) if j == self.axis else 0)
            for j, c in enumerate(self.x)
        )


# A box is a tuple of (lo, hi) Fraction pairs, one per axis, read half-open
# [lo, hi) unless stated otherwise.  A face is a box degenerate on one axis.


def box(*bounds) -> tuple:
    return tuple((frac(lo), frac(hi)) for lo, hi in bounds)


def box_volume(b) -> Fraction:
    v = Fraction(1)
    for lo, hi in b:
        v *= hi - lo
    return v


def face_axis(face) -> int:
    """Axis on which the face is degenerate (lo == hi)."""
    axes = [j for j, (lo, hi) in enumerate(face) if lo == hi]
    if len(axes) != 1:
        raise ValueError("face must be degenerate on exactly one axis")
    return axes[0]


def face_area(face) -> Fraction:
    a = Fraction(1)
    for lo, hi in face:
        if hi != lo:
            a *= hi - lo
    return a


def unit_cube(d) -> tuple:
    """The half-open cube [-1/2, 1/2)^d centered at the origin."""
    h = Fraction(1, 2)
    return tuple((-h, h) for _ in range(d))


def cube_face(d, axis, sign) -> tuple:
    """Face of the unit cube orthogonal to e_axis on side ``sign`` (+1/-1)."""
    h = Fraction(1, 2)
    c = h if sign > 0 else -h
    return tuple((c, c) if j == axis else (-h, h) for j in range(d))


def _interval_gap(t: Fraction, lo: Fraction, hi: Fraction) -> Fraction:
    if t < lo:
        return lo - t
    if t > hi:
        return t - hi
    return Fraction(0)


def dist_inf_to_box(p, b) -> Fraction:
    """L-infinity distance from rational point p to the (closure of) box b."""
    return max(_interval_gap(p[j], lo, hi) for j, (lo, hi) in enumerate(b))


def dist_inf_to_union(p, boxes) -> Fraction:
    return min(dist_inf_to_box(p, b) for b in boxes)


@dataclass(frozen=True)
class DomainSpec:
    """Domain (Omega, Gamma^1, Gamma^2): a finite union of open rational axis
    boxes with source and sink given as unions of axis-aligned boundary faces.
    """

    d: int
    boxes: tuple
    source: tuple  # faces (degenerate boxes)
    sink: tuple

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("dimension must be >= 2")
        for b in self.boxes:
            if len(b) != self.d or any(lo >= hi for lo, hi in b):
                raise ValueError("domain boxes must be non-degenerate and d-dimensional")
        for f in list(self.source) + list(self.sink):
            face_axis(f)
        # positive separation between source and sink
        for f in self.source:
            for g in self.sink:
                if _faces_touch(f, g):
                    raise ValueError("source and sink must have positive separation")

    def contains(self, p) -> bool:
        return any(all(lo < p[j] < hi for j, (lo, hi) in enumerate(b)) for b in self.boxes)


def _faces_touch(f, g) -> bool:
    # closed hulls intersect?
    for (alo, ahi), (blo, bhi) in zip(f, g):
        if ahi < blo or bhi < alo:
            return False
    return True


def unit_square_domain() -> DomainSpec:
    """(0,1)^2 with source {0} x (0,1) and sink {1} x (0,1)."""
    one = Fraction(1)
    return DomainSpec(
        d=2,
        boxes=(box((0, 1), (0, 1)),),
        source=(((Fraction(0), Fraction(0)), (Fraction(0), one)),),
        sink=(((one, one), (Fraction(0), one)),),
    )


def unit_box_domain(d, axis=0) -> DomainSpec:
    """(0,1)^d with source/sink the two faces orthogonal to e_axis."""
    zero, one = Fraction(0), Fraction(1)
    b = tuple((zero, one) for _ in range(d))
    src = tuple((zero, zero) if j == axis else (zero, one) for j in range(d))
    snk = tuple((one, one) if j == axis else (zero, one) for j in range(d))
    return DomainSpec(d=d, boxes=(b,), source=(src,), sink=(snk,))


@dataclass(frozen=True)
class LatticeDomain:
    """Discretization of a DomainSpec at scale n.

    Vertex sets are frozensets of integer tuples at scale n.  ``edges`` holds
    every lattice edge with both endpoints in omega; ``active_edges`` drops the
    edges with both endpoints in gamma1 | gamma2, which admissible streams must
    leave at zero.
    """

    spec: DomainSpec
    n: int
    omega: frozenset
    gamma: frozenset
    gamma1: frozenset
    gamma2: frozenset
    edges: tuple = field(repr=False)

    @property
    def d(self):
        return self.spec.d

    @property
    def active_edges(self):
        terminals = self.gamma1 | self.gamma2
        return tuple(
            e for e in self.edges if not (e.x in terminals and e.right() in terminals)
        )

    def point(self, v):
        return tuple(Fraction(c, self.n) for c in v)


def _bounding_ints(boxes, n, pad=1):
    d = len(boxes[0])
    lo, hi = [], []
    for j in range(d):
        lo.append(min(b[j][0] for b in boxes))
        hi.append(max(b[j][1] for b in boxes))
    lo_i = [int((l * n).__floor__()) - pad for l in lo]
    hi_i = [int((h * n).__ceil__()) + pad for h in hi]
    return lo_i, hi_i


def discretize_domain(spec: DomainSpec, n: int) -> LatticeDomain:
    """Build Omega_n, Gamma_n and Gamma_n^i by exact rational comparisons.

    Omega_n = {x in Z^d/n : d_inf(x, Omega) < 1/n}; Gamma_n collects the
    vertices of Omega_n with a lattice neighbour outside; Gamma_n^i keeps the
    Gamma_n vertices within 1/n of Gamma^i but not within 1/n of the other
    terminal.
    """
    if n < 1:
        raise ValueError("scale n must be >= 1")
    d = spec.d
    lo, hi = _bounding_ints(spec.boxes, n)
    thr = Fraction(1, n)
    omega = set()
    for coords in product(*(range(l, h + 1) for l, h in zip(lo, hi))):
        p = tuple(Fraction(c, n) for c in coords)
        if dist_inf_to_union(p, spec.boxes) < thr:
            omega.add(coords)
    if not omega:
        raise ValueError("empty discretization: n too small for the region")

    def neighbors(v):
        for j in range(d):
            for s in (1, -1):
                w = list(v)
                w[j] += s
                yield tuple(w)

    gamma = {v for v in omega if any(w not in omega for w in neighbors(v))}
    gamma1, gamma2 = set(), set()
    for v in gamma:
        p = tuple(Fraction(c, n) for c in v)
        d1 = dist_inf_to_union(p, spec.source)
        d2 = dist_inf_to_union(p, spec.sink)
        if d1 < thr and d2 >= thr:
            gamma1.add(v)
        elif d2 < thr and d1 >= thr:
            gamma2.add(v)

    edges = []
    for v in sorted(omega):
        for j in range(d):
            w = list(v)
            w[j] += 1
            if tuple(w) in omega:
                edges.append(EdgeId(v, j))
    return LatticeDomain(
        spec=spec,
        n=n,
        omega=frozenset(omega),
        gamma=frozenset(gamma),
        gamma1=frozenset(gamma1),
        gamma2=frozenset(gamma2),
        edges=tuple(edges),
    )


# ---------------------------------------------------------------------------
# Regions and cylinders


class Region:
    """Point-membership region backed by exact rational boxes, or a cylinder.

    Axis-direction cylinders are evaluated exactly; tilted ones fall back to
    floating point with ``tol``.
    """

    def __init__(self, boxes=None, cylinder=None, tol=1e-9):
        if (boxes is None) == (cylinder is None):
            raise ValueError("pass exactly one of boxes / cylinder")
        self.boxes = tuple(boxes) if boxes is not None else None
        self.cylinder = cylinder
        self.tol = tol

    @classmethod
    def from_box(cls, b):
        return cls(boxes=(b,))

    @property
    def exact(self):
        if self.boxes is not None:
            return True
        return self.cylinder.axis is not None

    def contains(self, p) -> bool:
        """Half-open membership for boxes; closed membership for cylinders."""
        if self.boxes is not None:
            return any(
                all(lo <= p[j] < hi for j, (lo, hi) in enumerate(b)) for b in self.boxes
            )
        return self.cylinder.contains(p)

    def lattice_vertices(self, n):
        if self.boxes is not None:
            lo, hi = _bounding_ints(self.boxes, n)
        else:
            lo, hi = self.cylinder.bounding_ints(n)
        out = []
        for coords in product(*(range(l, h + 1) for l, h in zip(lo, hi))):
            p = tuple(Fraction(c, n) for c in coords)
            if self.contains(p):
                out.append(coords)
        return out

    def contains_vertex(self, v, n) -> bool:
        return self.contains(tuple(Fraction(c, n) for c in v))


class Cylinder:
    """cyl(A, h, v): two-sided when v is normal to A, one-sided otherwise.

    The base A is a degenerate rational box; its non-degenerate extents are
    read half-open so that adjacent cylinders tile without overlap.
    """

    def __init__(self, base, h, v, two_sided=True, tol=1e-9):
        self.base = base
        self.h = frac(h)
        if self.h <= 0:
            raise ValueError("cylinder height must be positive")
        if any(lo == hi for j, (lo, hi) in enumerate(base) if j != face_axis(base)):
            raise ValueError("degenerate base")
        self.two_sided = two_sided
        self.tol = tol
        self.v = tuple(v)
        self.axis = None
        self.sign = 0
        nz = [(j, c) for j, c in enumerate(v) if c != 0]
        if len(nz) == 1 and abs(nz[0][1]) == 1 and nz[0][0] == face_axis(base):
            self.axis, self.sign = nz[0][0], (1 if nz[0][1] > 0 else -1)

    @property
    def d(self):
        return len(self.base)

    def center(self):
        return tuple((lo + hi) / 2 for lo, hi in self.base)

    def _axis_interval(self):
        c = self.base[self.axis][0]
        if self.two_sided:
            return c - self.h, c + self.h
        if self.sign > 0:
            return c, c + self.h
        return c - self.h, c

    def contains(self, p) -> bool:
        if self.axis is not None:
            lo, hi = self._axis_interval()
            if not (lo <= p[self.axis] <= hi):
                return False
            return all(
                blo <= p[j] < bhi
                for j, (blo, bhi) in enumerate(self.base)
                if j != self.axis
            )
        # tilted: decompose p = q + t v with q in the base plane x_ax = c
        ax = face_axis(self.base)
        vf = [float(c) for c in self.v]
        if vf[ax] == 0:
            raise ValueError("direction parallel to the base plane")
        t = (float(p[ax]) - float(self.base[ax][0])) / vf[ax]
        lo = -float(self.h) if self.two_sided else 0.0
        if not (lo - self.tol <= t <= float(self.h) + self.tol):
            return False
        q = [float(p[j]) - t * vf[j] for j in range(self.d)]
        for j, (blo, bhi) in enumerate(self.base):
            if j == ax:
                continue
            if not (float(blo) - self.tol <= q[j] <= float(bhi) + self.tol):
                return False
        return True

    def bounding_ints(self, n):
        los, his = [], []
        for j in range(self.d):
            blo, bhi = self.base[j]
            ext = abs(float(self.v[j])) * float(self.h)
            los.append(int((float(blo) - ext) * n) - 2)
            his.append(int((float(bhi) + ext) * n) + 2)
        return los, his


def cylinder_sets(base, h, v, n=1, two_sided=True):
    """Region and the discretized vertex sets (T, B, T', B') of cyl(A, h, v).

    T/B are the vertices with an edge leaving the cylinder through the shifted
    base A + hv (resp. A - hv); T'/B' split every boundary vertex by the sign
    of (x - z).v where z is the center of A, vertices on the mid-plane
    excluded.
    """
    cyl = Cylinder(base, h, v, two_sided=two_sided)
    region = Region(cylinder=cyl)
    verts = set(region.lattice_vertices(n))

    def neighbors(x):
        for j in range(cyl.d):
            for s in (1, -1):
                y = list(x)
                y[j] += s
                yield tuple(y)

    if cyl.axis is None:
        raise NotImplementedError("discretized top/bottom sets require an axis direction")
    ax = cyl.axis
    lo, hi = cyl._axis_interval()
    if cyl.two_sided:
        top_val, bot_val = (hi, lo) if cyl.sign > 0 else (lo, hi)
    else:
        c = cyl.base[ax][0]
        top_val, bot_val = (hi if cyl.sign > 0 else lo), c
    z = cyl.center()
    top, bottom, top_half, bot_half = set(), set(), set(), set()
    for x in verts:
        outs = [y for y in neighbors(x) if y not in verts]
        if not outs:
            continue
        p = tuple(Fraction(c, n) for c in x)
        # T/B: the edge to the outside must cross the shifted base plane
        for y in outs:
            if y[ax] != x[ax]:
                seg = sorted((Fraction(x[ax], n), Fraction(y[ax], n)))
                if seg[0] <= top_val <= seg[1]:
                    top.add(x)
                if seg[0] <= bot_val <= seg[1]:
                    bottom.add(x)
        s = (p[ax] - z[ax]) * cyl.sign
        if s > 0:
            top_half.add(x)
        elif s < 0:
            bot_half.add(x)
    return region, frozenset(top), frozenset(bottom), frozenset(top_half), frozenset(bot_half)


def boundary_edge_set(axis, sign, face, n):
    """E_n^{axis,+}[A] or E_n^{axis,-}[A]: edges whose half-open segment
    (x, x+e/n] (resp. (x-e/n, x]) meets the face A.

    For A inside the minus face of a cube this returns only edges whose left
    endpoint lies in the cube, matching the left-endpoint convention.
    """
    if face_axis(face) != axis:
        raise ValueError("face must be orthogonal to the given axis")
    c = face[axis][0]
    cn = c * n
    if sign > 0:
        # x_axis < c*n <= x_axis + 1
        if cn.denominator == 1:
            xa = int(cn) - 1
        else:
            xa = int(cn.__floor__())
    else:
        # x_axis <= c*n < x_axis + 1
        if cn.denominator == 1:
            xa = int(cn)
        else:
            xa = int(cn.__floor__())
    out = []
    ranges = []
    for j, (lo, hi) in enumerate(face):
        if j == axis:
            continue
        lo_i = int((lo * n).__ceil__())
        hi_i = int((hi * n).__ceil__())  # half-open [lo, hi)
        ranges.append(range(lo_i, hi_i))
    for rest in product(*ranges):
        coords = list(rest)
        coords.insert(axis, xa)
        out.append(EdgeId(tuple(coords), axis))
    return out


def face_partition(d, axis, sign, m):
    """Partition the cube face C_axis^sign into m^(d-1) half-open cells of
    side 1/m, each of (d-1)-measure 1/m^(d-1)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    h = Fraction(1, 2)
    c = h if sign > 0 else -h
    cells = []
    for offs in product(range(m), repeat=d - 1):
        cell = []
        it = iter(offs)
        for j in range(d):
            if j == axis:
                cell.append((c, c))
            else:
                a = next(it)
                lo = -h + Fraction(a, m)
                cell.append((lo, lo + Fraction(1, m)))
        cells.append(tuple(cell))
    return cells


def sparse_edge_set(K, region: Region, n, d=None):
    """E_K^d intersected with the region: axis-0 edges on the K-sublattice in
    the transverse coordinates, plus the transverse rail edges joining
    K-neighbours of the sublattice."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if d is None:
        d = len(region.boxes[0]) if region.boxes is not None else region.cylinder.d
    out = []
    for v in region.lattice_vertices(n):
        for j in range(d):
            if j == 0:
                if all(v[k] % K == 0 for k in range(1, d)):
                    out.append(EdgeId(tuple(v), j))
            else:
                if all(v[k] % K == 0 for k in range(1, d) if k != j):
                    out.append(EdgeId(tuple(v), j))
    return out


def sparse_edge_count_bound(d, n, K):
    """Paper bound |E_K^d in [0,n) x [1,n]^{d-1}| <= 3d n^d / K^{d-2}."""
    return Fraction(3 * d * n**d, K ** (d - 2))


def dump_vertex_set(vertices) -> str:
    """Sorted integer-coordinate text list, one vertex per line."""
    return "\n".join(" ".join(str(c) for c in v) for v in sorted(vertices)) + "\n"


def load_vertex_set(text):
    return frozenset(
        tuple(int(c) for c in line.split()) for line in text.strip().splitlines()
    )

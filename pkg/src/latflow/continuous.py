"""Piecewise-constant continuous fields: boundary flow, divergence checks,
mollification and the rate integral."""

import math
from dataclasses import dataclass
from fractions import Fraction

from .geometry import box_volume, face_axis, frac


@dataclass(frozen=True)
class ContinuousField:
    """Constant R^d value per rational mesh cell, zero outside the mesh.

    Cells must have pairwise disjoint interiors; the component bound M caps
    |value . e_i| per cell.
    """

    d: int
    cells: tuple  # ((box, value), ...)
    bound: Fraction = None

    def __post_init__(self):
        for b, v in self.cells:
            if len(b) != self.d or len(v) != self.d:
                raise ValueError("cell box/value dimension mismatch")
            if self.bound is not None and any(abs(c) > self.bound for c in v):
                raise ValueError("cell value exceeds the component bound")

    @classmethod
    def constant(cls, b, value, bound=None):
        return cls(
            d=len(b),
            cells=((tuple((frac(lo), frac(hi)) for lo, hi in b), tuple(frac(c) for c in value)),),
            bound=bound,
        )

    def value_at(self, p):
        for b, v in self.cells:
            if all(lo <= c < hi for c, (lo, hi) in zip(p, b)):
                return v
        return tuple(Fraction(0) for _ in range(self.d))

    def l1_distance(self, other):
        """Exact L1 distance to another field on the joint mesh arrangement."""
        cuts = []
        for j in range(self.d):
            vals = set()
            for b, _ in list(self.cells) + list(other.cells):
                vals.add(b[j][0])
                vals.add(b[j][1])
            cuts.append(sorted(vals))
        total = Fraction(0)
        from itertools import product

        for idx in product(*(range(len(c) - 1) for c in cuts)):
            lows = [cuts[j][idx[j]] for j in range(self.d)]
            highs = [cuts[j][idx[j] + 1] for j in range(self.d)]
            vol = Fraction(1)
            for lo, hi in zip(lows, highs):
                vol *= hi - lo
            if vol == 0:
                continue
            mid = [(lo + hi) / 2 for lo, hi in zip(lows, highs)]
            a = self.value_at(mid)
            b = other.value_at(mid)
            diff = math.sqrt(sum(float(x - y) ** 2 for x, y in zip(a, b)))
            total += Fraction(diff).limit_denominator(10**12) * vol
        return float(total)


def _face_overlap_area(face, b, axis):
    """(d-1)-area of the face against the closed box b (face coordinate must
    lie on the box boundary interval)."""
    c = face[axis][0]
    if not (b[axis][0] <= c <= b[axis][1]):
        return Fraction(0)
    area = Fraction(1)
    for j, (lo, hi) in enumerate(face):
        if j == axis:
            continue
        l, h = max(lo, b[j][0]), min(hi, b[j][1])
        if h <= l:
            return Fraction(0)
        area *= h - l
    return area


def _outward_sign(face, boxes):
    ax = face_axis(face)
    c = face[ax][0]
    for b in boxes:
        if _face_overlap_area(face, b, ax) > 0:
            if c == b[ax][0]:
                return -1
            if c == b[ax][1]:
                return 1
    raise ValueError("face does not lie on the domain boundary")


def flow_cont(sigma: ContinuousField, domain) -> Fraction:
    """flow^cont = - integral over Gamma^1 of sigma . n_Omega dH^{d-1}; exact
    for box meshes (face-area weighted boundary cell values)."""
    total = Fraction(0)
    for face in domain.source:
        ax = face_axis(face)
        sign = _outward_sign(face, domain.boxes)
        for b, v in sigma.cells:
            # the cell must touch the face from inside the domain
            if sign > 0 and b[ax][1] != face[ax][0]:
                continue
            if sign < 0 and b[ax][0] != face[ax][0]:
                continue
            area = _face_overlap_area(face, b, ax)
            if area:
                total += -sign * v[ax] * area
    return total


@dataclass
class DivergenceReport:
    mesh_balanced: bool
    lateral_ok: bool
    max_interface_jump: float
    max_lateral_flux: float
    bad_interfaces: list
    bad_boundary: list

    @property
    def ok(self):
        return self.mesh_balanced and self.lateral_ok


def check_divergence_free(sigma: ContinuousField, domain, tol=0) -> DivergenceReport:
    """Mesh-level conservation: normal continuity across every interior cell
    interface (the distributional div-free condition for piecewise-constant
    fields) and zero normal trace on the boundary away from source and sink."""
    cells = sigma.cells
    d = sigma.d
    bad_if = []
    max_jump = 0.0
    # interfaces between cells
    for i in range(len(cells)):
        for k in range(i + 1, len(cells)):
            bi, vi = cells[i]
            bk, vk = cells[k]
            for ax in range(d):
                for ci, ck in ((bi[ax][1], bk[ax][0]), (bi[ax][0], bk[ax][1])):
                    if ci != ck:
                        continue
                    face = tuple(
                        (ci, ci) if j == ax else
                        (max(bi[j][0], bk[j][0]), min(bi[j][1], bk[j][1]))
                        for j in range(d)
                    )
                    if any(hi <= lo for j, (lo, hi) in enumerate(face) if j != ax):
                        continue
                    jump = abs(float(vi[ax] - vk[ax]))
                    max_jump = max(max_jump, jump)
                    if jump > tol:
                        bad_if.append((i, k, ax, jump))
    # boundary faces of the domain minus source/sink
    bad_bd = []
    max_lat = 0.0
    terminal_faces = list(domain.source) + list(domain.sink)
    for b, v in cells:
        for ax in range(d):
            for side, coord in ((0, b[ax][0]), (1, b[ax][1])):
                face = tuple(
                    (coord, coord) if j == ax else b[j] for j in range(d)
                )
                # area on the domain boundary
                on_boundary = Fraction(0)
                for db in domain.boxes:
                    if coord == db[ax][0] or coord == db[ax][1]:
                        on_boundary = max(on_boundary, _face_overlap_area(face, db, ax))
                if on_boundary == 0:
                    continue
                covered = sum(
                    _faces_overlap_area(face, f, ax)
                    for f in terminal_faces
                    if face_axis(f) == ax and f[ax][0] == coord
                )
                lateral_area = on_boundary - covered
                if lateral_area > 0:
                    flux = abs(float(v[ax]))
                    max_lat = max(max_lat, flux)
                    if flux > tol:
                        bad_bd.append((tuple(face), flux))
    return DivergenceReport(
        mesh_balanced=not bad_if,
        lateral_ok=not bad_bd,
        max_interface_jump=max_jump,
        max_lateral_flux=max_lat,
        bad_interfaces=bad_if,
        bad_boundary=bad_bd,
    )


def _faces_overlap_area(face_a, face_b, ax):
    area = Fraction(1)
    for j in range(len(face_a)):
        if j == ax:
            continue
        l = max(face_a[j][0], face_b[j][0])
        h = min(face_a[j][1], face_b[j][1])
        if h <= l:
            return Fraction(0)
        area *= h - l
    return area


def mollifier_kernel(d, p, resolution=None):
    """Midpoint-rule discretization of K_p(x) = p^d eta(p x) with eta the
    normalized radial bump; weights are normalized on the same grid so that
    constants are preserved exactly."""
    if p < 1:
        raise ValueError("p must be >= 1")
    res = resolution or 4 * p
    step = Fraction(2, p * res)  # kernel support [-1/p, 1/p] per axis
    nodes = []
    weights = []
    from itertools import product

    for idx in product(range(res), repeat=d):
        y = [Fraction(-1, p) + step * (Fraction(1, 2) + i) for i in idx]
        r = math.sqrt(sum(float(c) ** 2 for c in y)) * p
        if r >= 1:
            continue
        w = math.exp(1.0 / (r - 1.0))
        nodes.append(tuple(y))
        weights.append(w)
    total = sum(weights)
    return nodes, [w / total for w in weights]


def mollify(sigma: ContinuousField, p: int, resolution=None) -> ContinuousField:
    """sigma * K_p sampled at the centers of a refined rational mesh of step
    1/(2p); values clipped to the field's component bound."""
    if p < 1:
        raise ValueError("p must be >= 1")
    d = sigma.d
    nodes, weights = mollifier_kernel(d, p, resolution)
    step = Fraction(1, 2 * p)
    los, his = [], []
    for j in range(d):
        lo = min(b[j][0] for b, _ in sigma.cells) - Fraction(1, p)
        hi = max(b[j][1] for b, _ in sigma.cells) + Fraction(1, p)
        los.append((lo / step).__floor__())
        his.append((hi / step).__ceil__())
    cells = []
    from itertools import product

    for idx in product(*(range(lo, hi) for lo, hi in zip(los, his))):
        center = [step * (Fraction(1, 2) + i) for i in idx]
        acc = [0.0] * d
        for y, w in zip(nodes, weights):
            v = sigma.value_at(tuple(c - yc for c, yc in zip(center, y)))
            for j in range(d):
                acc[j] += w * float(v[j])
        if all(abs(a) < 1e-15 for a in acc):
            continue
        if sigma.bound is not None:
            m = float(sigma.bound)
            acc = [max(-m, min(m, a)) for a in acc]
        cell_box = tuple((step * i, step * (i + 1)) for i in idx)
        cells.append((cell_box, tuple(acc)))
    return ContinuousField(d=d, cells=tuple(cells), bound=sigma.bound)


def rate_integral(sigma: ContinuousField, rate_fn) -> float:
    """Integral over the mesh of the elementary rate of the local value."""
    total = 0.0
    for b, v in sigma.cells:
        r = rate_fn(v)
        if r == float("inf"):
            return float("inf")
        total += float(r) * float(box_volume(b))
    return total

"""Stream decomposition, the mixing constructions, quantization, face
balancing and corridor gluing.

The mixing builders work on abstract boxes [0, m) x [1, r]^{d-1} of the unit
lattice (scale 1), with inputs on the column-0 edges and outputs on the
column-(m-1) edges; ``embed``/``transform`` place them inside concrete cubes.
All algorithms run unchanged on Fractions or floats.
"""

from fractions import Fraction
from math import isqrt

from .geometry import EdgeId, boundary_edge_set, face_area, face_partition
from .stream import Stream, divergence_at, incident_edges, transform

MATCH_TOL = 1e-12


def _is_exact(*vals):
    return all(isinstance(v, (int, Fraction)) for v in vals)


def _sums_match(a, b):
    if _is_exact(a, b):
        return a == b
    scale = max(abs(a), abs(b), 1.0)
    return abs(a - b) <= MATCH_TOL * scale


# ---------------------------------------------------------------------------
# Decomposition (residual peeling)


def decompose(f: Stream, L):
    """Split a stream obeying the node law off the terminals into weighted
    self-avoiding oriented paths with endpoints in Gamma_n^1 u Gamma_n^2.

    Returns a list of (vertex tuple path, weight); the weighted sum of unit
    path streams reproduces f exactly and every path edge is strictly aligned
    with the flow.
    """
    terminals = L.gamma1 | L.gamma2
    exact = all(_is_exact(v) for v in f.values.values())
    tol = 0 if exact else MATCH_TOL * float(max((abs(v) for v in f.values.values()), default=1))
    for x in sorted(L.omega - terminals):
        if abs(divergence_at(f, x)) > tol:
            raise ValueError(f"node law violated at interior vertex {x}")

    res = f.copy()
    paths = []

    def aligned_out(x):
        """Edges carrying flow out of x, lexicographic order."""
        out = []
        for e, orient in incident_edges(x, f.d):
            v = res.values.get(e)
            if v and v * orient > tol:
                y = e.right() if orient > 0 else e.x
                out.append((e, orient, y))
        out.sort(key=lambda t: (t[0].x, t[0].axis))
        return out

    def aligned_in(x):
        out = []
        for e, orient in incident_edges(x, f.d):
            v = res.values.get(e)
            if v and v * orient < -tol:
                y = e.right() if orient > 0 else e.x
                out.append((e, -orient, y))
        out.sort(key=lambda t: (t[0].x, t[0].axis))
        return out

    def walk(start, forward):
        """Self-avoiding walk along aligned residual edges from a terminal to
        another terminal; backtracking DFS, deterministic order."""
        nxt = aligned_out if forward else aligned_in
        stack = [(start, iter(nxt(start)))]
        on_path = {start}
        edges = []
        while stack:
            x, it = stack[-1]
            step = None
            for e, direction, y in it:
                if y in on_path:
                    continue
                step = (e, direction, y)
                break
            if step is None:
                stack.pop()
                if edges:
                    edges.pop()
                    on_path.discard(x)
                continue
            e, direction, y = step
            edges.append((e, direction))
            if y in terminals:
                return edges, y
            on_path.add(y)
            stack.append((y, iter(nxt(y))))
        raise ValueError("no terminal-to-terminal path found (dangling flux)")

    while True:
        pick = None
        for x in sorted(terminals):
            for e, orient in incident_edges(x, f.d):
                v = res.values.get(e)
                if not v or abs(v) <= tol:
                    continue
                other = e.right() if orient > 0 else e.x
                if other not in L.omega:
                    continue
                pick = (x, v * orient > 0)
                break
            if pick:
                break
        if pick is None:
            break
        x, forward = pick
        edges, end = walk(x, forward)
        if not forward:
            edges = [(e, d) for e, d in reversed(edges)]
            src = end
        else:
            src = x
        weight = min(res.values[e] * d for e, d in edges)
        verts = [src]
        for e, d in edges:
            verts.append(e.right() if d > 0 else e.x)
        for e, d in edges:
            res.add(e, -d * weight)
        paths.append((tuple(verts), weight))

    leftover = [e for e, v in res.values.items() if abs(v) > tol]
    if leftover:
        raise ValueError(
            "stream contains a circulation component; it cannot be written as "
            "boundary-to-boundary paths"
        )
    return paths


def path_stream(verts, weight, d, n) -> Stream:
    """Unit stream of an oriented vertex path, scaled by the weight."""
    f = Stream(d, n)
    for u, w in zip(verts, verts[1:]):
        diff = [b - a for a, b in zip(u, w)]
        axis = next(j for j, c in enumerate(diff) if c != 0)
        if diff[axis] == 1:
            f.add(EdgeId(tuple(u), axis), weight)
        elif diff[axis] == -1:
            f.add(EdgeId(tuple(w), axis), -weight)
        else:
            raise ValueError("path steps must be lattice edges")
    return f


def recompose(paths, d, n) -> Stream:
    f = Stream(d, n)
    for verts, weight in paths:
        for u, w in zip(verts, verts[1:]):
            diff = [b - a for a, b in zip(u, w)]
            axis = next(j for j, c in enumerate(diff) if c != 0)
            if diff[axis] == 1:
                f.add(EdgeId(tuple(u), axis), weight)
            else:
                f.add(EdgeId(tuple(w), axis), -weight)
    return f


# ---------------------------------------------------------------------------
# Mixing in dimension 2


def _mix2d_core(f_in, M, instrument=None):
    """Rerouting algorithm for nonnegative input sums.

    Rows j = 1..r, support [0, r) x [1, r]; inputs on the column-0 edges,
    uniform outputs (the mean) on the column-(r-1) edges.  Transfers for a
    deficit source i run along row i up to a source-specific column, move
    vertically there, and follow the receiving row to its output.
    """
    r = len(f_in)
    if any(abs(v) > M for v in f_in):
        raise ValueError("input magnitude exceeds the bound M")
    total = sum(f_in)
    if total < 0:
        raise ValueError("core mixer needs a nonnegative input sum")
    beta = total / r if not _is_exact(total) else Fraction(total, r)

    f = Stream(2, 1)
    for i in range(1, r + 1):
        v = min(f_in[i - 1], beta)
        if v != 0:
            for k in range(r):
                f.values[EdgeId((k, i), 0)] = v

    # transfer column per deficit source: n - i, except that a source at row r
    # borrows the (never used) column of the smallest non-deficit source.
    deficit = [i for i in range(1, r + 1) if f_in[i - 1] > beta]
    col = {}
    for i in deficit:
        if i < r:
            col[i] = r - i
        else:
            kstar = next(k for k in range(1, r + 1) if f_in[k - 1] <= beta)
            col[i] = r - kstar

    def in_val(i):
        return f.get(EdgeId((0, i), 0))

    def out_val(j):
        return f.get(EdgeId((r - 1, j), 0))

    gap = 0 if all(_is_exact(v) for v in f_in) else 1e-13 * float(max(abs(M), 1))
    while True:
        i = next(
            (i for i in range(1, r + 1) if abs(f_in[i - 1]) - abs(in_val(i)) > gap), None
        )
        if i is None:
            break
        j = next(j for j in range(1, r + 1) if beta - out_val(j) > gap)
        amount = min(f_in[i - 1] - in_val(i), beta - out_val(j))
        c = col[i]
        for k in range(c):
            f.add(EdgeId((k, i), 0), amount)
        if j > i:
            for k in range(i, j):
                f.add(EdgeId((c, k), 1), amount)
        else:
            for k in range(j, i):
                f.add(EdgeId((c, k), 1), -amount)
        for k in range(c, r):
            f.add(EdgeId((k, j), 0), amount)
        if instrument is not None:
            _check_mix2d_invariants(f, f_in, beta, col, r, M)
            instrument.append({e: v for e, v in f.values.items()})
    return f


def _check_mix2d_invariants(f, f_in, beta, col, r, M):
    """Proof invariants, assertable after every rerouting step: transfer
    columns carry verticals only for their deficit source and never more than
    the source's input edge; below-mean rows are non-decreasing along the
    flow, above-mean rows non-increasing."""
    used_cols = set(col.values())
    for c in range(r):
        vert = [abs(f.get(EdgeId((c, k), 1))) for k in range(1, r)]
        load = max(vert, default=0)
        if c not in used_cols:
            assert load == 0, f"column {c} must stay clear"
        else:
            i = next(i for i, cc in col.items() if cc == c)
            assert load <= abs(f.get(EdgeId((0, i), 0))), "vertical exceeds source input"
    for i in range(1, r + 1):
        row = [f.get(EdgeId((k, i), 0)) for k in range(r)]
        if f_in[i - 1] < beta:
            assert row[0] == f_in[i - 1]
            assert all(a <= b for a, b in zip(row, row[1:])), "below-mean row must be monotone"
            assert row[-1] <= beta
        elif f_in[i - 1] > beta:
            assert all(a >= b for a, b in zip(row, row[1:])), "above-mean row must be antitone"
            assert row[0] <= f_in[i - 1] and row[-1] >= beta
    assert all(abs(v) <= M for v in f.values.values())


def mix2d(f_in, M, instrument=None) -> Stream:
    """Two-dimensional mixing: reproduce the inputs on the column-0 edges and
    deliver their mean on every column-(r-1) edge, magnitudes bounded by M and
    node law away from the two boundary columns."""
    r = len(f_in)
    if r < 1:
        raise ValueError("need at least one input")
    if sum(f_in) >= 0:
        return _mix2d_core(list(f_in), M, instrument)
    g = _mix2d_core([-v for v in f_in], M, instrument)
    return g.scaled(-1)


# ---------------------------------------------------------------------------
# Mixing in dimension d


def _grid_keys(r, k):
    from itertools import product

    return list(product(range(1, r + 1), repeat=k))


def _infer_grid(f_in):
    keys = list(f_in)
    k = len(keys[0])
    r = max(max(key) for key in keys)
    if sorted(keys) != _grid_keys(r, k):
        raise ValueError("inputs must cover the full index grid {1..r}^(d-1)")
    return r, k


def embed(f: Stream, d, axis_map, pinned=None, offset=None, n=None) -> Stream:
    """Place an abstract lower-dimensional stream into d dimensions.

    axis_map[j] is the target axis of source axis j; pinned fixes the
    remaining coordinates; offset translates afterwards; n overrides the
    lattice scale of the result.
    """
    pinned = pinned or {}
    offset = offset or [0] * d
    out = Stream(d, n or f.n)
    for e, v in f.values.items():
        coords = [None] * d
        for j, c in enumerate(e.x):
            coords[axis_map[j]] = c
        for ax, c in pinned.items():
            coords[ax] = c
        coords = [c + offset[k] for k, c in enumerate(coords)]
        out.add(EdgeId(tuple(coords), axis_map[e.axis]), v)
    return out


def _mix_uniform(d, r, f_in, M) -> Stream:
    """Mix to uniform outputs in [0, (d-1)r) x [1, r]^{d-1}; f_in keyed by
    {1..r}^{d-1} tuples."""
    if d == 2:
        return mix2d([f_in[(i,)] for i in range(1, r + 1)], M)
    total = Stream(d, 1)
    means = {}
    for i in range(1, r + 1):
        sub = {z: f_in[(i,) + z] for z in _grid_keys(r, d - 2)}
        s_i = _mix_uniform(d - 1, r, sub, M)
        # abstract axes (0, 1..d-2) -> (0, 2..d-1), row coordinate pinned on axis 1
        amap = [0] + [k + 1 for k in range(1, d - 1)]
        total = total + embed(s_i, d, amap, pinned={1: i})
        vals = [f_in[(i,) + z] for z in _grid_keys(r, d - 2)]
        m = sum(vals)
        means[i] = Fraction(m, r ** (d - 2)) if _is_exact(m) else m / r ** (d - 2)
    for x in _grid_keys(r, d - 2):
        t_x = mix2d([means[i] for i in range(1, r + 1)], M)
        amap = [0, 1]
        pinned = {k + 2: x[k] for k in range(d - 2)}
        total = total + embed(t_x, d, amap, pinned=pinned, offset=[(d - 2) * r] + [0] * (d - 1))
    return total


def _straight_lines(d, profile, cols) -> Stream:
    f = Stream(d, 1)
    for y, v in profile.items():
        if v == 0:
            continue
        for k in cols:
            f.add(EdgeId((k,) + y, 0), v)
    return f


def mix(f_in, f_out, m, M) -> Stream:
    """General mixing: connect the input family to the output family inside
    [0, m) x [1, r]^{d-1}.

    Requires matched sums and m >= 2(d-1)r, or m >= (d-1)r when the outputs
    are uniform.  Inputs sit on the column-0 edges, outputs on the
    column-(m-1) edges; the node law holds away from those two columns.
    """
    r, k = _infer_grid(f_in)
    d = k + 1
    if sorted(f_out) != sorted(f_in):
        raise ValueError("output grid must match the input grid")
    if any(abs(v) > M for v in f_in.values()) or any(abs(v) > M for v in f_out.values()):
        raise ValueError("magnitude exceeds the bound M")
    s_in = sum(f_in.values())
    s_out = sum(f_out.values())
    if not _sums_match(s_in, s_out):
        raise ValueError("input and output sums do not match")
    mean = Fraction(s_in, r ** (d - 1)) if _is_exact(s_in) else s_in / r ** (d - 1)
    uniform = all(_sums_match(v, mean) for v in f_out.values())
    L = (d - 1) * r
    need = L if uniform else 2 * L
    if m < need:
        raise ValueError(f"corridor too short: need m >= {need}, got {m}")

    fi = _mix_uniform(d, r, f_in, M)
    if uniform:
        g = fi
        if m > L:
            g = g + _straight_lines(d, f_out, range(L, m))
        return g

    fo = _mix_uniform(d, r, f_out, M)
    # reversed copy: reflect axis 0 and negate, so the f_out side feeds the
    # shared uniform seam at column L-1 and exposes f_out at column 2L-2
    rev = transform(fo, flips=[True] + [False] * (d - 1), offset=[2 * L] + [0] * (d - 1)).scaled(-1)
    g = fi + rev
    for y in _grid_keys(r, d - 1):
        seam = EdgeId((L - 1,) + y, 0)
        g.add(seam, -mean)  # both halves carry the seam edge; count it once
    if m > 2 * L - 1:
        g = g + _straight_lines(d, f_out, range(2 * L - 1, m))
    return g


# ---------------------------------------------------------------------------
# Sparse mixing


def sparse_c(d):
    """Smallest admissible sparsity constant: c_d = 2(d-1)."""
    return 2 * (d - 1)


def mix_sparse(f_in, f_out, K, M, n=None) -> Stream:
    """Mixing supported on the sparse edge set E_K^d: inputs and outputs are
    indexed by the K-sublattice points of {1..n}^{d-1}; the construction
    works on the coarse lattice and expands rails edge-for-edge."""
    keys = list(f_in)
    k = len(keys[0])
    d = k + 1
    if K < sparse_c(d):
        raise ValueError(f"K must be at least 2(d-1) = {sparse_c(d)}")
    if sorted(f_out) != sorted(keys):
        raise ValueError("output grid must match the input grid")
    if any(c % K != 0 or c < 1 for key in keys for c in key):
        raise ValueError("indices must be positive multiples of K")
    r0 = max(max(key) for key in keys) // K
    coarse_in = {tuple(c // K for c in key): v for key, v in f_in.items()}
    coarse_out = {tuple(c // K for c in key): v for key, v in f_out.items()}
    if sorted(coarse_in) != _grid_keys(r0, k):
        raise ValueError("indices must fill the K-sublattice grid")
    if n is None:
        n = K * r0
    if n < sparse_c(d) * r0:
        raise ValueError("width too small for sparse mixing")
    g = mix(coarse_in, coarse_out, n, M)
    out = Stream(d, 1)
    for e, v in g.values.items():
        if e.axis == 0:
            tgt = (e.x[0],) + tuple(K * c for c in e.x[1:])
            out.add(EdgeId(tgt, 0), v)
        else:
            # coarse transverse edge expands to K consecutive fine edges
            base = (e.x[0],) + tuple(K * c for c in e.x[1:])
            for step in range(K):
                tgt = list(base)
                tgt[e.axis] += step
                out.add(EdgeId(tuple(tgt), e.axis), v)
    return out


# ---------------------------------------------------------------------------
# Precise mixing


def _check_precise_conditions(f_in, r, k, M, eps):
    from itertools import product

    for level in range(k):
        for y in product(range(1, r + 1), repeat=level):
            vals = [f_in[y + x] for x in product(range(1, r + 1), repeat=k - level)]
            if sum(vals) >= 0:
                continue
            if max(vals) - min(vals) <= eps:
                continue
            raise ValueError(f"prefix condition fails at level {level}, prefix {y}")
    for v in f_in.values():
        if not (-M <= v <= eps):
            raise ValueError("inputs must lie in [-M, eps]")


def _mix_precise_2d(vals, M, eps) -> Stream:
    total = sum(vals)
    if total >= 0:
        return _mix2d_core(list(vals), max(M, eps), None)
    alpha = min(vals)
    g = _mix2d_core([v - alpha for v in vals], max(M, eps), None)
    r = len(vals)
    for i in range(1, r + 1):
        for kk in range(r):
            g.add(EdgeId((kk, i), 0), alpha)
    return g


def mix_precise(f_in, M, eps) -> Stream:
    """Mixing with a precise usage description: axis-0 edges stay in [-M, eps]
    and every transverse edge is bounded by eps; outputs are uniform at the
    mean.  Inputs must satisfy the nested prefix conditions, which are checked
    and reported by level."""
    r, k = _infer_grid(f_in)
    d = k + 1
    _check_precise_conditions(f_in, r, k, M, eps)
    if d == 2:
        return _mix_precise_2d([f_in[(i,)] for i in range(1, r + 1)], M, eps)
    total = Stream(d, 1)
    means = {}
    for i in range(1, r + 1):
        sub = {z: f_in[(i,) + z] for z in _grid_keys(r, d - 2)}
        s_i = mix_precise(sub, M, eps)
        amap = [0] + [kk + 1 for kk in range(1, d - 1)]
        total = total + embed(s_i, d, amap, pinned={1: i})
        m = sum(sub.values())
        means[i] = Fraction(m, r ** (d - 2)) if _is_exact(m) else m / r ** (d - 2)
    for x in _grid_keys(r, d - 2):
        t_x = _mix_precise_2d([means[i] for i in range(1, r + 1)], M, eps)
        total = total + embed(
            t_x, d, [0, 1], pinned={kk + 2: x[kk] for kk in range(d - 2)},
            offset=[(d - 2) * r] + [0] * (d - 1),
        )
    return total


# ---------------------------------------------------------------------------
# Quantization


def _sqrt_exact(x):
    if isinstance(x, (int, Fraction)):
        fx = Fraction(x)
        a, b = isqrt(fx.numerator), isqrt(fx.denominator)
        if a * a == fx.numerator and b * b == fx.denominator:
            return Fraction(a, b)
    return None


def quantize(t, eps):
    """proj(t, eps) = sign(t) sqrt(eps) floor(|t| / sqrt(eps)); snaps toward
    zero onto the sqrt(eps) grid, so |t - proj| <= sqrt(eps) and |proj| <= |t|."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    root = _sqrt_exact(eps)
    if root is None or isinstance(t, float):
        root = float(eps) ** 0.5
        t = float(t)
    sign = 1 if t >= 0 else -1
    steps = int(abs(t) / root)
    return sign * root * steps


# ---------------------------------------------------------------------------
# Face balancing (residual stream construction)


def balance_alpha(d):
    """Quantization exponent: alpha = 1 / (2(3d+1)); 1/14 in dimension 2."""
    return Fraction(1, 2 * (3 * d + 1))


def mesh_m(d, eps):
    """Mesoscopic face-partition scale m = floor(eps^-alpha)."""
    a = float(balance_alpha(d))
    return max(1, int(float(eps) ** (-a)))


def balance_K(d, eps, kappa=1.0):
    """Sparsity K = floor((1 / (2 kappa eps^{alpha/2}))^{1/(d-1)})."""
    a = float(balance_alpha(d))
    return int((1.0 / (2 * kappa * float(eps) ** (a / 2))) ** (1.0 / (d - 1)))


def cube_box(d, n):
    """Integer-coordinate extent of the unit cube [-1/2, 1/2)^d at scale n:
    coordinates c with -1/2 <= c/n < 1/2."""
    lo = -(n // 2)
    return lo, lo + n


def _sparse_coords(n, K):
    """Transverse sparse levels inside the cube, kept off the extreme planes
    so rail edges never cross a face."""
    lo, hi = cube_box(1, n)
    coords = [c for c in range(lo + 1, hi) if c % K == 0]
    if not coords:
        raise ValueError("K too large: no sparse levels inside the cube")
    return coords


def _face_cells(d, m, lattice_box=None, n=None):
    """Mesoscopic face cells keyed by (axis, sign, offsets); the default box
    is the centered unit cube, otherwise an integer-coordinate box at scale n."""
    from itertools import product as iproduct

    out = {}
    if lattice_box is None:
        for axis in range(d):
            for sign in (1, -1):
                cells = face_partition(d, axis, sign, m)
                for offs, cell in zip(iproduct(range(m), repeat=d - 1), cells):
                    out[(axis, sign, offs)] = cell
        return out
    for axis in range(d):
        for sign in (1, -1):
            c = Fraction(lattice_box[axis][1] if sign > 0 else lattice_box[axis][0], n)
            trans = [j for j in range(d) if j != axis]
            widths = {j: Fraction(lattice_box[j][1] - lattice_box[j][0], n * m) for j in trans}
            for offs in iproduct(range(m), repeat=d - 1):
                cell = []
                it = iter(offs)
                for j in range(d):
                    if j == axis:
                        cell.append((c, c))
                    else:
                        a = next(it)
                        lo = Fraction(lattice_box[j][0], n) + a * widths[j]
                        cell.append((lo, lo + widths[j]))
                out[(axis, sign, offs)] = tuple(cell)
    return out


def measure_face_fluxes(f: Stream, m, lattice_box=None):
    """psi_axis^sign(f, A) for every mesoscopic face cell, keyed by
    (axis, sign, cell offsets)."""
    from .stream import face_flux

    cells = _face_cells(f.d, m, lattice_box, f.n)
    return {key: face_flux(f, cell, key[0], key[1]) for key, cell in cells.items()}


def _cell_sparse_points(cell, axis, sign, n, K, sparse_levels):
    """V_A: left endpoints of the face-crossing edges whose transverse
    coordinates all lie on the sparse levels."""
    pts = []
    for e in boundary_edge_set(axis, sign, cell, n):
        if all(e.x[j] in sparse_levels for j in range(len(e.x)) if j != axis):
            pts.append(e.x)
    return pts


def _axis_sparse_mix(d, n, K, axis, entry_sign, inflow, outflow, M, interior_entry=False):
    """Sparse mix across the cube along ``axis``.

    inflow/outflow are profiles keyed by transverse coordinate tuples (the
    sparse points, coordinates of all axes except ``axis``); inflow enters at
    the entry_sign plane, outflow leaves at the opposite plane.  With
    interior_entry the entry column starts one layer inside the cube (used
    when a transfer path delivers the water there instead of the outside).
    """
    levels = _sparse_coords(n, K)
    level_index = {c: (a + 1) * K for a, c in enumerate(levels)}
    width = n - 1 if interior_entry else n

    def to_abstract(profile):
        out = {}
        for pt, v in profile.items():
            key = tuple(level_index[c] for c in pt)
            out[key] = out.get(key, 0) + v
        for key in _full_sparse_grid(len(levels), d - 1, K):
            out.setdefault(key, 0)
        return out

    g = mix_sparse(to_abstract(inflow), to_abstract(outflow), K, M, n=width)

    lo, hi = cube_box(1, n)
    trans_axes = [j for j in range(d) if j != axis]
    out = Stream(d, n)
    for e, v in g.values.items():
        coords = [0] * d
        for j, c in enumerate(e.x):
            if j == 0:
                continue
            coords[trans_axes[j - 1]] = levels[0] + (c - K)
        c0 = e.x[0]
        if entry_sign < 0:
            coords[axis] = lo + c0
            sign_flip = 1
        else:
            start = (hi - 1) if interior_entry else hi
            coords[axis] = (start - c0 - 1) if e.axis == 0 else (start - c0)
            sign_flip = -1 if e.axis == 0 else 1
        tgt_ax = axis if e.axis == 0 else trans_axes[e.axis - 1]
        out.add(EdgeId(tuple(coords), tgt_ax), sign_flip * v)
    return out


def _full_sparse_grid(count, k, K):
    from itertools import product as iproduct

    return [tuple((a + 1) * K for a in key) for key in iproduct(range(count), repeat=k)]


def _l_path(d, n, x, axis_i, sign_i, axis_j, delivery, weight) -> Stream:
    """L-shaped transfer path from the in-plane point x: run along axis_i from
    its face to the level t = x[axis_j], then along axis_j from t to the
    delivery coordinate.  The first step crosses the in-face, the delivery
    side stops before the opposite face."""
    f = Stream(d, n)
    lo, hi = cube_box(1, n)
    t = x[axis_j]

    def add_run(base, ax, frm, to, w):
        if frm == to:
            return
        step = 1 if to > frm else -1
        c = frm
        while c != to:
            left = min(c, c + step)
            coords = list(base)
            coords[ax] = left
            f.add(EdgeId(tuple(coords), ax), w if step > 0 else -w)
            c += step

    # axis_i run starts at the exempt plane vertex so its first edge is the
    # face-crossing edge of the in-face
    start = lo if sign_i < 0 else hi
    add_run(x, axis_i, start, t, weight)
    mid = list(x)
    mid[axis_i] = t
    add_run(mid, axis_j, t, delivery, weight)
    return f


def balance_faces(lam, beta, K, m, d, n, M=None, f=None) -> Stream:
    """Algorithm 1: build the residual stream whose face fluxes are exactly
    beta - lam on every mesoscopic face cell of the unit cube.

    lam/beta are keyed by (axis, sign, cell offsets) as produced by
    measure_face_fluxes.  Faces with zero net difference get a single sparse
    mix; surplus faces are paired with deficit faces through sparse mixes and
    disjoint transfer paths, at most (2d)^2 pairings.
    """
    cells = _face_cells(d, m)
    if sorted(lam) != sorted(cells) or sorted(beta) != sorted(cells):
        raise ValueError("lam and beta must cover every face cell")
    if f is not None:
        got = measure_face_fluxes(f, m)
        bad = [k for k in cells if got[k] != lam[k]]
        if bad:
            raise ValueError(f"lam disagrees with the stream's measured fluxes at {bad[0]}")
    total_minus = sum(beta[k] - lam[k] for k in cells if k[1] == -1)
    total_plus = sum(beta[k] - lam[k] for k in cells if k[1] == 1)
    if not _sums_match(total_minus, total_plus):
        raise ValueError("total flux mismatch between the two face families")

    levels = _sparse_coords(n, K)
    level_set = set(levels)
    w = {}  # per sparse in-plane point
    pts_of = {}
    mu = {}
    for axis in range(d):
        for sign in (1, -1):
            mu[(axis, sign)] = 0
    for key, cell in cells.items():
        axis, sign, _ = key
        diff = beta[key] - lam[key]
        pts = _cell_sparse_points(cell, axis, sign, n, K, level_set)
        if not pts and diff != 0:
            raise ValueError("no sparse points on a face cell; decrease K")
        pts_of[key] = pts
        mu[(axis, sign)] += diff
        for p in pts:
            share = Fraction(diff, len(pts)) if _is_exact(diff) else diff / len(pts)
            w[p] = share

    max_w = max((abs(v) for v in w.values()), default=0)
    bound = M if M is not None else (max_w * 2 * (2 * d) ** 2 + 1)

    def face_profile(axis, sign, scale=1):
        prof = {}
        for key, pts in pts_of.items():
            if key[0] == axis and key[1] == sign:
                for p in pts:
                    prof[_transverse(p, axis)] = w[p] * scale
        return prof

    def zero_profile(axis):
        prof = {}
        for key, pts in pts_of.items():
            if key[0] == axis and key[1] == -1:
                for p in pts:
                    prof[_transverse(p, axis)] = 0
        return prof

    f_res = Stream(d, n)

    f_in_faces, f_out_faces, f_zero = [], [], []
    for axis in range(d):
        for sign in (1, -1):
            m_ = mu[(axis, sign)]
            if m_ == 0:
                f_zero.append((axis, sign))
            elif (sign < 0 and m_ > 0) or (sign > 0 and m_ < 0):
                f_in_faces.append((axis, sign))
            else:
                f_out_faces.append((axis, sign))

    for axis, sign in f_zero:
        prof = face_profile(axis, sign)
        if all(v == 0 for v in prof.values()):
            continue
        if sign < 0:
            f_res = f_res + _axis_sparse_mix(d, n, K, axis, -1, prof, zero_profile(axis), bound)
        else:
            f_res = f_res + _axis_sparse_mix(d, n, K, axis, -1, zero_profile(axis), prof, bound)

    sent = {face: 0 for face in f_in_faces}
    received = {face: 0 for face in f_out_faces}
    exact_mode = all(_is_exact(v) for v in list(lam.values()) + list(beta.values()))
    big = float(max((abs(v) for v in mu.values()), default=1) or 1)
    slack = 0 if exact_mode else 1e-12 * big
    steps = 0
    for face_in in f_in_faces:
        while abs(mu[face_in]) - abs(sent[face_in]) > slack:
            face_out = next(
                fo for fo in f_out_faces if abs(mu[fo]) - abs(received[fo]) > slack
            )
            amount = min(
                abs(mu[face_in]) - abs(sent[face_in]),
                abs(mu[face_out]) - abs(received[face_out]),
            )
            f_res = f_res + _transfer(
                d, n, K, face_in, face_out, amount, mu, face_profile, bound
            )
            sent[face_in] += amount
            received[face_out] += amount
            steps += 1
            if steps > (2 * d) ** 2:
                raise RuntimeError("face pairing failed to terminate")
    return f_res


def _transverse(pt, axis):
    return tuple(c for j, c in enumerate(pt) if j != axis)


def _transfer(d, n, K, face_in, face_out, amount, mu, face_profile, bound) -> Stream:
    ax_i, s_i = face_in
    ax_j, s_j = face_out
    scale_in = Fraction(amount, abs(mu[face_in])) if _is_exact(amount, mu[face_in]) else amount / abs(mu[face_in])
    scale_out = Fraction(amount, abs(mu[face_out])) if _is_exact(amount, mu[face_out]) else amount / abs(mu[face_out])
    # inflow rate a(x) = -s_i w(x) scale; outflow rate b(x) = s_j w(x) scale
    prof_in = {y: -s_i * v * scale_in for y, v in face_profile(ax_i, s_i).items()}
    prof_out = {y: s_j * v * scale_out for y, v in face_profile(ax_j, s_j).items()}

    if ax_i == ax_j:
        if s_i < 0:
            return _axis_sparse_mix(d, n, K, ax_i, -1, prof_in, prof_out, bound)
        return _axis_sparse_mix(d, n, K, ax_i, 1, prof_in, prof_out, bound)

    lo, hi = cube_box(1, n)
    delivery = lo if s_j > 0 else hi - 1
    entry_sign = -s_j
    paths = Stream(d, n)
    delivered = {}
    full_in = {}
    for key_pt, a in _profile_points(d, n, K, ax_i, s_i, prof_in).items():
        full_in[key_pt] = a
        x = key_pt
        pth = _l_path(d, n, x, ax_i, s_i, ax_j, delivery, a)
        paths = paths + pth
        y = list(x)
        y[ax_i] = x[ax_j]
        y[ax_j] = delivery
        delivered[_transverse(tuple(y), ax_j)] = delivered.get(_transverse(tuple(y), ax_j), 0) + a
    mix_part = _axis_sparse_mix(
        d, n, K, ax_j, entry_sign, delivered, prof_out, bound,
        interior_entry=(s_j < 0),
    )
    return paths + mix_part


def _profile_points(d, n, K, axis, sign, prof):
    """Rebuild per-point rates from a transverse-keyed profile on the face."""
    lo, hi = cube_box(1, n)
    plane = lo if sign < 0 else hi - 1
    out = {}
    for y, v in prof.items():
        pt = list(y)
        pt.insert(axis, plane)
        out[tuple(pt)] = v
    return out


# ---------------------------------------------------------------------------
# Well-behaved streams and gluing


def well_behaved_target(d, s, v, m, n, damping, lattice_box=None):
    """Target flux per face cell: damping * s * v_axis * H^{d-1}(cell) * n^{d-1}."""
    cells = _face_cells(d, m, lattice_box, n)
    out = {}
    for key, cell in cells.items():
        axis, _, _ = key
        out[key] = damping * s * v[axis] * face_area(cell) * n ** (d - 1)
    return out


def is_well_behaved(f: Stream, eps, s, v, m, damping=None, lattice_box=None, tol=0):
    """True iff every mesoscopic face flux equals the damped constant target
    (1 - eps^{alpha/4}) s v.e_axis H^{d-1}(cell) n^{d-1}."""
    d = f.d
    if damping is None:
        a = float(balance_alpha(d))
        damping = 1.0 - float(eps) ** (a / 4)
    target = well_behaved_target(d, s, v, m, f.n, damping, lattice_box)
    got = measure_face_fluxes(f, m, lattice_box)
    for key, want in target.items():
        have = got[key]
        if _is_exact(have, want) and tol == 0:
            if have != want:
                return False
        elif abs(float(have) - float(want)) > max(tol, 1e-9):
            return False
    return True


def glue_adjacent(f_a: Stream, box_a, f_b: Stream, box_b, m, M) -> Stream:
    """Connect two well-behaved streams in adjacent lattice cubes through the
    corridor between them, one general mix per mesoscopic face cell.

    box_a/box_b are half-open integer-coordinate boxes (lo, hi) per axis at the
    streams' scale; they must be translates along one axis with a gap of at
    least 2(d-1) * side/m lattice units.  Raises when a face cell's fluxes do
    not match, naming the cell.
    """
    d = f_a.d
    n = f_a.n
    if (f_b.d, f_b.n) != (d, n):
        raise ValueError("streams must share lattice and dimension")
    diffs = [j for j in range(d) if box_a[j] != box_b[j]]
    if len(diffs) != 1:
        raise ValueError("cubes must be translates along a single axis")
    axis = diffs[0]
    side = box_a[axis][1] - box_a[axis][0]
    if any(box_a[j][1] - box_a[j][0] != side for j in range(d)):
        raise ValueError("cubes must be cubes")
    if side % m != 0:
        raise ValueError("m must divide the cube side")
    cell_side = side // m
    a1 = box_a[axis][1]
    b0 = box_b[axis][0]
    if b0 < a1:
        f_a, f_b = f_b, f_a
        box_a, box_b = box_b, box_a
        a1 = box_a[axis][1]
        b0 = box_b[axis][0]
    gap = b0 - a1
    need = 2 * (d - 1) * cell_side
    if gap < need:
        raise ValueError(f"corridor too narrow: need {need} lattice units, got {gap}")

    out = f_a + f_b
    trans_axes = [j for j in range(d) if j != axis]
    from itertools import product as iproduct

    for offs in iproduct(range(m), repeat=d - 1):
        f_in, f_out = {}, {}
        windows = []
        for k, j in enumerate(trans_axes):
            lo = box_a[j][0] + offs[k] * cell_side
            windows.append(range(lo, lo + cell_side))
        for coords in iproduct(*windows):
            key = tuple(c - wnd.start + 1 for c, wnd in zip(coords, windows))
            left_a = list(coords)
            left_a.insert(axis, a1 - 1)
            left_b = list(coords)
            left_b.insert(axis, b0)
            f_in[key] = f_a.get(EdgeId(tuple(left_a), axis))
            f_out[key] = f_b.get(EdgeId(tuple(left_b), axis))
        if not _sums_match(sum(f_in.values()), sum(f_out.values())):
            raise ValueError(f"face cell {offs}: flux mismatch between the two streams")
        g = mix(f_in, f_out, gap, M)
        amap = [axis] + trans_axes
        offset = [0] * d
        offset[axis] = a1
        for k, j in enumerate(trans_axes):
            offset[j] = windows[k].start - 1
        out = out + embed(g, d, amap, offset=offset, n=n)
    return out

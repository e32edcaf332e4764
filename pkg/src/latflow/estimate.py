"""Monte Carlo estimation: the elementary rate function, the flow constant
and tail probabilities; plus the convex min-distance feasibility solver.

The solver is one-sided by design: it certifies "holds" with an explicit
admissible stream whose distance upper bound clears epsilon, and otherwise
reports "unknown".  The success count therefore never overstates the event
probability and I_hat is an upper estimate of the decay rate.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .capacities import CapacityDistribution, derive_seed, sample_capacities
from .geometry import EdgeId, unit_cube
from .measure import DistanceOptions, VectorMeasure
from .reconnect import cube_box
from .stream import Stream


def wilson_interval(successes, trials, z=1.959963984540054):
    """95% Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    z2 = z * z
    denom = 1 + z2 / trials
    center = (p + z2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / denom
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == trials else min(1.0, center + half)
    return lo, hi


@dataclass
class RateEstimate:
    n: int
    eps: float
    s: float
    v: tuple
    trials: int
    successes: int
    p_hat: float
    ci_lo: float
    ci_hi: float
    i_hat: float
    i_hat_bound: float
    seed: int

    @classmethod
    def from_counts(cls, n, eps, s, v, trials, successes, seed, d=None):
        d = d or len(v)
        p = successes / trials
        lo, hi = wilson_interval(successes, trials)
        i_hat = float("inf") if p == 0 else -math.log(p) / n**d
        i_hat_bound = float("inf") if hi == 0 else -math.log(hi) / n**d
        return cls(n, float(eps), float(s), tuple(float(c) for c in v), trials,
                   successes, p, lo, hi, i_hat, i_hat_bound, seed)

    @property
    def ci_half_width(self):
        return (self.ci_hi - self.ci_lo) / 2


def rate_upper_bound(dist: CapacityDistribution, vec):
    """Analytic control: I(v) <= -d log G([||v||_inf, M])."""
    d = len(vec)
    a = max(abs(Fraction(c)) for c in vec)
    mass = dist.tail_mass(a)
    if mass == 0:
        return float("inf")
    return -d * math.log(float(mass))


# ---------------------------------------------------------------------------
# cube stream space and precompiled distance tables


class CubeSpace:
    """Edges and node-law structure of a region at scale n (S_n(C)): edges
    with left endpoint in C, node law at vertices whose backward neighbours
    all stay in C.  Defaults to the unit cube."""

    def __init__(self, d, n, region=None):
        self.d, self.n = d, n
        from itertools import product

        if region is None:
            lo, hi = cube_box(d, n)
            verts = [coords for coords in product(range(lo, hi), repeat=d)]
        else:
            verts = [tuple(v) for v in region.lattice_vertices(n)]
        vert_set = set(verts)
        self.edges = []
        for coords in sorted(verts):
            for ax in range(d):
                self.edges.append(EdgeId(coords, ax))
        self.edge_index = {e: i for i, e in enumerate(self.edges)}

        def backward_ok(coords):
            for j in range(d):
                y = list(coords)
                y[j] -= 1
                if tuple(y) not in vert_set:
                    return False
            return True

        self.interior = [coords for coords in sorted(verts) if backward_ok(coords)]

    def incidence(self, active_mask):
        """Node-law incidence over the active edges: +1 leaving, -1 entering."""
        rows = []
        for x in self.interior:
            row = np.zeros(len(self.edges))
            for ax in range(self.d):
                e_out = self.edge_index.get(EdgeId(x, ax))
                y = list(x)
                y[ax] -= 1
                e_in = self.edge_index.get(EdgeId(tuple(y), ax))
                if e_out is not None:
                    row[e_out] += 1
                if e_in is not None:
                    row[e_in] -= 1
            rows.append(row)
        B = np.array(rows)
        return B * active_mask[None, :]


class CubeDistanceTables:
    """Flattened cube assignments of the cube's edge midpoints against a
    fixed target measure, over every (shift, lambda, level) of the grid.

    One scatter-add evaluates the truncated distance at every grid point at
    once; the grid and truncation match ``measure.distance`` exactly (same
    rational bucketing), so values agree with the bracket's lower + tail.
    """

    def __init__(self, space: CubeSpace, target: VectorMeasure, opts: DistanceOptions):
        self.space = space
        self.opts = opts
        self.target = target
        d, n = space.d, space.n
        self.axes = np.array([e.axis for e in space.edges])
        self.scale = 1.0 / n**d
        shifts = opts.shifts
        from itertools import product

        self.grid = []
        for lam in opts.lambdas:
            for xs in product(shifts, repeat=d):
                self.grid.append((tuple(Fraction(c) for c in xs), Fraction(lam)))

        mids = [e.midpoint(n) for e in space.edges]
        ne = len(mids)
        slot_blocks = []
        b_rows = []
        const_blocks = []  # (point_id, weighted constant)
        block_meta = []  # (point_id, weight, slot_base, nslots)
        base = 0
        for pid, (x, lam) in enumerate(self.grid):
            for k in range(opts.k_max + 1):
                s = lam / 2**k
                idx_of = {}
                slots = np.empty(ne, dtype=np.int64)
                for i, p in enumerate(mids):
                    key = tuple(
                        int(((pc - xc) / s + Fraction(1, 2)).__floor__())
                        for pc, xc in zip(p, x)
                    )
                    if key not in idx_of:
                        idx_of[key] = len(idx_of)
                    slots[i] = idx_of[key]
                nb = len(idx_of)
                b = np.zeros((nb, d))
                const = 0.0
                leftover = {}
                for p, w in target.atoms:
                    key = tuple(
                        int(((pc - xc) / s + Fraction(1, 2)).__floor__())
                        for pc, xc in zip(p, x)
                    )
                    if key in idx_of:
                        b[idx_of[key]] += np.array([float(c) for c in w])
                    else:
                        acc = leftover.setdefault(key, np.zeros(d))
                        acc += np.array([float(c) for c in w])
                for acc in leftover.values():
                    const += float(np.linalg.norm(acc))
                for cell, v in target.densities:
                    vnorm = math.sqrt(sum(float(c) ** 2 for c in v))
                    covered = 0.0
                    for key, slot in idx_of.items():
                        vol = 1.0
                        for j in range(d):
                            qlo = float(x[j] + s * (key[j] - Fraction(1, 2)))
                            qhi = float(x[j] + s * (key[j] + Fraction(1, 2)))
                            seg = min(qhi, float(cell[j][1])) - max(qlo, float(cell[j][0]))
                            if seg <= 0:
                                vol = 0.0
                                break
                            vol *= seg
                        if vol > 0:
                            covered += vol
                            b[slot] += np.array([float(c) * vol for c in v])
                    from .geometry import box_volume

                    const += vnorm * max(float(box_volume(cell)) - covered, 0.0)
                slot_blocks.append(slots + base)
                b_rows.append(b)
                const_blocks.append((pid, const / 2**k))
                block_meta.append((pid, 1.0 / 2**k, base, nb))
                base += nb
        self.total_slots = base
        self.slots_flat = np.concatenate(slot_blocks)  # length = blocks * ne
        self.axes_flat = np.tile(self.axes, len(block_meta))
        self.b_all = np.vstack(b_rows)
        self.slot_weight = np.empty(base)
        self.slot_point = np.empty(base, dtype=np.int64)
        for (pid, w, sb, nb) in block_meta:
            self.slot_weight[sb: sb + nb] = w
            self.slot_point[sb: sb + nb] = pid
        self.const_point = np.zeros(len(self.grid))
        for pid, c in const_blocks:
            self.const_point[pid] += c
        self.block_meta = block_meta
        self.ne = ne
        self.n_points = len(self.grid)
        self.tail = target.total_variation() / 2**opts.k_max

    def values(self, s_vec):
        mass = np.zeros((self.total_slots, self.space.d))
        contrib = np.tile(s_vec * self.scale, len(self.block_meta))
        np.add.at(mass, (self.slots_flat, self.axes_flat), contrib)
        diff = mass - self.b_all
        norms = np.sqrt((diff * diff).sum(axis=1))
        per_point = np.bincount(
            self.slot_point, weights=norms * self.slot_weight, minlength=self.n_points
        )
        self._last_diff = diff
        self._last_norms = norms
        return per_point + self.const_point

    def value_and_grad(self, s_vec):
        vals = self.values(s_vec)
        pid = int(np.argmax(vals))
        diff, norms = self._last_diff, self._last_norms
        safe = np.where(norms > 0, norms, 1.0)
        coeff = diff / safe[:, None]
        g = np.zeros(self.ne)
        slots2 = self.slots_flat.reshape(len(self.block_meta), self.ne)
        for bi, (p, w, sb, nb) in enumerate(self.block_meta):
            if p != pid:
                continue
            g += coeff[slots2[bi], self.axes] * (self.scale * w)
        return float(vals[pid]), g

    def value(self, s_vec):
        return float(np.max(self.values(s_vec)))

    def certified_upper(self, f):
        """Grid value of the exact stream plus the truncation tail: matches
        measure.distance(vector_measure(f), target).upper on this grid."""
        s = np.zeros(self.ne)
        for i, e in enumerate(self.space.edges):
            s[i] = float(f.get(e))
        tv_stream = float(sum(abs(v) for v in f.values.values())) * self.scale
        return self.value(s) + (tv_stream + self.target.total_variation()) / 2**self.opts.k_max


_TABLE_CACHE = {}


def _tables_for(d, n, target, opts, region=None):
    from .measure import to_json

    region_key = None
    if region is not None:
        region_key = tuple(sorted(tuple(v) for v in region.lattice_vertices(n)))
    key = (d, n, to_json(target), opts.k_max, tuple(opts.lambdas), opts.shifts, region_key)
    if key not in _TABLE_CACHE:
        space = CubeSpace(d, n, region=region)
        _TABLE_CACHE[key] = CubeDistanceTables(space, target, opts or DistanceOptions())
    return _TABLE_CACHE[key]


@dataclass
class MinDistanceResult:
    value: float  # distance upper bound of the returned stream
    stream: Stream
    status: str  # "holds" or "unknown"
    iterations: int


def _exact_div_project(space, active, s_vals):
    """Exact node-law projection of rational edge values on the active set."""
    rows = []
    for x in space.interior:
        row = {}
        for ax in range(space.d):
            i = space.edge_index.get(EdgeId(x, ax))
            if i is not None and active[i]:
                row[i] = row.get(i, 0) + 1
            y = list(x)
            y[ax] -= 1
            i = space.edge_index.get(EdgeId(tuple(y), ax))
            if i is not None and active[i]:
                row[i] = row.get(i, 0) - 1
        rows.append(row)
    # gram matrix of the constraint rows
    m = len(rows)
    G = [[Fraction(0)] * m for _ in range(m)]
    for a in range(m):
        for b in range(a, m):
            acc = Fraction(0)
            for i, ca in rows[a].items():
                cb = rows[b].get(i)
                if cb:
                    acc += ca * cb
            G[a][b] = G[b][a] = acc
    rhs = []
    for a in range(m):
        acc = Fraction(0)
        for i, ca in rows[a].items():
            acc += ca * s_vals[i]
        rhs.append(acc)
    y = _solve_psd_fraction(G, rhs)
    out = list(s_vals)
    for a in range(m):
        if y[a] == 0:
            continue
        for i, ca in rows[a].items():
            out[i] -= ca * y[a]
    return out


def _solve_psd_fraction(G, rhs):
    """Gaussian elimination with free-variable zeroing (G may be singular)."""
    m = len(G)
    A = [row[:] + [rhs[i]] for i, row in enumerate(G)]
    piv_cols = []
    r = 0
    for c in range(m):
        piv = next((i for i in range(r, m) if A[i][c] != 0), None)
        if piv is None:
            continue
        A[r], A[piv] = A[piv], A[r]
        pv = A[r][c]
        A[r] = [a / pv for a in A[r]]
        for i in range(m):
            if i != r and A[i][c] != 0:
                f = A[i][c]
                A[i] = [a - f * b for a, b in zip(A[i], A[r])]
        piv_cols.append(c)
        r += 1
        if r == m:
            break
    y = [Fraction(0)] * m
    for i, c in enumerate(piv_cols):
        y[c] = A[i][m]
    return y


def min_distance(n, t, target: VectorMeasure, eps, d=None, opts=None,
                 iters=140, seed_vec=None, region=None) -> MinDistanceResult:
    """Minimize the grid-evaluated distance upper bound between mu_n(f) and
    the target over admissible streams in the region (default: unit cube).

    Alternating projections (graph-Laplacian node-law projection, capacity
    box clipping) driven by subgradient steps; the final stream is polished
    to exact rational admissibility, so a "holds" verdict is certified by an
    explicit member of S_n(C)."""
    d = d or target.d
    opts = opts or DistanceOptions()
    tables = _tables_for(d, n, target, opts, region=region)
    space = tables.space
    ne = len(space.edges)
    caps = np.array([float(t.get(e, 0)) for e in space.edges])
    active = caps > 0
    if not active.any():
        f = Stream(d, n)
        val = tables.certified_upper(f)
        return MinDistanceResult(val, f, "holds" if val <= float(eps) else "unknown", 0)

    B = space.incidence(active.astype(float))
    BBt = B @ B.T
    P = np.linalg.pinv(BBt, rcond=1e-12)

    def proj_div(s):
        return s - B.T @ (P @ (B @ s))

    # warm start: invert the target where possible (constant value on density
    # support, exact edge scalars for atoms sitting on edge midpoints)
    s = np.zeros(ne)
    if seed_vec is not None:
        s = np.array(seed_vec, dtype=float)
    else:
        if tables.target.densities:
            for cell, v in tables.target.densities:
                for i, e in enumerate(space.edges):
                    s[i] += float(v[e.axis])
        if tables.target.atoms:
            mid_index = {e.midpoint(n): i for i, e in enumerate(space.edges)}
            for p, w in tables.target.atoms:
                i = mid_index.get(p)
                if i is not None:
                    s[i] += float(w[space.edges[i].axis]) * n**d
    s = np.clip(s, -caps, caps) * active
    step0 = max(caps.max(), 1e-9)
    best_val = float("inf")
    best_s = s.copy()
    for it in range(iters):
        val, g = tables.value_and_grad(s)
        if val < best_val:
            best_val = val
            best_s = s.copy()
        gn2 = float((g * g).sum())
        if gn2 < 1e-30:
            break
        # Polyak-style step against the running best, with a vanishing margin
        step = (val - best_val + 0.05 * step0 / (it + 5)) / gn2
        s = s - step * g
        s = proj_div(s * active)
        s = np.clip(s, -caps, caps) * active
    s = best_s

    # exact polish: rational projection then uniform shrink into the box
    s = proj_div(s * active)
    s_frac = [Fraction(x).limit_denominator(10**9) if active[i] else Fraction(0)
              for i, x in enumerate(s)]
    s_frac = _exact_div_project(space, active, s_frac)
    ratio = Fraction(1)
    for i, x in enumerate(s_frac):
        if x == 0:
            continue
        c = Fraction(t.get(space.edges[i], 0))
        if c == 0:
            ratio = Fraction(0)
            break
        ratio = min(ratio, c / abs(x))
    s_final = [x * ratio for x in s_frac]
    f = Stream(d, n)
    for i, x in enumerate(s_final):
        if x != 0:
            f.values[space.edges[i]] = x
    val = tables.certified_upper(f)
    status = "holds" if val <= float(eps) else "unknown"
    return MinDistanceResult(val, f, status, iters)


def constant_target(d, s, v) -> VectorMeasure:
    """The measure s v 1_cube L^d on the unit cube."""
    vec = [Fraction(s) * Fraction(c) for c in v]
    return VectorMeasure.from_density(unit_cube(d), vec)


def _run_trials(fn, trials, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, range(trials)))
    return [fn(i) for i in range(trials)]


def estimate_rate(s, v, eps, n, trials, dist: CapacityDistribution, seed,
                  d=None, threads=1, opts=None, eps_grid=None):
    """Monte Carlo estimate of the elementary rate function at s*v.

    Per trial: sample capacities on the cube, run the feasibility solver and
    count "holds".  With an eps grid the same per-trial solver value is
    compared against every epsilon, so the counts are nested by construction.
    """
    if trials <= 0:
        raise ValueError("trials must be positive")
    d = d or len(v)
    opts = opts or DistanceOptions()
    target = constant_target(d, s, v)
    space_edges = CubeSpace(d, n).edges
    eps_list = list(eps_grid) if eps_grid is not None else [eps]

    def one(trial):
        if s == 0:
            return 0.0  # the zero stream certifies the event at any eps
        tseed = derive_seed(seed, trial)
        t = sample_capacities(space_edges, dist, tseed, exact=False)
        res = min_distance(n, t, target, eps_list[-1], d=d, opts=opts)
        return res.value

    values = _run_trials(one, trials, threads)
    out = []
    for e in eps_list:
        successes = sum(1 for val in values if val <= float(e))
        out.append(RateEstimate.from_counts(n, e, s, v, trials, successes, seed, d=d))
    return out if eps_grid is not None else out[0]


def convexity_check(v1, v2, s, eps, n, trials, dist, seed, d=None, threads=1):
    """Statistical convexity probe along the segment v1 -> v2.

    Estimates the rate at the endpoints and the midpoint and compares
    I(mid) <= (I(v1) + I(v2))/2 + 3 * combined CI half-widths.  Returns
    'consistent', 'violated' or 'inconclusive' (when an estimate has no
    finite value or the combined intervals swallow the comparison).
    """
    d = d or len(v1)
    mid = tuple((Fraction(a) + Fraction(b)) / 2 for a, b in zip(v1, v2))
    ests = [
        estimate_rate(s, v, eps, n, trials, dist, derive_seed(seed, i), d=d, threads=threads)
        for i, v in enumerate((v1, v2, mid))
    ]
    vals = [e.i_hat for e in ests]
    slack = 3 * sum(e.ci_half_width for e in ests)
    if any(v == float("inf") for v in vals):
        return "inconclusive", ests
    lhs = vals[2]
    rhs = (vals[0] + vals[1]) / 2 + slack
    if lhs <= rhs:
        return "consistent", ests
    if slack > max(vals):
        return "inconclusive", ests
    return "violated", ests


def straight_base(d, n, axis):
    """Base hyperrectangle [0,n)^{d-1} x {0} orthogonal to e_axis (scale 1)."""
    zero = Fraction(0)
    return tuple(
        (zero, zero) if j == axis else (zero, Fraction(n)) for j in range(d)
    )


@dataclass
class FlowConstantPoint:
    n: int
    h: int
    trials: int
    ratios: tuple
    mean: float
    ci_lo: float
    ci_hi: float

    @classmethod
    def from_ratios(cls, n, h, ratios):
        vals = [float(r) for r in ratios]
        m = sum(vals) / len(vals)
        if len(vals) > 1:
            sd = math.sqrt(sum((x - m) ** 2 for x in vals) / (len(vals) - 1))
        else:
            sd = 0.0
        half = 1.959963984540054 * sd / math.sqrt(len(vals))
        return cls(n, h, len(vals), tuple(ratios), m, m - half, m + half)


def estimate_flow_constant(dist: CapacityDistribution, axis, n_list, h_of_n,
                           trials, seed, d=2, exact=True, threads=1):
    """Per-n estimates of tau(nA, h(n)) / (n^{d-1} H^{d-1}(A)) for the straight
    unit hyperrectangle A."""
    from .capacities import region_edges
    from .geometry import Region, Cylinder
    from .maxflow import cylinder_flow_tau

    out = []
    for n in n_list:
        h = h_of_n(n)
        base = straight_base(d, n, axis)
        v = tuple(1 if j == axis else 0 for j in range(d))
        region = Region(cylinder=Cylinder(base, h, v, two_sided=True))
        edges = region_edges(region, 1, d=d)

        def one(trial, n=n, h=h, base=base, edges=edges):
            t = sample_capacities(edges, dist, derive_seed(seed, n, trial), exact=exact)
            res = cylinder_flow_tau(base, h, t, n=1)
            ratio = res.value / Fraction(n ** (d - 1)) if exact else res.value / n ** (d - 1)
            return ratio

        ratios = _run_trials(one, trials, threads)
        out.append(FlowConstantPoint.from_ratios(n, h, ratios))
    return out


def tail_probability(lam, n, trials, dist: CapacityDistribution, seed, L, threads=1):
    """P(phi_n >= lam n^{d-1}) estimated over independent capacity samples."""
    from .maxflow import max_flow

    d = L.d
    threshold = lam * n ** (d - 1)

    def one(trial):
        t = sample_capacities(L, dist, derive_seed(seed, trial), exact=False)
        res = max_flow(L, t)
        return 1 if res.value >= float(threshold) else 0

    hits = _run_trials(one, trials, threads)
    successes = sum(hits)
    p = successes / trials
    lo, hi = wilson_interval(successes, trials)
    return p, (lo, hi), successes

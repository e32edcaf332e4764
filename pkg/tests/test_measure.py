import math
import random
from fractions import Fraction
from itertools import product

import pytest

from latflow.geometry import EdgeId, unit_cube
from latflow.measure import (
    DistanceOptions,
    VectorMeasure,
    adaptive_options,
    box_mass,
    distance,
    from_json,
    restrict,
    to_json,
)
from latflow.stream import Stream, constant_stream, vector_measure


def disjoint_random_boxes(rng, d, count, grid=8, min_gap=1):
    """Random half-open boxes on the 1/grid lattice with >= min_gap/grid
    separation on some axis between any two."""
    boxes = []
    attempts = 0
    while len(boxes) < count and attempts < 400:
        attempts += 1
        lo = [rng.randint(-grid, grid - 2) for _ in range(d)]
        hi = [l + rng.randint(1, 3) for l in lo]
        b = tuple((Fraction(l, grid), Fraction(h, grid)) for l, h in zip(lo, hi))
        ok = True
        for other in boxes:
            gap = max(
                max(float(blo - ahi), float(alo - bhi))
                for (alo, ahi), (blo, bhi) in zip(b, other)
            )
            if gap < min_gap / grid:
                ok = False
                break
        if ok:
            boxes.append(b)
    return boxes


def random_density_measure(rng, d, count=2):
    boxes = disjoint_random_boxes(rng, d, count)
    dens = []
    for b in boxes:
        v = tuple(Fraction(rng.randint(-8, 8), 8) for _ in range(d))
        dens.append((b, v))
    return VectorMeasure(d=d, densities=tuple(dens))


def l1_between(mu: VectorMeasure, nu: VectorMeasure):
    """Exact-ish L1 distance between two piecewise-constant densities."""
    d = mu.d
    cuts = [set() for _ in range(d)]
    for m in (mu, nu):
        for b, _ in m.densities:
            for j, (lo, hi) in enumerate(b):
                cuts[j].add(lo)
                cuts[j].add(hi)
    axes = [sorted(c) for c in cuts]
    total = 0.0
    for idx in product(*(range(len(a) - 1) for a in axes)):
        lows = [axes[j][idx[j]] for j in range(d)]
        highs = [axes[j][idx[j] + 1] for j in range(d)]
        vol = 1.0
        for lo, hi in zip(lows, highs):
            vol *= float(hi - lo)
        if vol == 0:
            continue
        mid = [(lo + hi) / 2 for lo, hi in zip(lows, highs)]
        diff = [0.0] * d
        for m, sign in ((mu, 1), (nu, -1)):
            for b, v in m.densities:
                if all(lo <= c < hi for c, (lo, hi) in zip(mid, b)):
                    for j in range(d):
                        diff[j] += sign * float(v[j])
        total += vol * math.sqrt(sum(c * c for c in diff))
    return total


# ---------------------------------------------------------------------------
# box_mass


def test_box_mass_half_open_rule():
    nu = VectorMeasure(
        d=2,
        atoms=(
            ((Fraction(0), Fraction(0)), (Fraction(1), Fraction(0))),  # lower face
            ((Fraction(1), Fraction(0)), (Fraction(1), Fraction(0))),  # upper face
        ),
    )
    b = ((Fraction(0), Fraction(1)), (Fraction(-1), Fraction(1)))
    assert box_mass(nu, b) == (1, 0)


def test_box_mass_density_full_box():
    v = (Fraction(2), Fraction(-1))
    nu = VectorMeasure.from_density(unit_cube(2), v)
    assert box_mass(nu, unit_cube(2)) == v


def test_box_mass_single_edge_measure():
    f = Stream(2, 2)
    f.values[EdgeId((0, 0), 0)] = Fraction(1)
    nu = vector_measure(f)
    b = ((Fraction(0), Fraction(1, 2)), (Fraction(-1, 4), Fraction(1, 4)))
    assert box_mass(nu, b) == (Fraction(1, 4), 0)


def test_restrict_splits_mass():
    v = (Fraction(1), Fraction(0))
    nu = VectorMeasure.from_density(unit_cube(2), v)
    left = ((Fraction(-1, 2), Fraction(0)), (Fraction(-1, 2), Fraction(1, 2)))
    r = restrict(nu, left)
    assert box_mass(r, unit_cube(2)) == (Fraction(1, 2), 0)


# ---------------------------------------------------------------------------
# distance bracket


def test_identical_measures_bracket_is_tail_only():
    rng = random.Random(1)
    nu = random_density_measure(rng, 2)
    br = distance(nu, nu)
    assert br.lower == 0
    assert br.upper == pytest.approx(2 * nu.total_variation() / 2**12)


def test_symmetry_on_the_grid():
    rng = random.Random(2)
    mu = random_density_measure(rng, 2)
    nu = random_density_measure(rng, 2)
    a = distance(mu, nu)
    b = distance(nu, mu)
    assert a.lower == pytest.approx(b.lower, abs=1e-12)
    assert a.upper == pytest.approx(b.upper, abs=1e-12)


def test_triangle_inequality_for_grid_lowers():
    rng = random.Random(3)
    for _ in range(5):
        mu = random_density_measure(rng, 2)
        nu = random_density_measure(rng, 2)
        rho = random_density_measure(rng, 2)
        d_mr = distance(mu, rho).lower
        d_mn = distance(mu, nu).lower
        d_nr = distance(nu, rho).lower
        assert d_mr <= d_mn + d_nr + 1e-9


def test_l1_control_lemma():
    # d(f L, g L) <= 2 ||f - g||_L1, checked on the sound side of the bracket
    rng = random.Random(4)
    for _ in range(20):
        mu = random_density_measure(rng, 2)
        nu = random_density_measure(rng, 2)
        br = distance(mu, nu)
        assert br.lower <= 2 * l1_between(mu, nu) + 1e-9


def test_partition_subadditivity_lemma():
    rng = random.Random(5)
    half = Fraction(1, 2)
    big = 4
    for _ in range(10):
        mu = random_density_measure(rng, 2)
        nu = random_density_measure(rng, 2)
        split = Fraction(rng.randint(-2, 2), 4)
        parts = [
            ((Fraction(-big), split), (Fraction(-big), Fraction(big))),
            ((split, Fraction(big)), (Fraction(-big), Fraction(big))),
        ]
        total = distance(mu, nu).lower
        pieces = sum(distance(restrict(mu, p), restrict(nu, p)).upper for p in parts)
        assert total <= pieces + 1e-9


def test_bracket_gap_within_five_percent():
    rng = random.Random(6)
    for _ in range(10):
        mu = random_density_measure(rng, 2)
        nu = random_density_measure(rng, 2)
        br = distance(mu, nu)
        if br.upper > 0:
            assert br.gap <= 0.05 * br.upper


def test_restriction_property_with_proof_constants():
    # d(mu 1_B, nu 1_B) <= beta1 d(mu, nu) / rho + beta2 rho delta^{d-1}
    from latflow.capacities import CapacityDistribution, sample_capacities
    from latflow.geometry import discretize_domain, unit_square_domain
    from latflow.maxflow import max_flow

    d = 2
    M = 1.0
    beta1 = 8 * d  # 4 d lambda with lambda <= 2
    beta2 = M * (16 * d**2 + 16 * d + (2 * d + 1) * 2**d)
    L = discretize_domain(unit_square_domain(), 4)
    rng = random.Random(7)
    for _ in range(5):
        t = sample_capacities(
            L, CapacityDistribution.uniform(0, 1), seed=rng.getrandbits(32), exact=True
        )
        f = max_flow(L, t).stream
        mu = vector_measure(f)
        nu = VectorMeasure.from_density(
            ((Fraction(0), Fraction(1)), (Fraction(0), Fraction(1))),
            (Fraction(1, 2), Fraction(0)),
        )
        delta = Fraction(1, 2)
        z = (Fraction(1, 2), Fraction(1, 2))
        B = tuple((zc - delta / 2, zc + delta / 2) for zc in z)
        rho = Fraction(1, 8)  # <= delta * eps_cube = 1/4 in d=2
        lhs = distance(restrict(mu, B), restrict(nu, B)).lower
        rhs = beta1 * distance(mu, nu).upper / float(rho) + beta2 * float(rho) * float(
            delta ** (d - 1)
        )
        assert lhs <= rhs


def test_paving_boundary_count_lemma():
    # cells of a fine paving meeting the boundary of delta*cube + z
    rng = random.Random(8)
    d = 2
    eps_cube = (2 ** (1 / (d - 1)) - 1) / 2
    for _ in range(20):
        delta = rng.choice([0.5, 0.75, 1.0])
        z = (rng.uniform(-1, 1), rng.uniform(-1, 1))
        a = rng.choice([delta / 8, delta / 12, delta / 16])
        if a * math.sqrt(d) > eps_cube * delta:
            continue
        # paving cells [a i, a(i+1)) x [a j, a(j+1))
        lo = [z[j] - delta / 2 for j in range(d)]
        hi = [z[j] + delta / 2 for j in range(d)]
        count = 0
        i_range = range(int(lo[0] / a) - 2, int(hi[0] / a) + 2)
        j_range = range(int(lo[1] / a) - 2, int(hi[1] / a) + 2)
        for i in i_range:
            for j in j_range:
                cell = ((a * i, a * (i + 1)), (a * j, a * (j + 1)))
                # meets the boundary iff it meets the closed box but not the interior-only
                meets_box = all(cell[k][1] > lo[k] and cell[k][0] < hi[k] for k in range(d))
                inside = all(cell[k][0] >= lo[k] and cell[k][1] <= hi[k] for k in range(d))
                strictly_inside = all(
                    cell[k][0] > lo[k] and cell[k][1] < hi[k] for k in range(d)
                )
                if meets_box and not strictly_inside:
                    count += 1
        perimeter = 2 * d * delta ** (d - 1)
        bound = 4 * perimeter * (a * math.sqrt(d)) / a**d
        assert count <= bound


def test_weak_convergence_on_bump_integrals():
    # d -> 0 with bounded TV forces integral convergence for bump tests
    target_v = (Fraction(1), Fraction(0))
    target = VectorMeasure.from_density(unit_cube(2), target_v)

    def bump(p):
        x, y = float(p[0]), float(p[1])
        r2 = 4 * (x * x + y * y)
        return math.exp(-1 / (1 - r2)) if r2 < 1 else 0.0

    # quadrature of integral over the cube of bump * v1
    q = 64
    quad = 0.0
    for i in range(q):
        for j in range(q):
            x = -0.5 + (i + 0.5) / q
            y = -0.5 + (j + 0.5) / q
            quad += bump((x, y)) / q**2
    errs = []
    dists = []
    for n in (4, 8, 16):
        f = constant_stream(unit_cube(2), target_v, n)
        mu = vector_measure(f)
        integral = sum(bump(p) * float(w[0]) for p, w in mu.atoms)
        errs.append(abs(integral - quad))
        dists.append(distance(mu, target).lower)
    assert dists[0] > dists[1] > dists[2]
    assert errs[2] < errs[0]
    assert errs[2] < 5e-3


def test_json_round_trip():
    rng = random.Random(9)
    nu = random_density_measure(rng, 2)
    f = Stream(2, 2)
    f.values[EdgeId((0, 0), 0)] = Fraction(1, 3)
    mu = vector_measure(f)
    combined = VectorMeasure(d=2, atoms=mu.atoms, densities=nu.densities)
    back = from_json(to_json(combined))
    assert back == combined


def test_overlapping_densities_rejected():
    with pytest.raises(ValueError):
        VectorMeasure(
            d=2,
            densities=(
                (unit_cube(2), (Fraction(1), Fraction(0))),
                (unit_cube(2), (Fraction(0), Fraction(1))),
            ),
        )


def test_plaquette_discretization_distance_decreases():
    # the plaquette-exact discretization of v 1_cube converges to the target
    # in the bracketed distance as n grows
    from latflow.continuous import ContinuousField
    from latflow.geometry import Region
    from latflow.stream import discretize_field

    v = (Fraction(1), Fraction(0))
    target = VectorMeasure.from_density(unit_cube(2), v)
    sigma = ContinuousField.constant(unit_cube(2), v)
    region = Region(boxes=(unit_cube(2),))
    uppers = []
    for n in (4, 8, 16):
        f = discretize_field(sigma, region, n, damping=1)
        uppers.append(distance(vector_measure(f), target).upper)
    assert uppers[0] > uppers[1] > uppers[2]

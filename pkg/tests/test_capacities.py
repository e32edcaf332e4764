from fractions import Fraction

import pytest

from latflow.capacities import (
    CapacityDistribution,
    derive_seed,
    dump_capacities,
    load_capacities,
    region_edges,
    sample_capacities,
)
from latflow.geometry import Region, box, discretize_domain, unit_square_domain


def test_constant_distribution_samples_ones():
    L = discretize_domain(unit_square_domain(), 2)
    t = sample_capacities(L, CapacityDistribution.constant(1), seed=5)
    assert all(v == 1 for v in t.values.values())


def test_determinism_across_runs_and_iteration_order():
    L = discretize_domain(unit_square_domain(), 3)
    dist = CapacityDistribution.bernoulli(0, 1, Fraction(1, 2))
    a = sample_capacities(L, dist, seed=42)
    b = sample_capacities(list(reversed(L.edges)), dist, seed=42)
    assert a.values == b.values


def test_exact_and_float_modes_agree_for_discrete_kinds():
    L = discretize_domain(unit_square_domain(), 3)
    dist = CapacityDistribution.bernoulli(0, 1, Fraction(1, 2))
    exact = sample_capacities(L, dist, seed=9, exact=True)
    flt = sample_capacities(L, dist, seed=9, exact=False)
    for e in L.edges:
        assert float(exact[e]) == flt[e]


def test_values_within_support_bound():
    region = Region(boxes=(box((0, 6), (0, 6)),))
    edges = region_edges(region, 1, d=2)
    for dist in (
        CapacityDistribution.uniform(0, 2),
        CapacityDistribution.discrete([1, 2, 3], [Fraction(1, 3)] * 3),
        CapacityDistribution.bernoulli(Fraction(1, 4), Fraction(3, 4), Fraction(1, 3)),
    ):
        t = sample_capacities(edges, dist, seed=11)
        M = dist.support_bound
        assert all(0 <= v <= M for v in t.values.values())


def test_uniform_empirical_mean_within_clt_band():
    region = Region(boxes=(box((0, 224), (0, 224)),))
    edges = region_edges(region, 1, d=2)  # ~1e5 edges
    dist = CapacityDistribution.uniform(0, 2)
    t = sample_capacities(edges, dist, seed=123, exact=False)
    vals = list(t.values.values())
    mean = sum(vals) / len(vals)
    # sd of U(0,2) is 1/sqrt(3); three sigma of the mean
    band = 3 * (1 / 3**0.5) / len(vals) ** 0.5
    assert abs(mean - 1.0) < band


def test_resampling_same_seed_is_bit_identical():
    L = discretize_domain(unit_square_domain(), 3)
    dist = CapacityDistribution.uniform(0, 2)
    a = sample_capacities(L, dist, seed=77, exact=False)
    b = sample_capacities(L, dist, seed=77, exact=False)
    assert a.values == b.values
    c = sample_capacities(L, dist, seed=78, exact=False)
    assert a.values != c.values


def test_text_round_trip():
    L = discretize_domain(unit_square_domain(), 2)
    dist = CapacityDistribution.uniform(0, 2)
    t = sample_capacities(L, dist, seed=3, exact=True)
    text = dump_capacities(t)
    back = load_capacities(text)
    assert back.values == t.values
    tf = sample_capacities(L, dist, seed=3, exact=False)
    assert load_capacities(dump_capacities(tf)).values == tf.values


def test_tail_mass():
    b = CapacityDistribution.bernoulli(0, 1, Fraction(1, 2))
    assert b.tail_mass(1) == Fraction(1, 2)
    assert b.tail_mass(Fraction(1, 2)) == Fraction(1, 2)
    assert b.tail_mass(0) == 1
    u = CapacityDistribution.uniform(0, 2)
    assert u.tail_mass(1) == Fraction(1, 2)
    assert u.tail_mass(3) == 0


def test_derive_seed_distinct():
    seeds = {derive_seed(1, i) for i in range(1000)}
    assert len(seeds) == 1000


def test_invalid_distributions():
    with pytest.raises(ValueError):
        CapacityDistribution.bernoulli(0, 1, 2)
    with pytest.raises(ValueError):
        CapacityDistribution.uniform(2, 1)
    with pytest.raises(ValueError):
        CapacityDistribution.discrete([1, 2], [Fraction(1, 2), Fraction(1, 3)])

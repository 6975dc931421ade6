import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ubiquity.errors import DomainError, ResourceError
from ubiquity.systems import (PointScaleSystem, bucket, bucket_index, convergents_from_terms, gen_badic,
                              gen_nalpha, gen_poisson, gen_rationals, gen_uniform, load_system, parse_irrational,
                              regenerate, save_system, stacked)


def test_badic_counts_and_radius():
    s = gen_badic(2, 1, 2)
    assert len(s) == 6
    assert sorted(bucket(s).sizes().values()) == [2, 4]
    s3 = gen_badic(2, 1, 3)
    assert set(s3.scales[s3.extra["level"] == 3]) == {0.25}
    assert len(gen_badic(3, 2, 2)) == 9 + 81


def test_badic_budget():
    with pytest.raises(ResourceError):
        gen_badic(2, 1, 30)


def test_rationals_example():
    s = gen_rationals(3, 1, irreducible_only=True)
    assert sorted(Fraction(int(p[0]), int(q)) for p, q in zip(s.extra["p"], s.extra["q"])) == \
        sorted({Fraction(0), Fraction(1), Fraction(1, 2), Fraction(1, 3), Fraction(2, 3)})
    assert len(s) == 5


def test_rationals_hurwitz_radius():
    s = gen_rationals(5, 1, hurwitz=True)
    lam = s.scales[s.extra["q"] == 5]
    assert lam == pytest.approx(2 / (math.sqrt(5) * 25))
    assert lam[0] == pytest.approx(0.035777, abs=1e-6)


def test_rationals_unfiltered_keeps_duplicates():
    s = gen_rationals(4, 1, irreducible_only=False)
    pq = {(int(p[0]), int(q)) for p, q in zip(s.extra["p"], s.extra["q"])}
    assert (1, 2) in pq and (2, 4) in pq


def test_rationals_match_farey_sequence():
    Q = 100
    s = gen_rationals(Q, 1)
    got = [Fraction(int(p[0]), int(q)) for p, q in zip(s.extra["p"], s.extra["q"])]
    farey = {Fraction(p, q) for q in range(1, Q + 1) for p in range(q + 1)}
    assert len(got) == len(set(got)) == len(farey)
    assert set(got) == farey
    phi_sum = sum(sum(1 for p in range(1, q + 1) if math.gcd(p, q) == 1) for q in range(1, Q + 1))
    assert len(got) == 1 + phi_sum


def test_nalpha_sqrt2():
    s = gen_nalpha("sqrt2", 10)
    assert s.points[0, 0] == pytest.approx(math.sqrt(2) - 1, abs=1e-15)
    assert s.scales[0] == 1.0
    assert s.points[9, 0] == pytest.approx(0.1421356237309510, abs=1e-14)
    assert s.scales[9] == pytest.approx(0.1)


def test_nalpha_rejects_rationals():
    for bad in (Fraction(1, 3), 0.5, {"cf": [0, 2, 3]}, "0.25"):
        with pytest.raises(DomainError):
            gen_nalpha(bad, 10)


@pytest.mark.parametrize("desc", ["golden", "sqrt2", "sqrt:7", {"quadratic": [1, 3, 2]}, "liouville:4",
                                  {"cf": [0], "period": [1, 2]}])
def test_convergent_determinant(desc):
    terms = parse_irrational(desc).terms(12)
    ps, qs = convergents_from_terms(terms)
    for k in range(1, len(ps)):
        assert ps[k] * qs[k - 1] - ps[k - 1] * qs[k] == (-1) ** (k - 1)


def test_sqrt2_terms():
    assert parse_irrational("sqrt2").terms(6) == [1, 2, 2, 2, 2, 2]
    assert parse_irrational("golden").terms(5) == [1, 1, 1, 1, 1]


def test_literal_irrational_terms():
    lit = parse_irrational({"literal": "1.41421356237309504880168872420969807856967187537694"})
    assert lit.terms(10) == [1] + [2] * 9


def test_poisson_counts():
    gamma, lam_min = 2.0, 1e-4
    s = gen_poisson(gamma, lam_min, seed=3)
    mean = gamma * (1 / lam_min - 1)
    assert abs(len(s) - mean) < 5 * math.sqrt(mean)
    a, b = 1e-3, 1e-2
    inside = int(np.sum((s.scales > a) & (s.scales <= b)))
    expected = gamma * (1 / a - 1 / b)
    assert abs(inside - expected) < 5 * math.sqrt(expected)
    # beta_j = j^-1 log2 E#T_j with E#T_j = gamma 2^j
    sizes = bucket(s).sizes()
    for j in range(5, 13):
        assert abs(sizes[j] - gamma * 2 ** j) < 5 * math.sqrt(gamma * 2 ** j)


def test_poisson_determinism():
    a, b = gen_poisson(1.0, 1e-3, seed=11), gen_poisson(1.0, 1e-3, seed=11)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.scales, b.scales)
    assert not np.array_equal(a.points[:10], gen_poisson(1.0, 1e-3, seed=12).points[:10])


def test_uniform_rule_and_determinism():
    s = gen_uniform({"harmonic": 3.0}, 100, seed=1)
    assert s.scales[9] == pytest.approx(0.3)
    assert np.array_equal(s.points, gen_uniform({"harmonic": 3.0}, 100, seed=1).points)
    with pytest.raises(DomainError):
        gen_uniform([0.1, 0.2, 0.05], 3)


def test_uniform_coverage_increases():
    fractions = []
    for n in (100, 1000, 20000):
        s = gen_uniform({"harmonic": 3.0}, n, seed=2)
        hit = np.zeros(256, bool)
        x, r = s.points[:, 0], s.scales / 2
        lo = np.clip(np.floor((x - r) * 256), 0, 255).astype(int)
        hi = np.clip(np.ceil((x + r) * 256) - 1, 0, 255).astype(int)
        for a, b in zip(lo, hi):
            hit[a:b + 1] = True
        fractions.append(hit.mean())
    assert fractions[0] <= fractions[1] <= fractions[2]
    assert fractions[2] == 1.0


def test_bucket_boundaries():
    assert bucket_index([2.0 ** -5, 2.0 ** -5 - 1e-12, 2.0 ** -5 + 1e-12, 1.0]).tolist() == [5, 5, 4, 0]
    assert bucket_index([3.0 ** -4, 3.0 ** -4 * (1 - 1e-12), 1 / 3 + 1e-9], c=3).tolist() == [4, 4, 0]


@given(st.floats(1e-12, 1.0))
def test_bucket_definition(lam):
    j = int(bucket_index([lam])[0])
    assert 2.0 ** -(j + 1) < lam <= 2.0 ** -j


def test_stacked_control():
    s = stacked(6)
    assert bucket(s).sizes() == {j: 2 ** j for j in range(1, 7)}
    assert np.all(s.points == 0.5)


def test_system_validation():
    with pytest.raises(DomainError):
        PointScaleSystem([0.1, 0.2], [0.1, 0.2], "custom", {})
    with pytest.raises(DomainError):
        PointScaleSystem([1.5], [0.1], "custom", {})


def test_regenerate_and_roundtrip(tmp_path):
    s = regenerate("poisson", {"gamma": 1.0, "lam_min": 1e-3}, seed=5)
    path = tmp_path / "s.json"
    save_system(s, path, {"command": "test"})
    back = load_system(path)
    assert np.array_equal(back.points, s.points) and np.array_equal(back.scales, s.scales)
    with pytest.raises(DomainError):
        regenerate("nope", {})
    with pytest.raises(KeyError):
        regenerate("badic", {"b": 2})

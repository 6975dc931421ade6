from fractions import Fraction
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ubiquity.errors import DomainError
from ubiquity.redundancy import (analyze, greedy_coloring, growth_slope, irrationality_measure, max_overlap_1d,
                                 nalpha_redundancy_crosscheck, sample_multiplicity)
from ubiquity.systems import PointScaleSystem, gen_badic, gen_rationals, stacked


def chromatic_number(centers, radii):
    """Smallest k admitting a proper colouring of the closed-interval overlap graph (exhaustive)."""
    n = len(centers)
    if n == 0:
        return 0
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)
             if abs(centers[i] - centers[j]) <= radii[i] + radii[j]]
    for k in range(1, n + 1):
        for colours in product(range(k), repeat=n):
            if colours[0] == 0 and all(colours[i] != colours[j] for i, j in edges):
                return k
    return n


intervals = st.lists(st.tuples(st.integers(0, 40), st.integers(1, 8)), min_size=0, max_size=8)


@settings(max_examples=80, deadline=None)
@given(intervals)
def test_overlap_equals_chromatic_number(data):
    x = [a / 40 for a, _ in data]
    r = [b / 40 for _, b in data]
    k = chromatic_number(x, r)
    assert max_overlap_1d(x, r) == k
    assert greedy_coloring(np.array(x)[:, None], r) >= k if data else True


def test_chromatic_oracle_twelve_intervals():
    gen = np.random.default_rng(0)
    for _ in range(3):
        x = gen.integers(0, 30, 12) / 30
        r = gen.integers(1, 4, 12) / 30
        assert max_overlap_1d(x, r) == chromatic_number(list(x), list(r))


def test_touching_intervals_overlap():
    assert max_overlap_1d([0.0, 0.5], [0.25, 0.25]) == 2
    assert max_overlap_1d([0.0, 0.5], [0.2, 0.2]) == 1


def test_bracket_in_two_dimensions():
    gen = np.random.default_rng(1)
    x = gen.random((200, 2))
    r = np.full(200, 0.03)
    lo, hi = sample_multiplicity(x, r), greedy_coloring(x, r)
    assert 1 <= lo <= hi


def test_disjoint_family():
    s = PointScaleSystem(np.arange(8) / 8 + 1 / 16, np.full(8, 1 / 64), "custom", {})
    rep = analyze(s)
    assert rep.n_upper == [1]


def test_badic_bounded_overlap():
    rep = analyze(gen_badic(2, 1, 16), (1, 16))
    assert max(rep.n_upper) <= 9
    assert rep.weakly_redundant


def test_stacked_not_weakly_redundant():
    rep = analyze(stacked(14), (1, 14))
    assert rep.n_upper == [2 ** j for j in range(1, 15)]
    assert rep.slope == pytest.approx(1.0)
    assert not rep.weakly_redundant


def test_two_dimensional_badic_report():
    rep = analyze(gen_badic(2, 2, 5), (1, 5))
    assert not rep.exact
    assert all(lo <= hi for lo, hi in zip(rep.n_lower, rep.n_upper))
    assert max(rep.n_upper) <= 81


def test_rationals_report_runs():
    rep = analyze(gen_rationals(200, 1), (2, 12))
    assert len(rep.rows()) == 11


def test_growth_slope_skips_empty():
    slope, ratio, local = growth_slope([1, 2, 3, 4], [2, 0, 8, 16])
    assert slope == pytest.approx(1.0, abs=0.1)
    assert len(local) == 2


@pytest.mark.parametrize("name", ["golden", "sqrt2"])
def test_bounded_quotients_give_two(name):
    est = irrationality_measure(name, 60)
    assert abs(est.xi[-1] - 2.0) < 0.05
    assert 2.0 <= est.estimate <= 2.05


def test_liouville_exponents_blow_up():
    est = irrationality_measure("liouville", 7)
    late = [x for k, x in zip(est.k_index, est.xi) if k > 3]
    assert late and all(x > 3 for x in late)


def test_rational_raises():
    with pytest.raises(DomainError):
        irrationality_measure(Fraction(3, 7))
    with pytest.raises(DomainError):
        nalpha_redundancy_crosscheck(Fraction(3, 7), 1000)


def test_crosscheck_golden():
    out = nalpha_redundancy_crosscheck("golden", 1 << 16)
    assert out.report.slope < 0.05
    assert 2.0 <= out.irrationality.estimate <= 2.05
    assert out.agree


def test_crosscheck_truncated_liouville(liouville_literal):
    out = nalpha_redundancy_crosscheck(liouville_literal, 1 << 16)
    assert max(out.report.local_slopes) > 0.2
    assert out.irrationality.estimate > 3
    assert out.irrationality.truncated
    assert out.agree


def test_eventually_periodic_tail_reads_as_two():
    # a_k = 1 after four blow-ups: the exponent estimate returns to 2 and the scans disagree with it
    out = nalpha_redundancy_crosscheck("liouville:4", 1 << 16)
    assert out.irrationality.estimate < 2.05
    assert max(out.report.local_slopes) > 0.2

import math
from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ubiquity.cantor import (CantorConfig, CantorTree, audit_scaling, build, build_rho, check_invariants,
                             grid_count_certificate, greedy_disjoint, max_box_in_ball, node_exponents,
                             ramp_schedule, tree_exponent)
from ubiquity.errors import ConstructionError, DomainError, ResourceError
from ubiquity.measures import MultinomialSpec, multinomial_exact_mass
from ubiquity.spectrum import Gauge, GaugeParams
from ubiquity.systems import gen_badic, gen_rationals

H = -(0.8 * math.log2(0.8) + 0.2 * math.log2(0.2))


# ---------------------------------------------------------------- greedy disjoint selection


def test_greedy_keeps_disjoint_family():
    out = greedy_disjoint([0.1, 0.4, 0.8], [0.05, 0.05, 0.05], [1.0, 2.0, 3.0])
    assert sorted(out.kept.tolist()) == [0, 1, 2]
    assert out.captured == 6.0


def test_greedy_overlapping_pair():
    out = greedy_disjoint([0.5, 1.0], [0.5, 0.5], [1.0, 1.0])
    assert out.kept.tolist() == [0]


def test_greedy_empty():
    out = greedy_disjoint([], [], [])
    assert out.kept.size == 0 and out.captured == 0.0


def _best_disjoint(x, r, w):
    n = len(x)
    best = 0.0
    for size in range(1, n + 1):
        for sub in combinations(range(n), size):
            if all(abs(x[a] - x[b]) > r[a] + r[b] for a, b in combinations(sub, 2)):
                best = max(best, sum(w[i] for i in sub))
    return best


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 200), st.integers(10, 19)), min_size=1, max_size=12))
def test_greedy_against_exhaustive_optimum(data):
    """Radii within a factor 2, masses = lengths: greedy keeps >= opt/3 and >= union/K."""
    x = [a / 100 for a, _ in data]
    r = [b / 1000 for _, b in data]
    w = [2 * v for v in r]
    union = _union_length(x, r)
    out = greedy_disjoint(x, r, w, c=2, union_mass=union)
    opt = _best_disjoint(x, r, w)
    assert out.captured >= opt / 3 - 1e-12
    assert out.meets_bound
    kept = out.kept.tolist()
    assert all(abs(x[a] - x[b]) > r[a] + r[b] for a, b in combinations(kept, 2))


def test_greedy_fifteen_balls():
    gen = np.random.default_rng(7)
    x = list(gen.random(15))
    r = list(gen.uniform(0.02, 0.04, 15))
    w = [2 * v for v in r]
    out = greedy_disjoint(x, r, w, union_mass=_union_length(x, r))
    assert out.captured >= _best_disjoint(x, r, w) / 3
    assert out.meets_bound


def _union_length(x, r):
    segs = sorted((a - b, a + b) for a, b in zip(x, r))
    total, cur_lo, cur_hi = 0.0, *segs[0]
    for lo, hi in segs[1:]:
        if lo > cur_hi:
            total += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    return total + cur_hi - cur_lo


# ---------------------------------------------------------------- exact geometry


def _inside(v, base, expo):
    return v <= 0 or v ** expo.denominator < base ** expo.numerator


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 256), st.integers(3, 7), st.sampled_from([Fraction(1), Fraction(3, 2), Fraction(2)]))
def test_max_box_in_ball_matches_brute_force(i, j, expo):
    c = 2
    center = Fraction(i, 256)
    base = Fraction(2, c ** j)
    expected = None
    for g in range(0, 24):
        h = Fraction(1, c ** g)
        lo = max(0, math.floor(center / h) - 2 ** 12)
        for kk in range(lo, min(c ** g, math.floor(center / h) + 2)):
            if _inside(center - kk * h, base, expo) and _inside((kk + 1) * h - center, base, expo):
                expected = (g, kk)
                break
        if expected:
            break
    assert max_box_in_ball(center, base, expo, c) == expected


@pytest.mark.parametrize("j", [4, 8, 12, 16])
@pytest.mark.parametrize("rho", [0.25, 0.5, 0.75])
def test_grid_count_certificate(j, rho):
    for y in (Fraction(1, 3), Fraction(5, 7), Fraction(1, 2), Fraction(1234567, 9999991)):
        count, need = grid_count_certificate(j, rho, y)
        assert count >= need
        # brute-force count of k with |k 2^-j - y| < 2^{-rho j}
        r = 2.0 ** (-rho * j)
        lo, hi = math.floor((float(y) - r) * 2 ** j) - 1, math.ceil((float(y) + r) * 2 ** j) + 1
        brute = sum(1 for k in range(lo, hi + 1) if abs(k / 2 ** j - float(y)) < r)
        assert abs(brute - count) <= 1  # float boundary only


# ---------------------------------------------------------------- configuration


def test_config_validation():
    with pytest.raises(DomainError):
        CantorConfig(m="lebesgue:2", system=gen_rationals(10))
    with pytest.raises(DomainError):
        CantorConfig(m="lebesgue:2", system=gen_badic(3, 1, 3))
    CantorConfig(m="lebesgue:2", system=gen_badic(2, 1, 3))
    with pytest.raises(DomainError):
        CantorConfig(m=[[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(DomainError):
        CantorConfig(m="lebesgue:2", delta=[2.0, 1.5], generations=2)
    with pytest.raises(DomainError):
        CantorConfig(m="lebesgue:2", delta=0.5)
    with pytest.raises(DomainError):
        CantorConfig(m="lebesgue:2", exact=True, generations=6)
    with pytest.raises(DomainError):
        build(CantorConfig(m="lebesgue:2", rho=0.5))


def test_ramp_schedule():
    assert ramp_schedule(2.0, 4) == [1.25, 1.5, 1.75, 2.0]


# ---------------------------------------------------------------- constructions


@pytest.fixture(scope="module")
def monofractal():
    return build(CantorConfig(m="lebesgue:2", delta=2.0, generations=3))


def test_monofractal_three_generations(monofractal):
    assert all(n > 0 for n in monofractal.sizes())
    assert check_invariants(monofractal) == []
    gp = GaugeParams()
    for gen in monofractal.generations[1:]:
        for nd in gen:
            size = 2.0 ** -nd.g
            phi = gp.phi.at_log(nd.g * math.log(2))
            assert nd.log_mass <= (0.5 - 2 * phi) * math.log(size) + 1e-12


def test_delta_one_is_m_itself():
    exact = MultinomialSpec(((Fraction(4, 5), Fraction(1, 5)),))
    tree = build(CantorConfig(m=[Fraction(4, 5), Fraction(1, 5)], delta=1.0, generations=3, exact=True))
    assert check_invariants(tree) == []
    for gen in tree.generations[1:]:
        assert sum(nd.mass for nd in gen) == 1
        for nd in gen:
            assert nd.mass == multinomial_exact_mass(exact, nd.g, nd.k)


def test_heterogeneous_property_iv():
    cfg = CantorConfig(m=[0.8, 0.2], delta=1.5, generations=3)
    assert cfg.beta == pytest.approx(H, abs=1e-12)
    tree = build(cfg)
    assert check_invariants(tree) == []
    assert all(nd.log_mass <= nd.bound + 1e-12 for gen in tree.generations[1:] for nd in gen)


def test_exact_masses_conserved():
    tree = build(CantorConfig(m="lebesgue:2", delta=1.5, generations=2, exact=True))
    assert check_invariants(tree) == []
    for gen in tree.generations[1:]:
        assert sum(nd.mass for nd in gen) == 1


def test_rho_construction_property_iv():
    """rho = 1/2, delta = 1.2: nodes obey the (1 - rho + rho beta)/d_p - 2 phi - chi bound."""
    cfg = CantorConfig(m="lebesgue:2", delta=1.2, rho=0.5, generations=2)
    tree = build_rho(cfg)
    assert check_invariants(tree) == []
    assert min(tree.sizes()) >= 1
    assert all(nd.audit["S"] >= 1 for nd in tree.leaves)
    assert all(nd.log_mass <= nd.bound + 1e-12 for gen in tree.generations[1:] for nd in gen)


def test_rho_one_limit_matches_build():
    a = build(CantorConfig(m="lebesgue:2", delta=1.5, generations=2))
    b = build_rho(CantorConfig(m="lebesgue:2", delta=1.5, generations=2, rho=1.0))
    assert [(n.g, n.k, n.log_mass) for n in a.leaves] == [(n.g, n.k, n.log_mass) for n in b.leaves]


def test_construction_failure_diagnostic():
    with pytest.raises(ConstructionError) as err:
        build(CantorConfig(m="lebesgue:2", delta=2.0, generations=4, j_cap=6))
    diag = err.value.diagnostic
    assert diag["failed"].startswith("node mass bound")
    assert {"generation", "box", "t", "log_excess"} <= set(diag)


def test_node_budget():
    with pytest.raises(ResourceError):
        build(CantorConfig(m="lebesgue:2", delta=2.0, generations=3, node_budget=20))


def test_tree_roundtrip(tmp_path, monofractal):
    path = tmp_path / "tree.json"
    monofractal.save(path, {"command": "test"})
    back = CantorTree.load(path)
    assert back.sizes() == monofractal.sizes()
    assert [(n.g, n.k) for n in back.leaves] == [(n.g, n.k) for n in monofractal.leaves]
    assert check_invariants(back) == []


def test_tampered_tree_is_caught(monofractal):
    tree = CantorTree.from_dict(monofractal.to_dict())
    tree.leaves[0].log_mass += 1.0
    bad = check_invariants(tree)
    assert any("mass bound" in b for b in bad)
    assert any("sum to the parent" in b for b in bad)


# ---------------------------------------------------------------- scaling audit


@pytest.fixture(scope="module")
def ramp_tree():
    return build(CantorConfig(m="lebesgue:2", delta=ramp_schedule(2.0, 4), generations=4))


def test_audit_report_shape(ramp_tree):
    audit = audit_scaling(ramp_tree, n_balls=2000)
    assert audit.D == tree_exponent(ramp_tree.config) == 0.5
    assert len(audit.decades) >= 3
    assert sum(audit.counts) <= 2000
    assert audit.passed
    assert audit_scaling(ramp_tree, n_balls=2000).to_dict() == audit.to_dict()


def test_audit_detects_wrong_exponent_with_small_gauge(ramp_tree):
    """With the gauge switched off the ratios are raw m(B)/|B|^D, and D = 1 is far too large."""
    zero = GaugeParams(Gauge("zero"), Gauge("zero"), Gauge("zero"))
    assert not audit_scaling(ramp_tree, gauges=zero, D=1.0).passed


def test_audit_local_exponent_is_one_half(ramp_tree):
    """Local exponent of m_delta on the monofractal testbed: expected 1/2 +- 0.1.

    Red at desk scale: the measured exponent is about 0.15 (see the notes in the README).
    """
    audit = audit_scaling(ramp_tree)
    assert audit.local_exponent == pytest.approx(0.5, abs=0.1)


def test_node_exponents_positive(ramp_tree):
    e = node_exponents(ramp_tree)
    assert e.size == sum(ramp_tree.sizes()) - 1
    assert np.all(e > 0)

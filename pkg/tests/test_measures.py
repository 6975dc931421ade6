import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp

from ubiquity.cgrid import CAdicBox
from ubiquity.errors import DomainError, ResolutionError, ResourceError
from ubiquity.measures import (CascadeSpec, CpcSpec, GibbsSpec, MultinomialSpec, additivity_error, ball_mass,
                               ball_mass_many, box_mass, build_cascade, build_cpc, build_gibbs_finite,
                               build_multinomial, lebesgue, load_measure, measure_from_json, measure_to_json,
                               multinomial_exact_mass, multinomial_log_mass, multinomial_log_mass_many,
                               save_measure, tilt_multinomial)

BINOMIAL = MultinomialSpec(((0.8, 0.2),))


def test_uniform_multinomial_is_lebesgue():
    for c, d in ((2, 1), (3, 1), (2, 2)):
        mu = lebesgue(c, d, 5)
        for j in range(6):
            assert np.allclose(mu.level(j), -j * d * math.log(c), atol=1e-12)


def test_multinomial_rejects_zero_weight():
    with pytest.raises(DomainError):
        MultinomialSpec(((1.0, 0.0),))
    with pytest.raises(DomainError):
        MultinomialSpec(((0.5, 0.6),))


def test_tilt_examples():
    assert np.allclose(np.array(tilt_multinomial(BINOMIAL, 1).weights, float), [[0.8, 0.2]], atol=1e-15)
    assert np.allclose(np.array(tilt_multinomial(BINOMIAL, 0).weights, float), 0.5)
    w = np.array(tilt_multinomial(BINOMIAL, 2).weights, float)[0]
    assert w == pytest.approx([0.64 / 0.68, 0.04 / 0.68], abs=1e-12)
    assert w == pytest.approx([0.94118, 0.05882], abs=1e-5)


def test_box_mass_examples():
    mu = build_multinomial(BINOMIAL, 6)
    assert box_mass(mu, CAdicBox(2, 0, (0,))) == pytest.approx(mu.total_log_mass, abs=1e-15)
    assert box_mass(mu, CAdicBox(2, 2, (3,))) == pytest.approx(math.log(0.04), abs=1e-12)
    leb = lebesgue(3, 2, 3)
    assert box_mass(leb, CAdicBox(3, 3, (4, 25))) == pytest.approx(-3 * 2 * math.log(3), abs=1e-12)
    with pytest.raises(ResolutionError):
        box_mass(mu, CAdicBox(2, 7, (0,)))


def test_closed_form_masses_match_stored_levels():
    mu = build_multinomial(BINOMIAL, 12)
    k = np.arange(2 ** 12)
    assert np.allclose(multinomial_log_mass_many(BINOMIAL, 12, k), mu.level(12), atol=1e-12)
    assert multinomial_log_mass(BINOMIAL, 12, 77) == pytest.approx(mu.level(12)[77], abs=1e-12)


def test_exact_mass_is_product_of_weights():
    spec = MultinomialSpec(((Fraction(4, 5), Fraction(1, 5)),))
    assert multinomial_exact_mass(spec, 2, 3) == Fraction(1, 25)
    assert sum(multinomial_exact_mass(spec, 5, k) for k in range(32)) == 1


@pytest.mark.parametrize("mu", [
    build_multinomial(BINOMIAL, 10),
    build_multinomial(MultinomialSpec(((0.5, 0.3, 0.2), (0.1, 0.6, 0.3))), 4),
    build_cascade(CascadeSpec(2, 1, {"type": "gaussian", "mean": -0.05, "variance": 0.1}, 10, 3)),
    build_cpc(CpcSpec(0.5, 0.02, seed=1), 10),
    build_gibbs_finite(GibbsSpec(2, 1, {"type": "cosine", "amplitude": 0.7}, 8)),
], ids=["multinomial", "multinomial-2d", "cascade", "cpc", "gibbs"])
def test_additivity(mu):
    assert additivity_error(mu) <= 1e-9


def test_normalization_multinomial_and_gibbs():
    assert build_multinomial(BINOMIAL, 8).total_log_mass == pytest.approx(0.0, abs=1e-9)
    g = build_gibbs_finite(GibbsSpec(3, 1, {"type": "cosine"}, 5))
    assert g.total_log_mass == pytest.approx(0.0, abs=1e-9)


def test_gibbs_constant_is_lebesgue():
    for pot in ({"type": "constant", "value": 0.0}, {"type": "constant", "value": 2.5}):
        g = build_gibbs_finite(GibbsSpec(2, 1, pot, 6))
        assert np.allclose(g.level(6), -6 * math.log(2), atol=1e-12)


def test_gibbs_piecewise_matches_multinomial():
    vals = [0.3, -1.1, 0.4]
    g = build_gibbs_finite(GibbsSpec(3, 1, {"type": "piecewise", "level": 1, "values": vals}, 6))
    w = np.exp(vals) / np.exp(vals).sum()
    m = build_multinomial(MultinomialSpec((tuple(w),)), 6)
    for j in range(7):
        assert np.allclose(g.level(j), m.level(j), atol=1e-12)


def test_cascade_constant_is_lebesgue():
    mu = build_cascade(CascadeSpec(2, 1, {"type": "constant", "value": 0.7}, 8))
    assert np.allclose(mu.level(8), -8 * math.log(2), atol=1e-12)


def test_cascade_gaussian_log_mgf():
    spec = CascadeSpec(2, 1, {"type": "gaussian", "mean": -0.2, "variance": 0.3}, 4)
    for q in (0.0, 0.5, 2.0):
        assert spec.L(q) == pytest.approx(math.log(2) + q * -0.2 + q * q * 0.3 / 2)


def test_cascade_rejects_unnormalizable():
    with pytest.raises(DomainError):
        CascadeSpec(2, 1, {"type": "gaussian", "mean": 0.0, "variance": math.inf}, 4)


def test_cascade_mean_total_mass_is_one():
    masses = [math.exp(build_cascade(CascadeSpec(2, 1, {"type": "gaussian", "mean": -0.05, "variance": 0.1},
                                                 6, s)).total_log_mass) for s in range(1000)]
    se = np.std(masses, ddof=1) / math.sqrt(len(masses))
    assert abs(np.mean(masses) - 1.0) <= 3 * se


def test_cpc_mean_total_mass_is_one():
    masses = [math.exp(build_cpc(CpcSpec(0.3, 0.05, seed=s), 6).total_log_mass) for s in range(1000)]
    se = np.std(masses, ddof=1) / math.sqrt(len(masses))
    assert abs(np.mean(masses) - 1.0) <= 3 * se


def test_cpc_small_xi_tends_to_lebesgue():
    mu = build_cpc(CpcSpec(1e-9, 0.1, seed=0), 6)
    assert np.allclose(mu.level(6), -6 * math.log(2), atol=1e-6)


def test_cpc_point_budget():
    with pytest.raises(ResourceError):
        build_cpc(CpcSpec(10.0, 1e-9, seed=0), 4)


def test_determinism():
    spec = CascadeSpec(2, 1, {"type": "gaussian", "mean": -0.05, "variance": 0.1}, 10, 42)
    a, b = build_cascade(spec), build_cascade(spec)
    assert all(np.array_equal(x, y) for x, y in zip(a.log_mass, b.log_mass))
    c, d = build_cpc(CpcSpec(0.5, 0.02, seed=9), 8), build_cpc(CpcSpec(0.5, 0.02, seed=9), 8)
    assert all(np.array_equal(x, y) for x, y in zip(c.log_mass, d.log_mass))


def test_ball_mass_lebesgue_converges():
    mu = lebesgue(2, 1, 20)
    widths = []
    for margin in (2, 6, 12):
        lo, up = ball_mass(mu, 0.5 + 1e-7, 0.25, margin)
        assert lo <= math.log(0.5) <= up
        widths.append(up - lo)
    assert widths[0] >= widths[1] >= widths[2]
    assert widths[2] < 1e-3


def test_ball_mass_aligned_box_is_exact():
    mu = build_multinomial(BINOMIAL, 12)
    lo, up = ball_mass(mu, 0.375, 0.125, 4)  # B = [0.25, 0.5) up to null sets
    assert lo == pytest.approx(up, abs=1e-12)
    assert lo == pytest.approx(box_mass(mu, CAdicBox(2, 2, (1,))), abs=1e-12)


def test_ball_mass_bracket_against_exhaustive_sum():
    mu = build_multinomial(BINOMIAL, 22)
    gen = np.random.default_rng(5)
    x = gen.random(200)
    r = 10 ** gen.uniform(-4, -1, 200)
    lo, up = ball_mass_many(mu, x, r, 8)
    fine = mu.level(22)
    n = 2 ** 22
    for xi, ri, a, b in zip(x, r, lo, up):
        # depth-22 boxes inside / meeting the open ball bracket the true mass
        inner = logsumexp(fine[max(0, math.ceil((xi - ri) * n)):min(n, math.floor((xi + ri) * n))])
        outer = logsumexp(fine[max(0, math.floor((xi - ri) * n)):min(n, math.ceil((xi + ri) * n))])
        assert a <= outer + 1e-9 and b >= inner - 1e-9
        assert math.exp(b) - math.exp(a) <= 0.05 * math.exp(b)


def test_ball_mass_resolution_error():
    mu = lebesgue(2, 1, 10)
    with pytest.raises(ResolutionError):
        ball_mass(mu, 0.5, 2 ** -9, 8)


@settings(max_examples=30)
@given(st.floats(0, 1, exclude_max=True), st.floats(1e-3, 0.5))
def test_ball_mass_many_matches_scalar(x, r):
    mu = build_multinomial(BINOMIAL, 18)
    lo, up = ball_mass_many(mu, np.array([x]), np.array([r]), 6)
    assert (lo[0], up[0]) == pytest.approx(ball_mass(mu, x, r, 6))


def test_save_load_roundtrip(tmp_path):
    mu = build_cascade(CascadeSpec(2, 1, {"type": "gaussian", "mean": -0.05, "variance": 0.1}, 8, 1))
    path = tmp_path / "m.bin"
    save_measure(mu, path, manifest={"command": "test"})
    back = load_measure(path)
    assert back.kind == mu.kind and back.J_max == mu.J_max and back.spec == mu.spec
    assert all(np.array_equal(a, b) for a, b in zip(mu.log_mass, back.log_mass))
    again = measure_from_json(measure_to_json(mu))
    assert all(np.array_equal(a, b) for a, b in zip(mu.log_mass, again.log_mass))

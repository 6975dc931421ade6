import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ubiquity.errors import DomainError
from ubiquity.measures import MultinomialSpec, build_multinomial, lebesgue
from ubiquity.spectrum import (EMPTY, DimFormulaInputs, Gauge, GaugeParams, concavity_violations, dim_formula,
                               eps_schedule, legendre, log_partition, multinomial_tau_star, partition_exponent,
                               spectrum, tau_fit, theorem1_upper_bound)

BINOMIAL = MultinomialSpec(((0.8, 0.2),))
H = -(0.8 * math.log2(0.8) + 0.2 * math.log2(0.2))


@pytest.fixture(scope="module")
def binomial12():
    return build_multinomial(BINOMIAL, 12)


def test_partition_exponent_examples(binomial12):
    leb = lebesgue(2, 1, 10)
    for j in range(1, 11):
        assert partition_exponent(leb, [-1.5, 0.0, 2.0], j) == pytest.approx([-2.5, -1.0, 1.0], abs=1e-12)
        assert partition_exponent(binomial12, 1.0, j) == pytest.approx(0.0, abs=1e-12)
        assert partition_exponent(binomial12, 2.0, j) == pytest.approx(-math.log2(0.68), abs=1e-12)
    assert -math.log2(0.68) == pytest.approx(0.5564, abs=1e-4)


def test_negative_q_needs_full_support():
    mu = build_multinomial(BINOMIAL, 4)
    lv = list(mu.log_mass)
    lv[4] = lv[4].copy()
    lv[4][0] = -np.inf
    holed = type(mu)(mu.geom, mu.J_max, tuple(lv), "custom", {}, None)
    with pytest.raises(DomainError):
        log_partition(holed, -1.0, 4)
    assert np.isfinite(log_partition(holed, 2.0, 4)[0])


def test_tau_fit_needs_four_scales(binomial12):
    with pytest.raises(DomainError):
        tau_fit(binomial12, [1.0], (5, 7))


def test_tau_fit_lebesgue_2d():
    q = np.linspace(-3, 3, 13)
    table = tau_fit(lebesgue(2, 2, 6), q, (2, 6))
    assert table.tau == pytest.approx(2 * (q - 1), abs=1e-12)
    assert np.all(table.r2 > 1 - 1e-12)


def test_fitted_tau_is_concave(binomial12):
    q = np.linspace(-5, 5, 101)
    table = tau_fit(binomial12, q, (4, 12))
    assert table.concavity_violations == []
    assert concavity_violations(q, q ** 2) != []


def test_legendre_linear_tau():
    for width in (2, 5, 20):
        q = np.linspace(-width, width, 41)
        vals = legendre(q, q - 1, [1.0, 0.9, 1.1])
        assert vals[0] == pytest.approx(1.0)
        assert vals[1] == -np.inf and vals[2] == -np.inf


def test_legendre_at_entropy(binomial12):
    q = np.round(np.arange(-5, 5.0001, 0.1), 10)
    table = spectrum(binomial12, q, (4, 12), np.array([H]))
    assert table.tau_star[0] == pytest.approx(H, abs=1e-9)


def test_legendre_endpoint_tends_to_zero(binomial12):
    alpha = -math.log2(0.8)
    vals = []
    for top in (5, 20, 60):
        q = np.linspace(-top, top, 40 * top + 1)
        vals.append(float(legendre(q, BINOMIAL.tau(q), [alpha])[0]))
    assert vals[0] == -np.inf  # q = 5 grid: the asymptotic slope is not attained yet
    assert abs(vals[1]) < 1e-6 and abs(vals[2]) < 1e-9
    assert multinomial_tau_star(BINOMIAL, alpha) == 0.0


def test_multinomial_tau_star_closed_form():
    assert multinomial_tau_star(BINOMIAL, H) == pytest.approx(H, abs=1e-12)
    assert multinomial_tau_star(BINOMIAL, 5.0) == -math.inf
    assert multinomial_tau_star(MultinomialSpec.uniform(2), 1.0) == pytest.approx(1.0)


@given(st.floats(-4, 4))
def test_duality_identity(q):
    alpha = float(BINOMIAL.tau_prime(q))
    expected = q * alpha - float(BINOMIAL.tau(q))
    assert multinomial_tau_star(BINOMIAL, alpha) == pytest.approx(expected, abs=1e-8)


def test_dim_formula_examples():
    assert dim_formula(DimFormulaInputs(0.7, 1.0, 2.0)).D == pytest.approx(0.35)
    assert dim_formula(DimFormulaInputs(0.7, 1.0, 2.0)).delta_star == 1.0
    out = dim_formula(DimFormulaInputs(0.5, 0.5, 1.0))
    assert (out.D, out.delta_star, out.saturated) == (0.5, 1.5, True)
    assert dim_formula(DimFormulaInputs(0.5, 0.5, 3.0)).D == 0.25
    with pytest.raises(DomainError):
        DimFormulaInputs(0.5, 0.5, 0.9)


@given(st.floats(0.01, 1.0), st.floats(0.05, 1.0), st.floats(1.0, 10.0), st.floats(0.0, 1.0))
def test_dim_formula_non_increasing_in_delta(beta, rho, delta, step):
    a = dim_formula(DimFormulaInputs(beta, rho, delta)).D
    b = dim_formula(DimFormulaInputs(beta, rho, delta + step)).D
    assert b <= a
    assert a <= beta


def test_upper_bound_examples():
    assert theorem1_upper_bound(-0.1, 1.0, 2.0) is EMPTY
    assert theorem1_upper_bound(-math.inf, 1.0, 2.0) is EMPTY
    assert theorem1_upper_bound(1.0, 1.0, 2.5) == pytest.approx(0.4)
    assert theorem1_upper_bound(2.0, 1.0, 4.0, d=2) == pytest.approx(0.5)
    assert theorem1_upper_bound(0.3, 0.5, 2.0) == pytest.approx(0.3)


def test_eps_schedule_with_zero_gauges():
    zero = GaugeParams(Gauge("zero"), Gauge("zero"), Gauge("zero"))
    lam = np.array([1e-2, 1e-4, 1e-8])
    alpha = 0.7
    assert eps_schedule(1.0, alpha, zero, lam) == pytest.approx(alpha * math.log(2) / np.abs(np.log(lam)))


def test_eps_schedule_tends_to_zero():
    lam = 10.0 ** -np.array([3, 10, 30, 100, 300])
    eps = eps_schedule(2.0, 0.7, GaugeParams(), lam)
    assert np.all(np.diff(eps) < 0)
    assert eps[-1] < eps[0] / 2
    with pytest.raises(DomainError):
        eps_schedule(2.0, 0.7, GaugeParams(), 0.5)


def test_gauges_monotone_and_vanishing():
    L = np.linspace(1, 1e6, 5000)
    for g in (Gauge("phi_C", C=1.0), Gauge("psi_gamma", gamma=1.0), Gauge("phi_tilde", kappa=0.5)):
        v = g.at_log(L)  # r decreases as L grows, so the gauge must not increase
        assert np.all(np.diff(v) <= 1e-15)
        assert g.at_log(1e300) < v[0]
    assert Gauge("zero")(0.01) == 0.0
    gp = GaugeParams()
    assert gp.xi_at_log(50.0, 1) == pytest.approx(5 * gp.phi.at_log(50.0))

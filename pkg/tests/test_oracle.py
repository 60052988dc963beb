import math

import numpy as np
import pytest
from scipy import integrate, special

from selfdiff.exact import interval_transitions
from selfdiff.gain import ConstantGain, LogGrowthGain, PowerLogGain, UnsupportedRegimeError
from selfdiff.oracle import QuadraticLaw, limit_measure, ou_ergodic_variance


@pytest.fixture(scope="module")
def unit():
    return QuadraticLaw(1.0, ConstantGain(1.0), 1.0, x0=1.0, mu_bar0=0.0)


@pytest.fixture(scope="module")
def linear():
    return QuadraticLaw(1.0, PowerLogGain(alpha=1.0), 1.0, x0=1.0, mu_bar0=0.0)


def test_F_infinity_closed_form(unit):
    # int_0^inf e^{-s} / (1 + s) ds = e E1(1)
    assert unit.F(math.inf) == pytest.approx(math.e * special.exp1(1.0), rel=1e-13)


def test_H_infinity_equals_K0(unit):
    assert unit.H(math.inf) == pytest.approx(unit.K(0.0), rel=1e-12)
    assert unit.K(0.0) == pytest.approx(0.40365263767680454, rel=1e-12)


def test_K_against_scipy_quad(unit, linear):
    for law in (unit, linear):
        for s in (0.0, 0.7, 12.0):
            G = law.gain.G
            ref = integrate.quad(lambda u: math.exp(-(G(u) - G(s))) / (1 + u) ** 2,
                                 s, math.inf, epsabs=0, epsrel=1e-12, limit=400)[0]
            assert law.K(s) == pytest.approx(ref, rel=1e-9)


def test_law_of_Y_unit_gain(unit):
    m, v = unit.law_of_Y(1.0)
    assert m == pytest.approx(0.5 * math.exp(-1.0), rel=1e-14)
    ref = integrate.quad(lambda s: ((1 + s) / 2.0) ** 2 * math.exp(-2 * (1 - s)), 0, 1,
                         epsabs=0, epsrel=1e-13)[0]
    assert v == pytest.approx(ref, rel=1e-10)
    assert (m, v) == pytest.approx((0.18394, 0.30404), abs=1e-5)


def test_frozen_unit_gain_values(unit):
    # frozen from the Lyapunov-ODE route below
    assert unit.var_Y(5.0) == pytest.approx(0.42361079583382, rel=1e-9)
    assert unit.var_mubar(5.0) == pytest.approx(0.22843821635, rel=1e-8)
    assert unit.var_mubar(math.inf) == pytest.approx(0.38003779637913, rel=1e-9)


def test_frozen_linear_gain_values(linear):
    assert linear.var_mubar(1000.0) == pytest.approx(0.08078012448, rel=1e-8)
    assert linear.mean_mubar(math.inf) == pytest.approx(0.34432045758, rel=1e-9)


@pytest.mark.parametrize("gain", [ConstantGain(1.0), PowerLogGain(alpha=1.0),
                                  LogGrowthGain(a=1.0, g0=0.5)])
@pytest.mark.parametrize("t", [0.5, 5.0, 40.0])
def test_moments_match_lyapunov_ode(gain, t):
    # independent route: integrate the second-moment ODE from a deterministic start
    law = QuadraticLaw(1.3, gain, 2.0, x0=1.0, mu_bar0=0.2)
    phi_yy, phi_my, p_yy, p_ym, p_mm = interval_transitions(1.3, gain, 2.0, [0.0, t])[0]
    assert law.var_Y(t) == pytest.approx(p_yy, rel=1e-7)
    assert law.var_mubar(t) == pytest.approx(p_mm, rel=1e-7)
    assert law.cov_Y_mubar(t) == pytest.approx(p_ym, rel=1e-7, abs=1e-12)
    y0 = 1.0 - 0.2
    assert law.mean_Y(t) == pytest.approx(phi_yy * y0, rel=1e-7)
    assert law.mean_mubar(t) == pytest.approx(0.2 + phi_my * y0, rel=1e-7)


@pytest.mark.parametrize("t", [0.3, 3.0, 30.0])
def test_variance_of_X_decomposition(linear, t):
    total = linear.var_Y(t) + linear.var_mubar(t) + 2 * linear.cov_Y_mubar(t)
    assert linear.var_X(t) == pytest.approx(total, rel=1e-9)


@pytest.mark.parametrize("t", [0.0, 1.0, 10.0, math.inf])
def test_mean_X_two_routes(unit, t):
    if math.isinf(t):
        direct = unit.mean_X_direct(t)
        assert float(unit.mean_mubar(t)) == pytest.approx(float(direct), rel=1e-12)
    else:
        assert float(unit.mean_X(t)) == pytest.approx(float(unit.mean_X_direct(t)), rel=1e-12)


def test_vector_start_broadcasts():
    law = QuadraticLaw(1.0, ConstantGain(1.0), 1.0, x0=[1.0, -2.0], mu_bar0=[0.0, 1.0])
    m = law.mean_Y(1.0)
    np.testing.assert_allclose(m, np.array([1.0, -3.0]) * 0.5 * math.exp(-1.0))


def test_zero_time(unit):
    assert unit.var_Y(0.0) == 0.0
    assert unit.var_mubar(0.0) == 0.0
    assert float(unit.mean_mubar(0.0)) == 0.0


def test_table_columns(unit):
    tab = unit.table([0.0, 1.0])
    assert tab.shape == (2, len(QuadraticLaw.TABLE_COLUMNS))
    assert tab[1, 2] == pytest.approx(unit.var_Y(1.0))


def test_limit_measure_bounded_gain(unit):
    lim = limit_measure(unit)
    assert lim.variance == pytest.approx(0.5)
    assert lim.g_limit == pytest.approx(1.0)
    assert float(lim.mubar_inf_mean) == pytest.approx(0.40365263767680454, rel=1e-12)


def test_limit_measure_refuses_growing_gain(linear):
    with pytest.raises(UnsupportedRegimeError):
        limit_measure(linear)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        QuadraticLaw(0.0, ConstantGain(1.0), 1.0)
    with pytest.raises(ValueError):
        QuadraticLaw(1.0, ConstantGain(1.0), 0.0)


def test_ou_ergodic_variance():
    assert ou_ergodic_variance(lambda s: 1.0) == pytest.approx(0.5, rel=1e-6)
    assert ou_ergodic_variance(lambda s: 3.0) == pytest.approx(1.0 / 6.0, rel=1e-6)
    assert ou_ergodic_variance(lambda s: 1.0 + s) == pytest.approx(0.0, abs=1e-3)

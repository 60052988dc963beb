import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from selfdiff.gain import (
    ConstantGain, CustomGain, LogGrowthGain, PowerLogGain, Regime, UnsupportedRegimeError,
    classify_regime, make_schedule, require_finite_limit,
)


def _loglog(t):
    return 1.0 + np.log1p(np.log1p(t))


def _loglog_prime(t):
    t = np.asarray(t, dtype=float)
    return 1.0 / ((1.0 + t) * (1.0 + np.log1p(t)))


def test_constant_gain_closed_form():
    s = ConstantGain(2.5)
    assert s.G(4.0) == pytest.approx(10.0)
    assert s.G_inv(10.0) == pytest.approx(4.0)
    assert s.kappa(1.0, 10.0) == pytest.approx((1.0 + 4.0) * 2.5)


def test_power_log_linear_gain():
    # g = 1 + t: G = t + t^2/2, G^-1(1.5) = 1, kappa(1, 1.5) = (1 + 1) * 2
    s = make_schedule("power_log", alpha=1.0)
    assert s.G(2.0) == pytest.approx(4.0)
    assert s.G_inv(1.5) == pytest.approx(1.0, abs=1e-9)
    assert s.kappa(1.0, 1.5) == pytest.approx(4.0, abs=1e-8)


def test_log_growth_primitive_closed_form():
    # g = 2 log(1+t): G(t) = 2((1+t) log(1+t) - t)
    s = LogGrowthGain(a=2.0)
    assert s.G(10.0) == pytest.approx(2 * (11 * math.log(11) - 10), rel=1e-12)
    assert s.G(10.0) == pytest.approx(32.7537, abs=1e-4)
    assert s.G_inv(32.75) == pytest.approx(9.99923, abs=1e-5)
    assert s.kappa(2.0, 32.75) == pytest.approx(57.544, abs=1e-3)


def test_power_log_with_log_factor_against_quad():
    s = PowerLogGain(alpha=0.5, beta=1.0, a=0.7, g0=0.3)
    for t in (0.01, 1.0, 37.0, 2500.0):
        ref = integrate.quad(lambda u: float(s.g(u)), 0, t, epsabs=0, epsrel=1e-12, limit=200)[0]
        assert s.G(t) == pytest.approx(ref, rel=1e-10)


def test_G_vectorized_matches_scalar():
    s = LogGrowthGain(a=1.0, g0=0.5)
    t = np.array([0.0, 0.3, 5.0, 123.0])
    np.testing.assert_allclose(s.G(t), [s.G(float(x)) for x in t], rtol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 500.0))
def test_inverse_roundtrip(u):
    s = LogGrowthGain(a=1.3, g0=0.2)
    t = s.G_inv(u)
    assert s.G(t) == pytest.approx(u, abs=1e-9 * (1 + u))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 50.0), st.floats(0.0, 50.0))
def test_G_monotone(a, b):
    s = PowerLogGain(alpha=0.5, beta=2.0)
    lo, hi = min(a, b), max(a, b)
    assert s.G(lo) <= s.G(hi)


def test_G_rejects_negative_time():
    with pytest.raises(ValueError):
        ConstantGain().G(-1.0)
    with pytest.raises(ValueError):
        LogGrowthGain().G_inv(-1.0)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        ConstantGain(0.0)
    with pytest.raises(ValueError):
        LogGrowthGain(a=-1.0)
    with pytest.raises(ValueError):
        make_schedule("power_log")
    with pytest.raises(ValueError):
        make_schedule("nope")


def test_pickle_keeps_cache_usable():
    s = LogGrowthGain(a=1.0)
    s.G(100.0)
    q = pickle.loads(pickle.dumps(s))
    assert q.G(200.0) == pytest.approx(s.G(200.0), rel=1e-14)


@pytest.mark.parametrize("schedule, regime", [
    (ConstantGain(1.0), Regime.DIFFUSIVE),
    (PowerLogGain(alpha=1.0), Regime.AS_CONVERGENT),
    (PowerLogGain(alpha=0.5, beta=1.0), Regime.AS_CONVERGENT),
    (LogGrowthGain(a=2.0), Regime.BOUNDED_OSCILLATION),
    (LogGrowthGain(a=1.0, g0=1.0), Regime.BOUNDED_OSCILLATION),
    (CustomGain(_loglog, _loglog_prime, "loglog"), Regime.OPEN),
])
def test_regime_classification(schedule, regime):
    assert classify_regime(schedule).classification is regime


def test_log_growth_ratio_limit():
    # log G / g -> 1/a for g = a log(1+t)
    rep = classify_regime(LogGrowthGain(a=2.0))
    assert rep.ratio_logG_g_kind == "finite"
    assert rep.ratio_logG_g == pytest.approx(0.5, rel=0.1)


def test_finite_limit_of_saturating_gain():
    s = CustomGain(lambda t: 2.0 - 1.0 / (1.0 + np.asarray(t, dtype=float)),
                   lambda t: 1.0 / (1.0 + np.asarray(t, dtype=float)) ** 2, "saturating")
    rep = classify_regime(s)
    assert rep.classification is Regime.DIFFUSIVE
    assert rep.lim_g == pytest.approx(2.0, rel=1e-4)


def test_require_finite_limit():
    assert require_finite_limit(ConstantGain(3.0)) == pytest.approx(3.0)
    with pytest.raises(UnsupportedRegimeError):
        require_finite_limit(PowerLogGain(alpha=1.0))

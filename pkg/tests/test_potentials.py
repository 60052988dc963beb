import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from selfdiff.potentials import (
    CriticalKind, asymmetric_wells, check_hypotheses, classify_hessian, double_well,
    finite_difference_gradient, finite_difference_laplacian, make_polynomial_multiwell,
    make_potential, make_quadratic,
)

coords = st.floats(-3.0, 3.0, allow_nan=False)


def test_quadratic_values():
    p = make_quadratic(2.0, dimension=3)
    x = np.array([1.0, -2.0, 0.5])
    assert p.value(x) == pytest.approx(5.25)
    np.testing.assert_allclose(p.gradient(x), 2.0 * x)
    assert p.laplacian(x) == pytest.approx(6.0)
    assert len(p.critical_points) == 1
    cp = p.critical_points[0]
    assert cp.kind is CriticalKind.LOCAL_MIN
    np.testing.assert_allclose(cp.location, 0.0)
    assert cp.taylor_constant == pytest.approx(2.0)
    assert p.convexity_constant == pytest.approx(2.0)
    assert p.chi_support_radius == 0.0


def test_quadratic_rejects_nonpositive_stiffness():
    with pytest.raises(ValueError):
        make_quadratic(0.0)


def test_double_well_critical_points():
    p = double_well()
    locs = sorted(float(cp.location[0]) for cp in p.critical_points)
    np.testing.assert_allclose(locs, [-1.0, 0.0, 1.0], atol=1e-12)
    kinds = {round(float(cp.location[0])): cp.kind for cp in p.critical_points}
    assert kinds[0] is CriticalKind.LOCAL_MAX
    assert kinds[1] is kinds[-1] is CriticalKind.LOCAL_MIN
    assert p.min_critical_separation() == pytest.approx(1.0)


def test_double_well_taylor_constant_against_grid_minimum():
    # (y - m) p'(y) >= a (y - m)^2 on |y - m| <= 0.5; brute-force the best a
    p = double_well()
    for cp in p.minima:
        m = float(cp.location[0])
        assert cp.valid_radius == pytest.approx(0.5)
        u = np.linspace(-0.5, 0.5, 200001)
        u = u[u != 0]
        brute = np.min(p.profile_prime(m + u) / u)
        assert cp.taylor_constant == pytest.approx(brute, abs=1e-8)
        assert cp.taylor_constant == pytest.approx(0.75, abs=1e-12)


def test_double_well_convexity_split():
    # p'' = 3x^2 - 1 vanishes at 1/sqrt(3); the split sits 0.5 further out
    p = double_well()
    R = 1 / math.sqrt(3) + 0.5
    assert p.chi_support_radius == pytest.approx(R)
    assert p.convexity_constant == pytest.approx(3 * R * R - 1)
    x = np.linspace(R, 10, 1000)
    assert np.all(p.profile_second(x) >= p.convexity_constant - 1e-12)
    assert np.all(p.profile_second(-x) >= p.convexity_constant - 1e-12)


def test_maximum_radius_is_inflection_distance():
    p = double_well()
    top = p.unstable_points[0]
    assert top.valid_radius == pytest.approx(1 / math.sqrt(3))
    assert top.taylor_constant == pytest.approx(1.0)
    np.testing.assert_allclose(top.unstable_direction, [1.0])


def test_asymmetric_wells():
    p = asymmetric_wells()
    mins = sorted(float(cp.location[0]) for cp in p.minima)
    np.testing.assert_allclose(mins, [0.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(p.unstable_points[0].location, [1.0], atol=1e-12)


def test_wells_builder_matches_coefficients():
    a = make_polynomial_multiwell(wells=(-1.0, 1.0))
    b = make_polynomial_multiwell([0.25, 0.0, -0.5, 0.0, 0.25])
    x = np.linspace(-2, 2, 11)[:, None]
    np.testing.assert_allclose(a.value(x), b.value(x))


def test_builder_argument_checks():
    with pytest.raises(ValueError):
        make_polynomial_multiwell()
    with pytest.raises(ValueError):
        make_polynomial_multiwell([1.0], wells=(0.0,))
    with pytest.raises(ValueError):
        make_polynomial_multiwell(wells=(-1.0, 1.0), dimension=2)
    with pytest.raises(ValueError):
        make_potential("no_such_potential")


def test_negative_potential_rejected():
    # x^4/4 - x^2 has minimum value -1
    with pytest.raises(ValueError):
        make_polynomial_multiwell([0.0, 0.0, -1.0, 0.0, 0.25])


def test_degenerate_critical_point_rejected():
    with pytest.raises(ValueError):
        make_polynomial_multiwell([0.0, 0.0, 0.0, 0.0, 1.0])


def test_classify_hessian():
    assert classify_hessian([1.0, 2.0]) is CriticalKind.LOCAL_MIN
    assert classify_hessian([-1.0, -2.0]) is CriticalKind.LOCAL_MAX
    assert classify_hessian([-1.0, 2.0]) is CriticalKind.SADDLE
    with pytest.raises(ValueError):
        classify_hessian([0.0, 1.0])


def test_pickle_roundtrip():
    p = double_well()
    q = pickle.loads(pickle.dumps(p))
    x = np.linspace(-2, 2, 7)[:, None]
    np.testing.assert_array_equal(p.gradient(x), q.gradient(x))


@settings(max_examples=50, deadline=None)
@given(st.lists(coords, min_size=2, max_size=2))
def test_gradient_matches_finite_differences_2d(x):
    p = make_quadratic(1.7, dimension=2)
    x = np.array(x)
    np.testing.assert_allclose(p.gradient(x), finite_difference_gradient(p.value, x),
                               rtol=1e-6, atol=1e-7)


@settings(max_examples=50, deadline=None)
@given(coords)
def test_double_well_derivatives_match_finite_differences(x):
    p = double_well()
    x = np.array([x])
    np.testing.assert_allclose(p.gradient(x), finite_difference_gradient(p.value, x),
                               rtol=1e-6, atol=1e-6)
    assert p.laplacian(x) == pytest.approx(finite_difference_laplacian(p.gradient, x),
                                           rel=1e-6, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(coords)
def test_gradient_vanishes_only_near_critical_points(x):
    p = asymmetric_wells()
    g = abs(float(p.gradient(np.array([x]))[0]))
    dist = float(np.min(np.abs(p.critical_locations()[:, 0] - x)))
    if g < 1e-10:
        assert dist < 1e-6


def test_hypotheses_double_well_pass():
    rep = check_hypotheses(double_well(), radius=10.0)
    assert rep.nonnegative and rep.convex_outside and rep.laplacian_bound_ok
    assert rep.growth_ratio_unbounded
    assert rep.all_ok


def test_hypotheses_quadratic_growth_flag():
    # |grad V|^2 / V = 2c is constant for a quadratic, so the growth flag fails
    rep = check_hypotheses(make_quadratic(1.0), radius=10.0)
    assert not rep.growth_ratio_unbounded
    assert rep.growth_ratio_outer == pytest.approx(2.0)
    assert rep.notes

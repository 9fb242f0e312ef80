import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltgc.equinoctial import (EquinoctialState, KeplerianElements, PhysicalConstants, Scenario,
                              b_matrix, d_vector, date_to_mjd, eom_rhs, ephemeris_mjd,
                              equinoctial_to_cartesian, equinoctial_to_kep, inclination,
                              kep_to_equinoctial, nominal_box, semimajor_axis, solve_kepler)
from ltgc.errors import DomainError

TWO_PI = 2 * math.pi


def rv_to_equinoctial(r, v, mu=1.0):
    """Independent oracle: Cartesian -> classical elements -> equinoctial."""
    hv = np.cross(r, v)
    hn = np.linalg.norm(hv)
    rn = np.linalg.norm(r)
    ev = ((v @ v - mu / rn) * r - (r @ v) * v) / mu
    e = np.linalg.norm(ev)
    i = math.acos(hv[2] / hn)
    nv = np.cross([0.0, 0.0, 1.0], hv)
    raan = math.atan2(nv[1], nv[0])
    hhat = hv / hn
    argp = math.atan2(hhat @ np.cross(nv, ev), nv @ ev)
    nu = math.atan2(hhat @ np.cross(ev, r), ev @ r)
    p = hn * hn / mu
    t = math.tan(i / 2)
    return np.array([p, e * math.cos(argp + raan), e * math.sin(argp + raan),
                     t * math.cos(raan), t * math.sin(raan), raan + argp + nu])


def wrapdiff(a, b):
    d = np.asarray(a, float) - np.asarray(b, float)
    d[5] = math.remainder(d[5], TWO_PI)
    return d


elements = st.tuples(
    st.floats(0.5, 1.5), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3),
    st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.floats(0.0, TWO_PI),
).filter(lambda x: math.hypot(x[1], x[2]) > 0.02 and math.hypot(x[3], x[4]) > 0.02)


@settings(max_examples=200, deadline=None)
@given(elements)
def test_cartesian_matches_independent_conversion(x):
    r, v = equinoctial_to_cartesian(x)
    np.testing.assert_allclose(wrapdiff(rv_to_equinoctial(r, v), x), 0.0, atol=1e-10)


@settings(max_examples=200, deadline=None)
@given(elements)
def test_keplerian_round_trip(x):
    back = kep_to_equinoctial(equinoctial_to_kep(x))
    np.testing.assert_allclose(wrapdiff(back, x), 0.0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(elements, st.floats(0.1, 1.0), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_state_rhs_matches_velocity_jacobian_oracle(x, u, a, b, c):
    """dx/dt from B and D equals d(elements)/d(velocity) . thrust + Kepler drift."""
    k = PhysicalConstants.from_si()
    d = np.array([a, b, c])
    if np.linalg.norm(d) < 1e-3:
        return
    d /= np.linalg.norm(d)
    m = 0.9
    r, v = equinoctial_to_cartesian(x)
    rhat = r / np.linalg.norm(r)
    nhat = np.cross(r, v)
    nhat /= np.linalg.norm(nhat)
    that = np.cross(nhat, rhat)
    acc = k.c1 * u / m * (d[0] * rhat + d[1] * that + d[2] * nhat)
    h = 1e-6
    J = np.empty((6, 3))
    for j in range(3):
        dv = np.zeros(3)
        dv[j] = h
        J[:, j] = wrapdiff(rv_to_equinoctial(r, v + dv), rv_to_equinoctial(r, v - dv)) / (2 * h)
    expected = J @ acc + d_vector(x, k.mu)
    got = eom_rhs(list(x) + [m], u, d, k)
    np.testing.assert_allclose(got[:6], expected, rtol=1e-6, atol=1e-9 * k.c1)
    assert got[6] == pytest.approx(-k.c2 * u)


@settings(max_examples=100, deadline=None)
@given(elements)
def test_longitude_rate_is_angular_momentum_over_r_squared(x):
    r, v = equinoctial_to_cartesian(x)
    expected = np.linalg.norm(np.cross(r, v)) / (r @ r)
    assert d_vector(x)[5] == pytest.approx(expected, rel=1e-12)


def test_b_matrix_structure():
    x = [1.0, 0.01, -0.02, 0.001, 0.002, 1.3]
    B = b_matrix(x)
    assert B.shape == (6, 3)
    assert B[0, 0] == 0.0 and B[0, 2] == 0.0
    assert np.all(B[3:, :2] == 0.0)


def test_from_si_constants():
    k = PhysicalConstants.from_si()
    assert k.c1 == pytest.approx(0.037099, rel=1e-4)
    assert k.c2 == pytest.approx(0.029652, rel=1e-4)
    assert k.year == pytest.approx(6.28307, rel=1e-5)
    assert k.kg(1.0) == 1500.0
    with pytest.raises(ValueError):
        PhysicalConstants(c1=0.0, c2=1.0)


def test_domain_checks():
    with pytest.raises(DomainError):
        EquinoctialState(-1.0, 0, 0, 0, 0, 0)
    with pytest.raises(DomainError):
        EquinoctialState(1.0, 0, 0, 0, 0, 0, m=0.0)
    with pytest.raises(DomainError):
        EquinoctialState(1.0, -1.5, 0, 0, 0, 0)  # w <= 0 at L = 0
    with pytest.raises(DomainError):
        equinoctial_to_kep([1.0, 1.0, 0.5, 0, 0, 1.0])
    with pytest.raises(DomainError):
        kep_to_equinoctial(KeplerianElements(1.0, 1.0, 0, 0, 0, 0))
    with pytest.raises(ValueError):
        eom_rhs([1, 0, 0, 0, 0, 0, 1], 1.5, [1, 0, 0], PhysicalConstants.from_si())


@given(st.floats(-10, 10), st.floats(0.0, 0.95))
def test_kepler_equation(M, e):
    E = solve_kepler(M, e)
    assert math.remainder(E - e * math.sin(E) - M, TWO_PI) == pytest.approx(0.0, abs=1e-12)


def test_ephemeris_reference_values():
    mjd = date_to_mjd("2005-05-07")
    assert mjd == 53497.0
    earth, venus = ephemeris_mjd("earth", mjd), ephemeris_mjd("venus", mjd)
    assert earth.a == pytest.approx(1.0, abs=1e-5)
    assert earth.e == pytest.approx(0.0167, abs=1e-4)
    assert venus.a == pytest.approx(0.72334, abs=1e-5)
    assert math.degrees(venus.i) == pytest.approx(3.3946, abs=1e-3)
    with pytest.raises(ValueError):
        ephemeris_mjd("mars", mjd)


def test_scenario_geometry():
    sc = Scenario()
    s0 = sc.departure_state()
    assert s0.shape == (7,) and s0[6] == 1.0
    assert semimajor_axis(s0) == pytest.approx(1.0, abs=1e-4)
    tgt = sc.target_elements()
    assert tgt.shape == (5,)
    assert math.degrees(inclination(list(tgt) + [0.0])) == pytest.approx(3.39, abs=0.01)
    box = nominal_box(sc)
    assert box.a_min < 0.7233 < 1.0 < box.a_max
    assert box.inc_max == pytest.approx(math.radians(7))

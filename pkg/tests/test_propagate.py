import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from ltgc.equinoctial import (Scenario, equinoctial_to_kep, kep_to_equinoctial, semimajor_axis,
                              solve_kepler)
from ltgc.errors import PropagationError
from ltgc.pmp import AugmentedState, augmented_rhs
from ltgc.propagate import (IntegratorConfig, TerminationBox, field_params, integrate_field,
                            propagate, propagate_until, sample_uniform_anomaly, uniform_grid)


def coast_prm(k):
    return np.array([k.c1, k.c2, k.mu, 0.0, 1.0, 0.0, 0.0])


@settings(max_examples=25, deadline=None)
@given(st.floats(0.6, 1.4), st.floats(0.0, 0.4), st.floats(0.0, 0.5), st.floats(0, 6.28),
       st.floats(0, 6.28), st.floats(0, 6.28), st.floats(0.05, 3.0))
def test_coast_matches_kepler_solution(a, e, i, raan, argp, nu, frac):
    """Unpowered flight: elements frozen, true longitude follows Kepler's equation."""
    from ltgc.equinoctial import KeplerianElements, nominal_constants

    k = nominal_constants()
    x0 = kep_to_equinoctial(KeplerianElements(a, e, i, raan, argp, nu))
    period = 2 * math.pi * a ** 1.5
    T = frac * period
    sol = integrate_field("fixed", np.append(x0, 1.0), 0.0, T, coast_prm(k))
    xf = sol.y_final
    np.testing.assert_allclose(xf[:5], x0[:5], atol=1e-11)
    E0 = 2 * math.atan2(math.sqrt(1 - e) * math.sin(nu / 2), math.sqrt(1 + e) * math.cos(nu / 2))
    M = E0 - e * math.sin(E0) + 2 * math.pi / period * T
    E = solve_kepler(M, e)
    nu_f = 2 * math.atan2(math.sqrt(1 + e) * math.sin(E / 2), math.sqrt(1 - e) * math.cos(E / 2))
    assert math.remainder(xf[5] - (raan + argp + nu_f), 2 * math.pi) == pytest.approx(0, abs=1e-9)
    assert xf[6] == 1.0


def test_matches_scipy_reference_integrator(nominal, k):
    y0 = nominal.y0
    T = 2.0
    ref = solve_ivp(lambda t, y: augmented_rhs(y, 1e-3, k), (0, T), y0, method="DOP853",
                    rtol=1e-13, atol=1e-13)
    sol = propagate(y0, T, "time", 1e-3, k)
    np.testing.assert_allclose(sol.y_final, ref.y[:, -1], rtol=1e-9, atol=1e-10)


def test_dense_output_matches_restarted_integration(nominal, k):
    sol = propagate(nominal.y0, nominal.tf, "time", 1e-6, k)
    for t in (0.37, 2.5, 6.1):
        direct = propagate(nominal.y0, t, "time", 1e-6, k).y_final
        np.testing.assert_allclose(sol(t), direct, rtol=1e-9, atol=1e-10)
    with pytest.raises(ValueError):
        sol(nominal.tf + 1.0)


def test_backward_integration_returns_to_start(nominal, k):
    fwd = propagate(nominal.y0, 3.0, "time", 1e-4, k)
    back = propagate(fwd.y_final, (3.0, 0.0), "time", 1e-4, k)
    assert back.direction == -1.0
    np.testing.assert_allclose(back.y_final, nominal.y0, rtol=1e-9, atol=1e-9)


def test_sundman_and_time_fields_agree(nominal, k):
    s = AugmentedState.from_array(nominal.y0)
    sol = propagate(s, 4.0, "sundman", 1e-6, k)
    yf = sol.y_final
    ref = propagate(nominal.y0, yf[14], "time", 1e-6, k).y_final
    np.testing.assert_allclose(yf[:14], ref, rtol=1e-9, atol=1e-9)


def test_time_crossing_event(nominal, k):
    y = np.append(nominal.y0, 0.0)
    sol = integrate_field("sundman", y, 0.0, 20.0, field_params(1e-6, k), crossing=(14, nominal.tf))
    assert sol.reason == "crossing"
    assert sol.y_final[14] == pytest.approx(nominal.tf, abs=1e-9)
    assert sol.t_final == pytest.approx(nominal.sundman_span, abs=1e-8)


def test_box_event_lands_on_boundary(nominal, k):
    a0 = semimajor_axis(nominal.y0[:7])
    box = TerminationBox(a0 - 0.05, a0 + 0.5, math.radians(7))
    sol = propagate_until(nominal.y0, 10.0, "time", 1e-6, k, IntegratorConfig(), box)
    assert sol.reason == "a_below_min"
    assert semimajor_axis(sol.y_final[:7]) == pytest.approx(a0 - 0.05, abs=1e-8)
    assert sol.t_final < 10.0
    ts, ys = sol.nodes()
    assert ts[-1] == sol.t_final


def test_initially_outside_box(nominal, k):
    box = TerminationBox(2.0, 3.0, 0.1)
    sol = propagate_until(nominal.y0, 1.0, "time", 1e-6, k, IntegratorConfig(), box)
    assert sol.reason.startswith("initially_outside")
    assert sol.n_steps == 0
    np.testing.assert_array_equal(sol(0.0), nominal.y0)


def test_failures_are_reported(nominal, k):
    cfg = IntegratorConfig(max_steps=3)
    with pytest.raises(PropagationError):
        propagate(nominal.y0, nominal.tf, "time", 1e-6, k, cfg)
    sol = propagate(nominal.y0, nominal.tf, "time", 1e-6, k, cfg, raise_on_failure=False)
    assert sol.reason.startswith("failed:")
    bad = nominal.y0.copy()
    bad[0] = -1.0
    with pytest.raises(PropagationError):
        propagate(bad, 1.0, "time", 1e-6, k)


def test_sampling_grid(nominal, k):
    sol = propagate(nominal.y0, 2.0, "sundman", 1e-6, k)
    S = sample_uniform_anomaly(sol, 11)
    assert S.shape == (11, 15)
    np.testing.assert_allclose(uniform_grid(sol, 3), [0.0, 1.0, 2.0])
    np.testing.assert_array_equal(S[0], sol.y0)
    with pytest.raises(ValueError):
        sample_uniform_anomaly(sol, 1)


def test_sundman_samples_are_uniform_in_eccentric_anomaly_on_a_coast(k):
    """With c r dtheta = dt and no thrust, theta advances like the eccentric anomaly."""
    x0 = Scenario().departure_state()
    e = math.hypot(x0[1], x0[2])
    y = np.concatenate([x0, np.zeros(7), [0.0]])
    y[7] = 1e-9  # tiny costate keeps the direction defined while u ~ 0
    y[13] = -1e3  # SF = 1 - c2 lambda_m >> 0: throttle off
    sol = propagate(y, 3.0, "sundman", 1e-6, k)
    kep0, kep1 = equinoctial_to_kep(sol.y0), equinoctial_to_kep(sol.y_final)

    def ecc_anom(nu):
        return 2 * math.atan2(math.sqrt(1 - e) * math.sin(nu / 2), math.sqrt(1 + e) * math.cos(nu / 2))

    dE = math.remainder(ecc_anom(kep1.nu) - ecc_anom(kep0.nu), 2 * math.pi)
    assert dE == pytest.approx(3.0, abs=1e-6)


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(rel_tol=0.0)
    with pytest.raises(ValueError):
        TerminationBox(1.0, 0.5, 0.1)
    assert IntegratorConfig().scaled(10).rel_tol == pytest.approx(1e-11)

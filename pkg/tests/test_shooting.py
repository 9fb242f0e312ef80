import json

import numpy as np
import pytest

from ltgc.errors import PropagationError, ShootingError
from ltgc.pmp import hamiltonian_along
from ltgc.shooting import (HomotopySchedule, NominalRecord, ShootingUnknowns, TargetOrbit,
                           bang_off_fraction, default_schedule, homotopy_solve, propellant_of,
                           random_guess, shoot_fixed_time, shoot_free_time, solve,
                           solve_fixed_time, switch_times)


def test_frozen_nominal_satisfies_boundary_conditions(nominal, k):
    r = shoot_free_time(nominal.unknowns, nominal.s0, nominal.target, nominal.eps, k)
    assert r.shape == (8,)
    assert np.max(np.abs(r)) < 1e-8
    assert nominal.residual_norm < 1e-8


def test_hamiltonian_is_conserved_along_nominal(nominal, k):
    H = hamiltonian_along(nominal.samples, nominal.eps, k)
    assert np.max(np.abs(H)) < 1e-8


def test_nominal_structure(nominal, k):
    assert nominal.tf_years == pytest.approx(1.376, rel=0.01)
    assert nominal.propellant_kg == pytest.approx(210.47, rel=0.01)
    assert len(nominal.switches) == 6
    assert all(0 < a < b < nominal.tf for a, b in zip(nominal.switches, nominal.switches[1:]))
    # near bang-bang at eps = 1e-6
    assert bang_off_fraction(nominal) < 0.01
    # the sampled trajectory starts at departure and ends on the target orbit
    np.testing.assert_allclose(nominal.samples[0, :7], nominal.s0)
    np.testing.assert_allclose(nominal.samples[-1, :5], nominal.target, atol=1e-8)
    assert nominal.samples[-1, 14] == pytest.approx(nominal.tf, abs=1e-9)
    assert switch_times(nominal.solution(), nominal.eps, k) == pytest.approx(nominal.switches)


def test_continuation_history_decreases_towards_bang_bang(nominal):
    eps, prop = zip(*nominal.history)
    assert eps[0] == 0.1 and eps[-1] == 1e-6
    assert all(b < a for a, b in zip(prop, prop[1:]))


def test_fixed_time_at_optimal_duration_recovers_free_time_costates(nominal, k):
    z = nominal.unknowns.as_array()
    r = shoot_fixed_time(z, nominal.tf, nominal.s0, nominal.target, nominal.eps, k)
    assert np.max(np.abs(r)) < 1e-8
    sol = solve_fixed_time(nominal.s0, nominal.target, nominal.tf, k, guesses=[z[:7] * (1 + 1e-7)])
    np.testing.assert_allclose(sol, z[:7], rtol=1e-5)
    assert propellant_of(nominal.s0, sol, nominal.tf, nominal.eps, k) == \
        pytest.approx(1 - nominal.mf, rel=1e-8)


def test_first_homotopy_stage_from_random_restarts(nominal, k):
    """Multistart at eps = 0.1, continued one step."""
    rec = homotopy_solve(nominal.s0, nominal.target, HomotopySchedule((0.1, 0.05)), k,
                         seed=0, restarts=10, n_samples=10)
    assert rec.eps == 0.05
    assert rec.residual_norm < 1e-8
    assert rec.history[0][1] == pytest.approx(nominal.history[0][1], rel=1e-6)
    assert rec.history[1][1] == pytest.approx(nominal.history[1][1], rel=1e-6)


def test_solve_on_toy_system():
    fn = lambda z: np.array([z[0] ** 2 - 2.0, z[0] * z[1] - 1.0])
    for method in ("hybr", "lm"):
        res = solve(fn, [1.0, 1.0], method)
        assert res.success
        np.testing.assert_allclose(res.z, [np.sqrt(2), 1 / np.sqrt(2)], rtol=1e-8)
    again = solve(fn, res.z)
    assert again.success and again.nfev == 1
    with pytest.raises(ValueError):
        solve(fn, [1.0, 1.0], "newton")


def test_solve_reports_unpropagatable_guess():
    def fn(z):
        raise PropagationError("boom")

    res = solve(fn, [1.0, 2.0])
    assert not res.success and res.norm >= 1e3


def test_schedule_validation():
    s = default_schedule()
    assert s[0] == 0.1 and s[-1] == 1e-6 and len(s) == 16
    with pytest.raises(ValueError):
        HomotopySchedule((0.05, 1e-6))
    with pytest.raises(ValueError):
        HomotopySchedule((0.1, 0.2))
    assert HomotopySchedule.ending_at(1e-3).eps_sequence[-1] == 1e-3
    assert HomotopySchedule.ending_at(1e-6).eps_sequence == s
    assert HomotopySchedule.ending_at(0.1).eps_sequence == (0.1,)


def test_random_guess_ranges(k):
    rng = np.random.default_rng(0)
    G = np.array([random_guess(rng, k) for _ in range(500)])
    assert np.all(np.abs(G[:, :6]) <= 10)
    assert np.all((G[:, 6] >= 0) & (G[:, 6] <= 10))
    assert np.all((G[:, 7] >= k.year) & (G[:, 7] <= 2 * k.year))


def test_record_json_round_trip(nominal, tmp_path):
    p = tmp_path / "nom.json"
    nominal.save(p)
    back = NominalRecord.load(p)
    np.testing.assert_array_equal(back.samples, nominal.samples)
    assert back.unknowns == nominal.unknowns
    assert back.constants == nominal.constants
    assert json.loads(p.read_text())["tf_years"] == nominal.tf_years


def test_value_types():
    u = ShootingUnknowns.from_array(np.arange(8.0) + 1)
    np.testing.assert_array_equal(u.as_array(), np.arange(8.0) + 1)
    t = TargetOrbit.from_array([0.7, 0.0, 0.0, 0.0, 0.0])
    assert t.as_array().shape == (5,)
    with pytest.raises(PropagationError):
        shoot_free_time(np.r_[np.ones(7), -1.0], np.r_[1, 0, 0, 0, 0, 0, 1.0], t, 1e-3, None)


def test_multistart_gives_up(nominal, k):
    with pytest.raises(ShootingError):
        homotopy_solve(nominal.s0, nominal.target, HomotopySchedule((0.1,), max_nfev=3), k,
                       restarts=2, n_samples=5)

"""Closed-loop flights with learned or oracle controllers and the evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import torch

from . import _kernels
from .backgen import COL, CONTROL
from .equinoctial import PhysicalConstants, equinoctial_to_cartesian
from .errors import PropagationError, ShootingError
from .gcnet import Batch, Network, control_from_costates, make_batch, network_costates, pack, \
    policy_outputs, value_scale
from .pmp import controls_along
from .propagate import FLIGHT_CONFIG, IntegratorConfig, field_params, integrate_field
from .shooting import NominalRecord, propellant_of, solve_fixed_time

SUCCESS_RED = 0.01


def red(x, target) -> float:
    """Euclidean distance over (p, f, g, h, k)."""
    return float(np.linalg.norm(np.asarray(x, dtype=float)[..., :5] - np.asarray(target, dtype=float)[:5]))


def red_batch(X: np.ndarray, target) -> np.ndarray:
    return np.linalg.norm(X[:, :5] - np.asarray(target)[None, :5], axis=1)


# controllers --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NetController:
    model: Network
    eps: float = 1e-6
    value_kind: str = "cost_to_go"

    def params(self, k: PhysicalConstants) -> np.ndarray:
        return pack(self.model, k, self.eps, self.value_kind)


@dataclass(frozen=True, eq=False)
class ReplayOracle:
    """Replays the optimal control of the nominal by flying its state and costates."""

    nominal: NominalRecord


@dataclass(frozen=True)
class ZeroThrust:
    pass


Controller = Union[NetController, ReplayOracle, ZeroThrust]


@dataclass(frozen=True, eq=False)
class FlightResult:
    t: np.ndarray          # sample times
    states: np.ndarray     # (n, 7)
    controls: np.ndarray   # (n, 4): u, ir, it, in
    min_red: float
    t_min_red: float
    red_at: float          # rEd at the evaluation time (t*f by default)
    red_final: float
    propellant_kg: float
    reason: str
    degenerate: int = 0

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def _controls_for(ctrl: Controller, Y: np.ndarray, k: PhysicalConstants, prm) -> np.ndarray:
    if isinstance(ctrl, ReplayOracle):
        return controls_along(Y, ctrl.nominal.eps, k)[:, :4]
    if isinstance(ctrl, ZeroThrust):
        C = np.zeros((Y.shape[0], 4))
        C[:, 2] = 1.0
        return C
    out = np.empty((Y.shape[0], 4))
    probe = prm.copy()
    for j, y in enumerate(Y):
        u, i0, i1, i2, ok = _kernels.net_control(np.ascontiguousarray(y[:7]), probe)
        out[j] = (u if ok else 0.0, i0, i1, i2)
    return out


def _zoh(ctrl: Controller, y0: np.ndarray, duration: float, period: float, k: PhysicalConstants,
         cfg: IntegratorConfig, prm) -> tuple[list, list, str, int]:
    """Piecewise-constant control held for ``period``; returns segment solutions."""
    sols, ctrls = [], []
    t, y = 0.0, y0[:7].copy()
    reason = "span_end"
    degenerate = 0
    while t < duration - 1e-14:
        t1 = min(duration, t + period)
        c = _controls_for(ctrl, y[None, :], k, prm)[0]
        if isinstance(ctrl, NetController):
            ok = _kernels.net_control(np.ascontiguousarray(y), prm.copy())[4]
            degenerate += int(not ok)
        fp = np.array([k.c1, k.c2, k.mu, c[0], c[1], c[2], c[3]])
        sol = integrate_field("fixed", y, t, t1, fp, cfg, raise_on_failure=False)
        sols.append(sol)
        ctrls.append(c)
        if sol.reason.startswith("failed"):
            reason = sol.reason
            break
        t, y = t1, sol.y_final
    return sols, ctrls, reason, degenerate


def fly(ctrl: Controller, s0, duration: float, k: PhysicalConstants, target,
        cfg: IntegratorConfig = FLIGHT_CONFIG, n_samples: int = 1000,
        eval_time: Optional[float] = None, zoh_period: Optional[float] = None) -> FlightResult:
    """Integrate the equations of motion with the controller in the loop.

    The controller is evaluated at every integrator stage unless ``zoh_period``
    is given. The minimum rEd is taken over ``n_samples`` (>= 1000 recommended)
    uniformly spaced times; ``red_at`` is the rEd at ``eval_time`` (default:
    the end of the flight).
    """
    s0 = np.asarray(s0, dtype=float)[:7]
    if n_samples < 2 or not duration > 0:
        raise ValueError("need duration > 0 and at least two samples")
    prm = None
    degenerate = 0
    if isinstance(ctrl, ReplayOracle):
        y0 = ctrl.nominal.y0
        if float(np.max(np.abs(y0[:7] - s0))) > 0.0:
            raise ValueError("the replay oracle only flies from the nominal initial state")
        kind, prm = "time", field_params(ctrl.nominal.eps, k)
    elif isinstance(ctrl, ZeroThrust):
        y0, kind, prm = s0, "fixed", np.array([k.c1, k.c2, k.mu, 0.0, 0.0, 1.0, 0.0])
    else:
        y0, kind, prm = s0, "net", ctrl.params(k)

    te = duration if eval_time is None else float(eval_time)

    def grid(t_end):
        ts = np.linspace(0.0, t_end, n_samples)
        if 0.0 < te < t_end and not np.any(ts == te):
            ts = np.sort(np.append(ts, te))
        return ts

    if zoh_period is not None and not isinstance(ctrl, ReplayOracle):
        if not zoh_period > 0:
            raise ValueError("zoh_period must be positive")
        sols, ctrls, reason, degenerate = _zoh(ctrl, y0, duration, zoh_period, k, cfg, prm)
        ts = grid(sols[-1].t_final if sols else 0.0)
        X = np.empty((ts.shape[0], 7))
        C = np.empty((ts.shape[0], 4))
        starts = np.array([s.t0 for s in sols])
        for j, t in enumerate(ts):
            i = max(0, int(np.searchsorted(starts, t, side="right")) - 1)
            X[j] = sols[i](min(t, sols[i].t_final))[:7]
            C[j] = ctrls[i]
    else:
        sol = integrate_field(kind, y0, 0.0, duration, prm, cfg, raise_on_failure=False)
        reason = sol.reason
        if isinstance(ctrl, NetController):
            degenerate = int(prm[7])
        ts = grid(sol.t_final)
        Y = sol(ts)
        X = Y[:, :7]
        C = _controls_for(ctrl, Y, k, prm)
    r = red_batch(X, target)
    i_min = int(np.argmin(r))
    hit = np.nonzero(ts == te)[0]
    red_at = float(r[hit[0]]) if hit.size else math.nan
    return FlightResult(ts, X, C, float(r[i_min]), float(ts[i_min]), red_at, float(r[-1]),
                        k.kg(s0[6] - X[-1, 6]), reason, degenerate)


# statistics on database splits -------------------------------------------------------


def angle_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle between unit vectors with the cosine clamped into [-1, 1]."""
    c = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(c))


def predicted_controls(model: Network, rows_or_batch, k: PhysicalConstants, eps: float = 1e-6,
                       value_kind: str = "cost_to_go", chunk: int = 8192) -> tuple[np.ndarray, np.ndarray]:
    batch = rows_or_batch if isinstance(rows_or_batch, Batch) else make_batch(rows_or_batch, k, value_kind)
    us, ds = [], []
    vs = value_scale(value_kind, k)
    for s in range(0, len(batch), chunk):
        X = batch.X[s:s + chunk]
        if model.arch.head == "policy":
            with torch.no_grad():
                u, d = policy_outputs(model(X))
        else:
            _, lam = network_costates(model, X, vs, create_graph=False)
            with torch.no_grad():
                u, d = control_from_costates(X, lam.detach(), eps, k)
        us.append(u.detach().numpy())
        ds.append(d.detach().numpy())
    return np.concatenate(us), np.concatenate(ds)


def control_error_stats(model: Network, rows: np.ndarray, k: PhysicalConstants, eps: float = 1e-6,
                        value_kind: str = "cost_to_go") -> dict:
    """Mean and std of |u_N - u*| and of the thrust-direction angle error (degrees)."""
    u, d = predicted_controls(model, rows, k, eps, value_kind)
    du = np.abs(u - rows[:, COL["u"]])
    ang = angle_deg(d, rows[:, CONTROL][:, 1:4])
    return {"du_mean": float(du.mean()), "du_std": float(du.std()),
            "angle_mean_deg": float(ang.mean()), "angle_std_deg": float(ang.std()), "n": int(rows.shape[0])}


def value_error_stats(model: Network, rows: np.ndarray, k: PhysicalConstants,
                      value_kind: str = "cost_to_go") -> dict:
    """Mean and std of |J_N - J*| in kilograms of propellant."""
    if model.arch.head != "value":
        raise ValueError("value_error_stats needs a value-head model")
    vs = value_scale(value_kind, k)
    b = make_batch(rows, k, value_kind)
    with torch.no_grad():
        v = model(b.X)[:, 0].numpy()
    err = np.abs(vs.to_kg(v - b.J.numpy(), k))
    return {"dJ_mean_kg": float(err.mean()), "dJ_std_kg": float(err.std()), "n": int(rows.shape[0])}


# propellant discrepancy ------------------------------------------------------------------


@dataclass(frozen=True)
class Discrepancy:
    kg: float
    flight_kg: float
    completion_kg: float
    reference_kg: float
    red_at_tf: float
    completion: str  # "solved" or "coast"


COAST_RED = 1e-6


def propellant_discrepancy(ctrl: Controller, nominal: NominalRecord, dt_years: float = 0.1,
                           cfg: IntegratorConfig = FLIGHT_CONFIG, seed: int = 0,
                           coast_red: float = COAST_RED) -> Discrepancy:
    """Extra propellant of (flight for t*f + optimal fixed-time completion over dt)
    relative to the fixed-time optimum over t*f + dt from the nominal start.

    A flight ending within ``coast_red`` of the target orbit is completed by a
    coast: the fixed-time completion problem is singular there.
    """
    k = nominal.constants
    dt = dt_years * k.year
    flight = fly(ctrl, nominal.s0, nominal.tf, k, nominal.target, cfg)
    x1 = flight.final_state
    try:
        if flight.red_final < coast_red:
            leg2, how = 0.0, "coast"
        else:
            guesses = [nominal.y_final[7:14], np.zeros(7)]
            lam2 = solve_fixed_time(x1, nominal.target, dt, k, guesses, nominal.eps, seed=seed)
            leg2, how = k.kg(propellant_of(x1, lam2, dt, nominal.eps, k)), "solved"
        lam_ref = solve_fixed_time(nominal.s0, nominal.target, nominal.tf + dt, k,
                                   [nominal.unknowns.as_array()], nominal.eps, seed=seed)
    except ShootingError as exc:
        raise ShootingError(f"propellant discrepancy infeasible: {exc}") from exc
    ref = k.kg(propellant_of(nominal.s0, lam_ref, nominal.tf + dt, nominal.eps, k))
    return Discrepancy(flight.propellant_kg + leg2 - ref, flight.propellant_kg, leg2, ref,
                       flight.red_final, how)


# region evaluation ---------------------------------------------------------------------


def perturb_initial(s0: np.ndarray, percent: float, rng: np.random.Generator) -> np.ndarray:
    """Scale each of the six elements by U(1 - x/100, 1 + x/100); L is wrapped first."""
    x = np.array(s0[:7], dtype=float)
    x[5] = np.mod(x[5], 2.0 * math.pi)
    f = rng.uniform(1.0 - percent / 100.0, 1.0 + percent / 100.0, 6)
    x[:6] *= f
    return x


def region_eval(ctrl: NetController, nominal: NominalRecord, percent: float, n: int,
                seed: int = 0, horizon: Optional[float] = None,
                cfg: IntegratorConfig = FLIGHT_CONFIG, n_samples: int = 1000) -> dict:
    """Mean min-rEd and success rate (min-rEd < 0.01) over perturbed starts."""
    if percent < 0 or n < 1:
        raise ValueError("percent >= 0 and n >= 1 required")
    k = nominal.constants
    rng = np.random.default_rng([int(seed), int(round(percent * 1000))])
    horizon = horizon or 2.0 * nominal.tf
    reds = []
    for _ in range(n):
        x0 = perturb_initial(nominal.s0, percent, rng)
        try:
            fr = fly(ctrl, x0, horizon, k, nominal.target, cfg, n_samples)
            reds.append(fr.min_red)
        except (PropagationError, ValueError):
            reds.append(math.inf)
    reds = np.array(reds)
    ok = reds < SUCCESS_RED
    finite = reds[np.isfinite(reds)]
    return {"percent": percent, "n": n, "mean_min_red": float(finite.mean()) if finite.size else math.inf,
            "success_rate": float(ok.mean())}


# export ----------------------------------------------------------------------------------------

TRAJ_COLUMNS = ("t", "x", "y", "z", "vx", "vy", "vz", "p", "f", "g", "h", "k", "L", "m",
                "u", "itr", "itt", "itn")


def export_trajectory(path, flight: FlightResult, k: PhysicalConstants) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(TRAJ_COLUMNS) + "\n")
        for t, x, c in zip(flight.t, flight.states, flight.controls):
            r, v = equinoctial_to_cartesian(x[:6], k.mu)
            vals = [t, *r, *v, *x, *c]
            fh.write(",".join(repr(float(a)) for a in vals) + "\n")


def flight_summary(fr: FlightResult) -> dict:
    return {"min_red": fr.min_red, "t_min_red": fr.t_min_red, "red_at": fr.red_at,
            "red_final": fr.red_final, "propellant_kg": fr.propellant_kg, "reason": fr.reason,
            "degenerate_evaluations": fr.degenerate}

"""Indirect shooting for the Earth to Venus-orbit transfer and its epsilon homotopy."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import root

from .equinoctial import PhysicalConstants, Scenario, check_state
from .errors import PropagationError, ShootingError
from .pmp import controls_along, hamiltonian_along
from .propagate import DEFAULT_CONFIG, IntegratorConfig, Solution, field_params, integrate_field

PENALTY = 1e3
FD_STEP = 1e-7
TOL = 1e-8


@dataclass(frozen=True)
class ShootingUnknowns:
    lam0: tuple[float, ...]
    lam_m0: float
    tf: float

    def __post_init__(self):
        if len(self.lam0) != 6:
            raise ValueError("six initial costates required")
        if not self.tf > 0:
            raise ValueError("tf must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([*self.lam0, self.lam_m0, self.tf])

    @classmethod
    def from_array(cls, z: Sequence[float]) -> "ShootingUnknowns":
        z = np.asarray(z, dtype=float)
        return cls(tuple(float(v) for v in z[:6]), float(z[6]), float(z[7]))


@dataclass(frozen=True)
class TargetOrbit:
    p: float
    f: float
    g: float
    h: float
    k: float

    def __post_init__(self):
        if not self.p > 0 or not self.f ** 2 + self.g ** 2 < 1:
            raise ValueError("target must be a valid elliptic orbit")

    def as_array(self) -> np.ndarray:
        return np.array([self.p, self.f, self.g, self.h, self.k])

    @classmethod
    def from_array(cls, e: Sequence[float]) -> "TargetOrbit":
        return cls(*(float(v) for v in e[:5]))


def default_schedule() -> tuple[float, ...]:
    """1-2-5 log-spaced decades from 1e-1 down to 1e-6."""
    out = [1e-1]
    for d in range(2, 7):
        for m in (5.0, 2.0, 1.0):
            out.append(m * 10.0 ** -d)
    return tuple(v for v in out if v >= 1e-6)


@dataclass(frozen=True)
class HomotopySchedule:
    eps_sequence: tuple[float, ...] = field(default_factory=default_schedule)
    max_nfev: int = 400

    def __post_init__(self):
        s = self.eps_sequence
        if len(s) < 1 or s[0] != 1e-1 or not s[-1] > 0.0:
            raise ValueError("schedule must start at 0.1 and end above zero")
        if any(b >= a for a, b in zip(s, s[1:])):
            raise ValueError("schedule must be strictly decreasing")

    @classmethod
    def ending_at(cls, eps_final: float, max_nfev: int = 400) -> "HomotopySchedule":
        """Default schedule truncated (or extended) to finish at ``eps_final``."""
        head = tuple(e for e in default_schedule() if e > eps_final * (1 + 1e-12))
        return cls(head + (float(eps_final),) if head else (1e-1,), max_nfev)


def _augmented_start(s0: np.ndarray, lam0, lam_m0) -> np.ndarray:
    y = np.empty(14)
    y[:7] = s0[:7]
    y[7:13] = lam0
    y[13] = lam_m0
    return y


def _terminal(s0, lam0, lam_m0, tf, eps, k, cfg) -> np.ndarray:
    y0 = _augmented_start(s0, lam0, lam_m0)
    sol = integrate_field("time", y0, 0.0, tf, field_params(eps, k), cfg, raise_on_failure=True)
    return sol.y_final


def _terminal_residual(yf: np.ndarray, tgt: np.ndarray) -> np.ndarray:
    return np.concatenate([yf[:5] - tgt, [yf[12], yf[13]]])


def terminal_hamiltonian(yf: np.ndarray, eps: float, k: PhysicalConstants) -> float:
    return float(hamiltonian_along(yf[None, :14], eps, k)[0])


def shoot_free_time(un, s0, tgt, eps: float, k: PhysicalConstants,
                    cfg: IntegratorConfig = DEFAULT_CONFIG) -> np.ndarray:
    """[p f g h k miss, lambda_L(tf), lambda_m(tf), H(tf)] for the given unknowns.

    Raises PropagationError when the trial cannot be propagated.
    """
    z = un.as_array() if isinstance(un, ShootingUnknowns) else np.asarray(un, dtype=float)
    if not z[7] > 0:
        raise PropagationError("non-positive transfer time")
    tgt = tgt.as_array() if isinstance(tgt, TargetOrbit) else np.asarray(tgt, dtype=float)
    yf = _terminal(np.asarray(s0, dtype=float), z[:6], z[6], z[7], eps, k, cfg)
    return np.append(_terminal_residual(yf, tgt), terminal_hamiltonian(yf, eps, k))


def shoot_fixed_time(un, tf: float, s0, tgt, eps: float, k: PhysicalConstants,
                     cfg: IntegratorConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Seven-component residual with the transfer time held at ``tf``."""
    z = un.as_array() if isinstance(un, ShootingUnknowns) else np.asarray(un, dtype=float)
    if not tf > 0:
        raise ValueError("tf must be positive")
    tgt = tgt.as_array() if isinstance(tgt, TargetOrbit) else np.asarray(tgt, dtype=float)
    yf = _terminal(np.asarray(s0, dtype=float), z[:6], z[6], tf, eps, k, cfg)
    return _terminal_residual(yf, tgt)


@dataclass
class SolveResult:
    z: np.ndarray
    residual: np.ndarray
    success: bool
    nfev: int
    message: str

    @property
    def norm(self) -> float:
        return float(np.max(np.abs(self.residual)))


def _safe(fn: Callable[[np.ndarray], np.ndarray], n: int) -> Callable[[np.ndarray], np.ndarray]:
    def wrapped(z):
        try:
            r = fn(z)
        except (PropagationError, ValueError):
            return np.full(n, PENALTY)
        if not np.all(np.isfinite(r)):
            return np.full(n, PENALTY)
        return r
    return wrapped


def solve(residual_fn: Callable[[np.ndarray], np.ndarray], z0: Sequence[float],
          method: str = "hybr", max_nfev: int = 400, tol: float = TOL,
          fd_step: float = FD_STEP) -> SolveResult:
    """Root solve with a forward-difference Jacobian; success means |r|_inf < tol."""
    if method not in ("hybr", "lm"):
        raise ValueError("method must be 'hybr' or 'lm'")
    z0 = np.asarray(z0, dtype=float)
    n = z0.shape[0]
    f = _safe(residual_fn, n)
    count = [0]
    cache: dict = {}

    def fun(z):
        key = z.tobytes()
        if key not in cache:
            count[0] += 1
            cache.clear()
            cache[key] = f(z)
        return cache[key]

    def jac(z):
        r0 = fun(z)
        J = np.empty((r0.shape[0], n))
        for j in range(n):
            zj = z.copy()
            zj[j] += fd_step
            count[0] += 1
            J[:, j] = (f(zj) - r0) / fd_step
        return J

    r0 = fun(z0)
    if np.max(np.abs(r0)) < tol:
        return SolveResult(z0, r0, True, count[0], "initial guess already converged")
    if np.max(np.abs(r0)) >= PENALTY:
        return SolveResult(z0, r0, False, count[0], "initial guess cannot be propagated")
    opts = {"maxfev": max_nfev, "xtol": 1e-14} if method == "hybr" else \
        {"maxiter": max_nfev, "xtol": 1e-15, "ftol": 1e-15}
    try:
        res = root(fun, z0, jac=jac, method=method, options=opts)
        z = res.x
        msg = str(res.message)
    except (ValueError, np.linalg.LinAlgError) as exc:
        z, msg = z0, f"solver error: {exc}"
    r = fun(z)
    ok = bool(np.all(np.isfinite(r)) and np.max(np.abs(r)) < tol)
    return SolveResult(np.asarray(z, dtype=float), r, ok, count[0], msg)


# nominal record -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NominalRecord:
    eps: float
    unknowns: ShootingUnknowns
    s0: np.ndarray
    target: np.ndarray
    y_final: np.ndarray
    residual_norm: float
    sundman_span: float
    samples: np.ndarray  # (N, 15): forward, uniform in Sundman anomaly, last column t
    switches: tuple[float, ...]
    constants: PhysicalConstants
    history: tuple[tuple[float, float], ...] = ()  # (eps, propellant) per continuation step

    @property
    def tf(self) -> float:
        return self.unknowns.tf

    @property
    def tf_years(self) -> float:
        return self.tf / self.constants.year

    @property
    def mf(self) -> float:
        return float(self.y_final[6])

    @property
    def propellant_kg(self) -> float:
        return self.constants.kg(self.s0[6] - self.mf)

    @property
    def y0(self) -> np.ndarray:
        z = self.unknowns.as_array()
        return _augmented_start(self.s0, z[:6], z[6])

    def solution(self, cfg: IntegratorConfig = DEFAULT_CONFIG) -> Solution:
        return integrate_field("time", self.y0, 0.0, self.tf, field_params(self.eps, self.constants), cfg)

    def to_json(self) -> dict:
        return {
            "eps": self.eps,
            "unknowns": self.unknowns.as_array().tolist(),
            "s0": self.s0.tolist(),
            "target": self.target.tolist(),
            "y_final": self.y_final.tolist(),
            "residual_norm": self.residual_norm,
            "sundman_span": self.sundman_span,
            "samples": self.samples.tolist(),
            "switches": list(self.switches),
            "history": [list(h) for h in self.history],
            "tf_years": self.tf_years,
            "propellant_kg": self.propellant_kg,
            "constants": {"c1": self.constants.c1, "c2": self.constants.c2, "mu": self.constants.mu,
                          "isp": self.constants.isp, "g0": self.constants.g0,
                          "length_unit": self.constants.length_unit,
                          "mass_unit": self.constants.mass_unit,
                          "time_unit": self.constants.time_unit},
        }

    @classmethod
    def from_json(cls, d: dict) -> "NominalRecord":
        return cls(eps=float(d["eps"]), unknowns=ShootingUnknowns.from_array(d["unknowns"]),
                   s0=np.asarray(d["s0"]), target=np.asarray(d["target"]),
                   y_final=np.asarray(d["y_final"]), residual_norm=float(d["residual_norm"]),
                   sundman_span=float(d["sundman_span"]), samples=np.asarray(d["samples"]),
                   switches=tuple(d["switches"]), constants=PhysicalConstants(**d["constants"]),
                   history=tuple(tuple(h) for h in d.get("history", [])))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "NominalRecord":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def switch_times(sol: Solution, eps: float, k: PhysicalConstants, n_scan: int = 4000) -> tuple[float, ...]:
    """Times where the switching function changes sign, refined by bisection."""
    ts = np.linspace(sol.t0, sol.t_final, n_scan)
    sf = controls_along(sol(ts), eps, k)[:, 4]
    out = []
    for i in np.nonzero(np.sign(sf[:-1]) * np.sign(sf[1:]) < 0)[0]:
        a, b = ts[i], ts[i + 1]
        sa = sf[i]
        for _ in range(60):
            mid = 0.5 * (a + b)
            sm = controls_along(sol(mid)[None, :], eps, k)[0, 4]
            if np.sign(sm) == np.sign(sa):
                a, sa = mid, sm
            else:
                b = mid
        out.append(float(0.5 * (a + b)))
    return tuple(out)


def nominal_samples(y0: np.ndarray, tf: float, eps: float, k: PhysicalConstants, n: int,
                    cfg: IntegratorConfig = DEFAULT_CONFIG) -> tuple[np.ndarray, float]:
    """Forward Sundman-field samples from departure to the t = tf crossing."""
    y = np.append(y0[:14], 0.0)
    sol = integrate_field("sundman", y, 0.0, 1e3, field_params(eps, k), cfg, crossing=(14, tf))
    if sol.reason != "crossing":
        raise PropagationError("nominal Sundman propagation did not reach tf")
    th = np.linspace(0.0, sol.t_final, n)
    return sol(th), float(sol.t_final)


def make_record(s0, tgt, z, eps, k, cfg=DEFAULT_CONFIG, n_samples: int = 100,
                history=()) -> NominalRecord:
    s0 = np.asarray(s0, dtype=float)
    tgt = np.asarray(tgt, dtype=float)
    y0 = _augmented_start(s0, z[:6], z[6])
    sol = integrate_field("time", y0, 0.0, float(z[7]), field_params(eps, k), cfg)
    yf = sol.y_final
    r = np.append(_terminal_residual(yf, tgt), terminal_hamiltonian(yf, eps, k))
    samples, span = nominal_samples(y0, float(z[7]), eps, k, n_samples, cfg)
    return NominalRecord(eps=float(eps), unknowns=ShootingUnknowns.from_array(z), s0=s0,
                         target=tgt, y_final=yf, residual_norm=float(np.max(np.abs(r))),
                         sundman_span=span, samples=samples,
                         switches=switch_times(sol, eps, k), constants=k, history=tuple(history))


def random_guess(rng: np.random.Generator, k: PhysicalConstants) -> np.ndarray:
    lam = rng.uniform(-10.0, 10.0, 6)
    lm = rng.uniform(0.0, 10.0)
    tf = rng.uniform(1.0, 2.0) * k.year
    return np.concatenate([lam, [lm, tf]])


def multistart(s0, tgt, eps: float, k: PhysicalConstants, seed: int = 0, restarts: int = 200,
               method: str = "hybr", cfg: IntegratorConfig = DEFAULT_CONFIG,
               max_nfev: int = 400, log: Optional[Callable[[str], None]] = None) -> SolveResult:
    """First converged free-time solve over random restarts, in seed order."""
    rng = np.random.default_rng(seed)
    for i in range(restarts):
        z0 = random_guess(rng, k)
        res = solve(lambda z: shoot_free_time(z, s0, tgt, eps, k, cfg), z0, method, max_nfev)
        if log:
            log(f"restart {i}: |r|={res.norm:.3e} nfev={res.nfev}")
        if res.success and res.z[7] > 0:
            return res
    raise ShootingError(f"no convergence in {restarts} restarts at eps={eps}")


def homotopy_solve(s0, tgt, schedule: HomotopySchedule = HomotopySchedule(),
                   k: Optional[PhysicalConstants] = None, seed: int = 0, restarts: int = 200,
                   method: str = "hybr", cfg: IntegratorConfig = DEFAULT_CONFIG,
                   z_start: Optional[np.ndarray] = None, n_samples: int = 100,
                   max_bisections: int = 8,
                   log: Optional[Callable[[str], None]] = None) -> NominalRecord:
    """Solve at eps = 0.1 from random restarts and continue down the schedule.

    A failed continuation step inserts the log-midpoint between the last
    converged epsilon and the failed one; more than ``max_bisections``
    consecutive insertions abort with ShootingError.
    """
    from .equinoctial import nominal_constants

    k = k or nominal_constants()
    s0 = np.asarray(s0, dtype=float)
    check_state(s0[:7])
    tgt = tgt.as_array() if isinstance(tgt, TargetOrbit) else np.asarray(tgt, dtype=float)
    TargetOrbit.from_array(tgt)
    eps_list = list(schedule.eps_sequence)

    def fn(eps):
        return lambda z: shoot_free_time(z, s0, tgt, eps, k, cfg)

    if z_start is not None:
        res = solve(fn(eps_list[0]), z_start, method, schedule.max_nfev)
        if not res.success:
            raise ShootingError("supplied starting guess did not converge at eps = 0.1")
    else:
        res = multistart(s0, tgt, eps_list[0], k, seed, restarts, method, cfg, schedule.max_nfev, log)
    z = res.z
    history = [(eps_list[0], k.kg(s0[6] - _terminal(s0, z[:6], z[6], z[7], eps_list[0], k, cfg)[6]))]
    cur = eps_list[0]
    pending = eps_list[1:]
    bis = 0
    while pending:
        nxt = pending[0]
        res = solve(fn(nxt), z, method, schedule.max_nfev)
        if res.success:
            z, cur, bis = res.z, nxt, 0
            pending.pop(0)
            mf = _terminal(s0, z[:6], z[6], z[7], cur, k, cfg)[6]
            history.append((cur, k.kg(s0[6] - mf)))
            if log:
                log(f"eps={cur:.1e}: propellant {history[-1][1]:.4f} kg, nfev={res.nfev}")
            continue
        bis += 1
        if bis > max_bisections:
            raise ShootingError(f"homotopy stalled between eps={cur:.3e} and {nxt:.3e}")
        mid = math.sqrt(cur * nxt)
        if log:
            log(f"eps={nxt:.1e} failed (|r|={res.norm:.2e}); inserting {mid:.3e}")
        pending.insert(0, mid)
    return make_record(s0, tgt, z, cur, k, cfg, n_samples, history)


def solve_nominal(scenario: Optional[Scenario] = None, **kw) -> NominalRecord:
    scenario = scenario or Scenario()
    return homotopy_solve(scenario.departure_state(), scenario.target_elements(),
                          k=scenario.constants, **kw)


def bang_off_fraction(record: NominalRecord, lo: float = 0.01, hi: float = 0.99) -> float:
    """Fraction of uniform-time samples with an intermediate throttle."""
    sol = record.solution()
    ts = np.linspace(0.0, record.tf, 2000)
    u = controls_along(sol(ts), record.eps, record.constants)[:, 0]
    return float(np.mean((u > lo) & (u < hi)))


def continue_eps(make_fn: Callable[[float], Callable[[np.ndarray], np.ndarray]], z: np.ndarray,
                 eps_seq: Sequence[float], method: str = "hybr", max_nfev: int = 400,
                 max_bisections: int = 8,
                 log: Optional[Callable[[str], None]] = None) -> tuple[np.ndarray, float]:
    """Warm-started epsilon continuation from a solution at eps_seq[0]; returns (z, eps)."""
    cur = eps_seq[0]
    pending = list(eps_seq[1:])
    bis = 0
    while pending:
        nxt = pending[0]
        res = solve(make_fn(nxt), z, method, max_nfev)
        if res.success:
            z, cur, bis = res.z, nxt, 0
            pending.pop(0)
            continue
        bis += 1
        if bis > max_bisections:
            raise ShootingError(f"continuation stalled between eps={cur:.3e} and {nxt:.3e}")
        mid = math.sqrt(cur * nxt)
        if log:
            log(f"eps={nxt:.1e} failed (|r|={res.norm:.2e}); inserting {mid:.3e}")
        pending.insert(0, mid)
    return z, cur


def solve_fixed_time(s0, tgt, T: float, k: PhysicalConstants, guesses: Sequence[Sequence[float]] = (),
                     eps: float = 1e-6, schedule: HomotopySchedule = HomotopySchedule(),
                     seed: int = 0, restarts: int = 200, method: str = "hybr",
                     cfg: IntegratorConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Costates [lam0, lam_m0] of the fixed-time transfer of duration T.

    Each guess is tried directly at ``eps``; if none converges the problem is
    solved at eps = 0.1 from random restarts and continued down the schedule.
    """
    s0 = np.asarray(s0, dtype=float)
    tgt = tgt.as_array() if isinstance(tgt, TargetOrbit) else np.asarray(tgt, dtype=float)

    def make_fn(e):
        return lambda z: shoot_fixed_time(z, T, s0, tgt, e, k, cfg)

    for g in guesses:
        res = solve(make_fn(eps), np.asarray(g, dtype=float)[:7], method, schedule.max_nfev)
        if res.success:
            return res.z
    rng = np.random.default_rng(seed)
    e0 = schedule.eps_sequence[0]
    for _ in range(restarts):
        z0 = random_guess(rng, k)[:7]
        res = solve(make_fn(e0), z0, method, schedule.max_nfev)
        if not res.success:
            continue
        seq = [e for e in schedule.eps_sequence if e > eps] + [eps]
        try:
            z, _ = continue_eps(make_fn, res.z, seq, method, schedule.max_nfev)
            return z
        except ShootingError:
            continue
    raise ShootingError(f"fixed-time transfer of duration {T:.4f} not solved")


def propellant_of(s0, lam, T: float, eps: float, k: PhysicalConstants,
                  cfg: IntegratorConfig = DEFAULT_CONFIG) -> float:
    """Nondimensional propellant of the extremal from s0 with initial costates lam."""
    s0 = np.asarray(s0, dtype=float)
    yf = _terminal(s0, lam[:6], lam[6], T, eps, k, cfg)
    return float(s0[6] - yf[6])

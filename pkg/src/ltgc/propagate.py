"""Adaptive propagation of the optimal field in time or in Sundman anomaly."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence, Union

import numpy as np

from . import _dop853 as dop
from .equinoctial import PhysicalConstants
from .errors import PropagationError

Field = Literal["time", "sundman"]
_KIND = {"time": dop.FIELD_TIME, "sundman": dop.FIELD_SUNDMAN,
         "fixed": dop.FIELD_FIXED, "net": dop.FIELD_NET}

_STATUS_TEXT = {
    dop.RHS_FAILED: "domain error in the vector field",
    dop.STEP_UNDERFLOW: "step size underflow",
    dop.MAX_STEPS: "maximum number of steps exceeded",
}


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-12
    abs_tol: float = 1e-12
    max_step: float = math.inf
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_step <= 0 or self.max_steps < 1:
            raise ValueError("max_step and max_steps must be positive")

    def scaled(self, factor: float) -> "IntegratorConfig":
        return IntegratorConfig(self.rel_tol * factor, self.abs_tol * factor,
                                self.max_step, self.max_steps)


DEFAULT_CONFIG = IntegratorConfig()
FLIGHT_CONFIG = IntegratorConfig(rel_tol=1e-9, abs_tol=1e-9)


@dataclass(frozen=True)
class TerminationBox:
    a_min: float
    a_max: float
    inc_max: float

    def __post_init__(self):
        if not self.a_min < self.a_max:
            raise ValueError("a_min must be smaller than a_max")
        if not self.inc_max > 0:
            raise ValueError("inc_max must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([1.0, self.a_min, self.a_max, self.inc_max])

    def violation(self, y: np.ndarray) -> Optional[str]:
        """Name of the first violated bound for state y, or None if inside."""
        e2 = y[1] ** 2 + y[2] ** 2
        if e2 >= 1.0:
            return "not_elliptic"
        a = y[0] / (1.0 - e2)
        if a < self.a_min:
            return "a_below_min"
        if a > self.a_max:
            return "a_above_max"
        if 2.0 * math.atan(math.hypot(y[3], y[4])) > self.inc_max:
            return "inclination"
        return None


_NO_BOX = np.zeros(4)


@dataclass(frozen=True, eq=False)
class Solution:
    """Dense solution of one propagation; immutable and safe to share."""

    ts: np.ndarray
    ys: np.ndarray
    F: np.ndarray
    t_final: float
    reason: str
    nfev: int
    field: str = "time"

    @property
    def t0(self) -> float:
        return float(self.ts[0])

    @property
    def direction(self) -> float:
        return 1.0 if self.t_final >= self.t0 else -1.0

    @property
    def n_steps(self) -> int:
        return self.ts.shape[0] - 1

    @property
    def y0(self) -> np.ndarray:
        return self.ys[0].copy()

    @property
    def y_final(self) -> np.ndarray:
        return self(self.t_final)

    @property
    def span(self) -> float:
        return self.t_final - self.t0

    def __call__(self, t: Union[float, Sequence[float], np.ndarray]) -> np.ndarray:
        tq = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = sorted((self.t0, self.t_final))
        tol = 1e-12 * max(1.0, abs(lo), abs(hi))
        if np.any(tq < lo - tol) or np.any(tq > hi + tol):
            raise ValueError("query outside the solution span")
        if self.n_steps == 0:
            out = np.repeat(self.ys[:1], tq.shape[0], axis=0)
        else:
            out = dop.dense_eval(self.ts, self.ys, self.F, tq, self.direction)
        return out[0] if np.ndim(t) == 0 else out

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Accepted step nodes inside the span (the event point replaces the last)."""
        keep = self.direction * (self.ts - self.t_final) < 0.0
        ts = np.append(self.ts[keep], self.t_final)
        return ts, self(ts)


def integrate_field(kind: str, y0: np.ndarray, t0: float, t1: float, prm: np.ndarray,
                    cfg: IntegratorConfig = DEFAULT_CONFIG,
                    box: Optional[TerminationBox] = None,
                    crossing: Optional[tuple[int, float]] = None,
                    raise_on_failure: bool = True) -> Solution:
    """Run the compiled integrator on one of the registered vector fields."""
    y0 = np.ascontiguousarray(y0, dtype=float)
    if box is not None:
        why = box.violation(y0)
        if why is not None:
            return Solution(np.array([t0]), y0[None, :].copy(), np.empty((0, dop.POWER, y0.shape[0])),
                            t0, "initially_outside:" + why, 0, kind)
    idx, val = crossing if crossing is not None else (-1, 0.0)
    status, n_steps, ts, ys, F, nfev = dop.integrate(
        _KIND[kind], float(t0), y0, float(t1), np.ascontiguousarray(prm, dtype=float),
        cfg.rel_tol, cfg.abs_tol, cfg.max_step, cfg.max_steps,
        box.as_array() if box is not None else _NO_BOX, int(idx), float(val))
    if status < 0:
        if raise_on_failure:
            raise PropagationError(f"{_STATUS_TEXT[status]} at t={ts[-1]:.6g}", status)
        return Solution(ts, ys, F, float(ts[-1]), "failed:" + _STATUS_TEXT[status], nfev, kind)
    reason = "span_end"
    t_stop = float(ts[-1])
    if status in (dop.EVENT_BOX, dop.EVENT_CROSS) and n_steps > 0:
        provisional = Solution(ts, ys, F, float(ts[-1]), "", nfev, kind)
        a, b = float(ts[-2]), float(ts[-1])
        if status == dop.EVENT_BOX:
            reason = box.violation(ys[-1]) or "box"
            inside = lambda t: box.violation(provisional(t)) is None
        else:
            reason = "crossing"
            s0 = y0[idx] - val
            inside = lambda t: (provisional(t)[idx] - val) * s0 > 0.0
        t_stop = _bisect(inside, a, b)
    return Solution(ts, ys, F, t_stop, reason, nfev, kind)


def _bisect(inside, a: float, b: float, tol: float = 1e-10) -> float:
    """Locate the boundary between inside(a) == True and inside(b) == False."""
    for _ in range(200):
        if abs(b - a) <= tol:
            break
        mid = 0.5 * (a + b)
        if inside(mid):
            a = mid
        else:
            b = mid
    return b


def _start_vector(s0, field: Field) -> tuple[np.ndarray, float]:
    from .pmp import AugmentedState

    if isinstance(s0, AugmentedState):
        y, t = s0.as_array(), s0.t
    else:
        y = np.asarray(s0, dtype=float).ravel()
        t = float(y[14]) if y.shape[0] > 14 else 0.0
        y = y[:14].copy()
    if field == "sundman":
        y = np.append(y, t)
    return y, t


def _span(span) -> tuple[float, float]:
    if np.ndim(span) == 0:
        return 0.0, float(span)
    a, b = span
    return float(a), float(b)


def field_params(eps: float, k: PhysicalConstants) -> np.ndarray:
    return np.array([k.c1, k.c2, k.mu, float(getattr(eps, "epsilon", eps))])


def propagate(s0, span, field: Field = "time", eps: float = 1e-6,
              k: PhysicalConstants | None = None, cfg: IntegratorConfig = DEFAULT_CONFIG,
              crossing: Optional[tuple[int, float]] = None,
              raise_on_failure: bool = True) -> Solution:
    """Integrate the optimal field from ``s0`` over ``span``.

    ``span`` is either a length (starting at 0) or a (start, end) pair in the
    independent variable: time for ``field='time'``, Sundman anomaly otherwise.
    Negative-directed spans integrate backward. For the Sundman field the
    elapsed time is carried as component 15.
    """
    from .equinoctial import nominal_constants

    k = k or nominal_constants()
    y0, _ = _start_vector(s0, field)
    a, b = _span(span)
    return integrate_field(field, y0, a, b, field_params(eps, k), cfg,
                           crossing=crossing, raise_on_failure=raise_on_failure)


def propagate_until(s0, span, field: Field, eps: float, k: PhysicalConstants,
                    cfg: IntegratorConfig, box: TerminationBox,
                    raise_on_failure: bool = True) -> Solution:
    """Like :func:`propagate` but stops where the orbit leaves ``box``.

    The stopping point is refined by bisection on the dense output to 1e-10 in
    the independent variable; ``solution.reason`` names the bound hit, or is
    ``'span_end'``.
    """
    y0, _ = _start_vector(s0, field)
    a, b = _span(span)
    return integrate_field(field, y0, a, b, field_params(eps, k), cfg, box=box,
                           raise_on_failure=raise_on_failure)


def uniform_grid(sol: Solution, n: int) -> np.ndarray:
    if n < 2:
        raise ValueError("need at least two samples")
    return np.linspace(sol.t0, sol.t_final, n)


def sample_uniform_anomaly(sol: Solution, n: int) -> np.ndarray:
    """States at ``n`` equally spaced values of the independent variable.

    Endpoints are included; rows are ordered along the integration direction.
    """
    return sol(uniform_grid(sol, n))

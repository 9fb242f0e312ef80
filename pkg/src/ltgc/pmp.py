"""Pontryagin conditions for the mass-optimal transfer with a log-barrier throttle.

The hot paths live in :mod:`ltgc._kernels`; the functions here validate their
inputs and present the same quantities on dataclasses or plain arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import _kernels
from .equinoctial import EquinoctialState, PhysicalConstants, check_state
from .errors import DegenerateCostateError, DomainError


@dataclass(frozen=True)
class Costates:
    lam: tuple[float, ...]  # [lp, lf, lg, lh, lk, lL]
    lam_m: float

    def __post_init__(self):
        if len(self.lam) != 6:
            raise ValueError("six orbital costates required")
        if not all(math.isfinite(v) for v in (*self.lam, self.lam_m)):
            raise ValueError("costates must be finite")


@dataclass(frozen=True)
class AugmentedState:
    x: EquinoctialState
    co: Costates
    t: float = 0.0

    def as_array(self) -> np.ndarray:
        """14-vector [p f g h k L m lp lf lg lh lk lL lm]."""
        return np.concatenate([self.x.as_array(), self.co.lam, [self.co.lam_m]])

    @classmethod
    def from_array(cls, y: Sequence[float], t: float = 0.0) -> "AugmentedState":
        y = np.asarray(y, dtype=float)
        return cls(EquinoctialState.from_array(y[:7]),
                   Costates(tuple(float(v) for v in y[7:13]), float(y[13])), float(t))


@dataclass(frozen=True)
class Control:
    u: float
    i_tau: tuple[float, float, float]

    def __post_init__(self):
        if not 0.0 <= self.u <= 1.0:
            raise ValueError(f"throttle must lie in [0, 1], got {self.u}")
        if abs(math.sqrt(sum(c * c for c in self.i_tau)) - 1.0) > 1e-12:
            raise ValueError("thrust direction must be a unit vector")

    @property
    def direction(self) -> np.ndarray:
        return np.asarray(self.i_tau, dtype=float)


@dataclass(frozen=True)
class HomotopyParam:
    epsilon: float

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")


AugLike = Union[AugmentedState, Sequence[float], np.ndarray]
EpsLike = Union[HomotopyParam, float]


def aug_vector(s: AugLike) -> np.ndarray:
    if isinstance(s, AugmentedState):
        y = s.as_array()
    else:
        y = np.asarray(s, dtype=float).ravel()[:14].copy()
        if y.shape[0] != 14:
            raise ValueError("augmented state needs 14 components")
    check_state(y[:7])
    return y


def _eps(eps: EpsLike) -> float:
    return float(eps.epsilon if isinstance(eps, HomotopyParam) else eps)


def _ctrl(ctrl) -> tuple[float, np.ndarray]:
    if isinstance(ctrl, Control):
        return ctrl.u, ctrl.direction
    u, i_tau = ctrl
    return float(u), np.asarray(i_tau, dtype=float)


def primer(s: AugLike, mu: float = 1.0) -> np.ndarray:
    """B^T lambda."""
    y = aug_vector(s)
    B = _kernels.bmat(y[0], y[1], y[2], y[3], y[4], y[5], mu)
    return B.T @ y[7:13]


def switching_function(s: AugLike, k: PhysicalConstants) -> float:
    """SF = 1 - (c1/m)|B^T lambda| - c2 lambda_m."""
    y = aug_vector(s)
    return float(1.0 - k.c1 / y[6] * np.linalg.norm(primer(y, k.mu)) - k.c2 * y[13])


def optimal_direction(s: AugLike, mu: float = 1.0) -> np.ndarray:
    bl = primer(s, mu)
    nb = float(np.linalg.norm(bl))
    if nb < _kernels.DEGENERATE_NORM:
        raise DegenerateCostateError(f"|B^T lambda| = {nb:.3e}; thrust direction undefined")
    return -bl / nb


def optimal_throttle(sf: float, eps: EpsLike) -> float:
    """Barrier-smoothed throttle; eps = 0 gives the bang-bang limit."""
    e = _eps(eps)
    if e < 0.0:
        raise ValueError("epsilon must be non-negative")
    return _kernels.throttle(float(sf), e)


def optimal_control(s: AugLike, eps: EpsLike, k: PhysicalConstants) -> Control:
    y = aug_vector(s)
    i_tau = optimal_direction(y, k.mu)
    return Control(optimal_throttle(switching_function(y, k), eps), tuple(i_tau))


def hamiltonian(s: AugLike, ctrl, eps: EpsLike, k: PhysicalConstants) -> float:
    y = aug_vector(s)
    u, i_tau = _ctrl(ctrl)
    e = _eps(eps)
    if e > 0.0 and not 0.0 < u < 1.0:
        raise DomainError("log barrier undefined for u in {0, 1}")
    return _kernels.hamiltonian(y, u, i_tau[0], i_tau[1], i_tau[2], k.c1, k.c2, k.mu, e)


def costate_rhs(s: AugLike, ctrl, k: PhysicalConstants) -> np.ndarray:
    """(lambda_dot, lambda_m_dot) = -dH/d(x, m) for the given control."""
    y = aug_vector(s)
    u, i_tau = _ctrl(ctrl)
    out = np.empty(7)
    _kernels.costate_rhs(y, u, i_tau[0], i_tau[1], i_tau[2], k.c1, k.mu, out)
    return out


def _field_prm(eps: EpsLike, k: PhysicalConstants) -> np.ndarray:
    return np.array([k.c1, k.c2, k.mu, _eps(eps)])


def augmented_rhs(s: AugLike, eps: EpsLike, k: PhysicalConstants) -> np.ndarray:
    """Closed-loop optimal vector field (14 components) in time."""
    y = aug_vector(s)
    optimal_direction(y, k.mu)
    out = np.empty(14)
    if _kernels.aug_rhs(0.0, y, _field_prm(eps, k), out) != _kernels.OK:
        raise DomainError("invalid geometry")
    return out


def sundman_rhs(s: AugLike, eps: EpsLike, k: PhysicalConstants) -> np.ndarray:
    """Optimal field per unit Sundman anomaly; component 15 is dt/dtheta_s."""
    y = np.append(aug_vector(s), 0.0)
    optimal_direction(y, k.mu)
    out = np.empty(15)
    status = _kernels.sundman_rhs(0.0, y, _field_prm(eps, k), out)
    if status == _kernels.NOT_ELLIPTIC:
        raise DomainError("Sundman transform requires an elliptic orbit")
    if status != _kernels.OK:
        raise DomainError("invalid geometry")
    return out


def controls_along(Y: np.ndarray, eps: float, k: PhysicalConstants) -> np.ndarray:
    """Optimal (u, ir, it, in, SF) for each row of an (n, >=14) state array."""
    out = np.empty((Y.shape[0], 5))
    for j, y in enumerate(Y):
        u, i0, i1, i2, sf, _ = _kernels.optimal_control(np.ascontiguousarray(y[:14]),
                                                        k.c1, k.c2, k.mu, eps)
        out[j] = (u, i0, i1, i2, sf)
    return out


def hamiltonian_along(Y: np.ndarray, eps: float, k: PhysicalConstants) -> np.ndarray:
    """H evaluated with the optimal control at every row of a state array."""
    C = controls_along(Y, eps, k)
    return np.array([
        _kernels.hamiltonian(np.ascontiguousarray(y[:14]), c[0], c[1], c[2], c[3],
                             k.c1, k.c2, k.mu, eps)
        for y, c in zip(Y, C)
    ])

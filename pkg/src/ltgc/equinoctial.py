"""Modified equinoctial dynamics, element conversions and planetary ephemerides.

All quantities are nondimensional: length in AU, mass in units of the
launch mass, time chosen so that the Sun's gravitational parameter is 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Literal, Sequence, Union

import numpy as np

from . import _kernels
from .errors import DomainError

MU_SUN_SI = 1.32712440018e20  # m^3/s^2
AU_M = 1.495978707e11
G0 = 9.80665
DAY_S = 86400.0
YEAR_DAYS = 365.25
MJD_J2000 = 51544.5
LAUNCH_MJD = 53497.0  # 2005-05-07 00:00 TDB
VENUS_FREEZE_YEARS = 1.05

R_EARTH_M = 6378136.3
R_VENUS_M = 6051800.0


@dataclass(frozen=True)
class PhysicalConstants:
    """Spacecraft and unit constants, nondimensional unless suffixed."""

    mu: float = 1.0
    c1: float = 0.0
    c2: float = 0.0
    isp: float = 3800.0
    g0: float = G0
    length_unit: float = AU_M
    mass_unit: float = 1500.0
    time_unit: float = 0.0

    @classmethod
    def from_si(cls, thrust_n: float = 0.33, isp_s: float = 3800.0, m0_kg: float = 1500.0,
                mu_si: float = MU_SUN_SI, length_m: float = AU_M, g0: float = G0
                ) -> "PhysicalConstants":
        time_unit = math.sqrt(length_m ** 3 / mu_si)
        acc_unit = length_m / time_unit ** 2
        c1 = thrust_n / (m0_kg * acc_unit)
        veff = isp_s * g0 / (length_m / time_unit)
        return cls(mu=1.0, c1=c1, c2=c1 / veff, isp=isp_s, g0=g0,
                   length_unit=length_m, mass_unit=m0_kg, time_unit=time_unit)

    def __post_init__(self):
        if self.c1 <= 0.0 or self.c2 <= 0.0:
            raise ValueError("c1 and c2 must be positive")

    @property
    def year(self) -> float:
        """One Julian year in time units."""
        return YEAR_DAYS * DAY_S / self.time_unit

    @property
    def day(self) -> float:
        return DAY_S / self.time_unit

    def kg(self, mass: float) -> float:
        return mass * self.mass_unit


def nominal_constants() -> PhysicalConstants:
    """m0 = 1500 kg, Isp = 3800 s, Tmax = 0.33 N."""
    return PhysicalConstants.from_si()


@dataclass(frozen=True)
class EquinoctialState:
    p: float
    f: float
    g: float
    h: float
    k: float
    L: float
    m: float = 1.0

    def __post_init__(self):
        check_state(self.as_array())

    def as_array(self) -> np.ndarray:
        return np.array([self.p, self.f, self.g, self.h, self.k, self.L, self.m])

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "EquinoctialState":
        a = list(a)
        if len(a) == 6:
            a.append(1.0)
        return cls(*map(float, a[:7]))

    @property
    def elements(self) -> np.ndarray:
        return self.as_array()[:6]

    @property
    def w(self) -> float:
        return 1.0 + self.f * math.cos(self.L) + self.g * math.sin(self.L)


@dataclass(frozen=True)
class KeplerianElements:
    a: float
    e: float
    i: float
    raan: float
    argp: float
    nu: float


StateLike = Union[EquinoctialState, Sequence[float], np.ndarray]


def as_state_vector(x: StateLike) -> np.ndarray:
    """Return x as a float array [p, f, g, h, k, L, m] (m defaults to 1)."""
    if isinstance(x, EquinoctialState):
        return x.as_array()
    a = np.asarray(x, dtype=float).ravel()
    if a.shape[0] == 6:
        a = np.append(a, 1.0)
    if a.shape[0] < 7:
        raise ValueError(f"expected 6 or 7 components, got {a.shape[0]}")
    return a[:7].copy()


def check_state(x: np.ndarray) -> None:
    p, f, g, L = x[0], x[1], x[2], x[5]
    if not p > 0.0:
        raise DomainError(f"semilatus rectum must be positive, got p={p}")
    if len(x) > 6 and not x[6] > 0.0:
        raise DomainError(f"mass must be positive, got m={x[6]}")
    w = 1.0 + f * math.cos(L) + g * math.sin(L)
    if not w > 0.0:
        raise DomainError(f"w = 1 + f cos L + g sin L must be positive, got {w}")


def b_matrix(x: StateLike, mu: float = 1.0) -> np.ndarray:
    """Control influence matrix B(x) (6x3, radial/tangential/normal columns)."""
    v = as_state_vector(x)
    check_state(v)
    return _kernels.bmat(v[0], v[1], v[2], v[3], v[4], v[5], mu)


def d_vector(x: StateLike, mu: float = 1.0) -> np.ndarray:
    v = as_state_vector(x)
    check_state(v)
    d = np.zeros(6)
    d[5] = _kernels.dvec6(v[0], v[1], v[2], v[5], mu)
    return d


def b_matrix_batch(x, mu: float = 1.0, xp=np):
    """B(x) for a batch of element vectors ``x[..., 6]``.

    ``xp`` is the array namespace (numpy or torch); result has shape (..., 6, 3).
    No domain validation is performed.
    """
    p, f, g, h, k, L = (x[..., j] for j in range(6))
    sL = xp.sin(L)
    cL = xp.cos(L)
    w = 1.0 + f * cL + g * sL
    s2 = 1.0 + h * h + k * k
    hk = h * sL - k * cL
    q = xp.sqrt(p / mu)
    z = p * 0.0
    rows = [
        [z, 2.0 * p / w, z],
        [sL, ((1.0 + w) * cL + f) / w, -g * hk / w],
        [-cL, ((1.0 + w) * sL + g) / w, f * hk / w],
        [z, z, s2 * cL / (2.0 * w)],
        [z, z, s2 * sL / (2.0 * w)],
        [z, z, hk / w],
    ]
    B = xp.stack([xp.stack(r, -1) for r in rows], -2)
    return B * q[..., None, None]


def d_vector_batch(x, mu: float = 1.0, xp=np):
    """Last component of D(x) for a batch, shape (...)."""
    p, f, g, L = x[..., 0], x[..., 1], x[..., 2], x[..., 5]
    w = 1.0 + f * xp.cos(L) + g * xp.sin(L)
    return xp.sqrt(mu / p ** 3) * w * w


def eom_rhs(x: StateLike, u: float, i_tau: Sequence[float], k: PhysicalConstants) -> np.ndarray:
    """Time derivative of [p, f, g, h, k, L, m] under throttle u and direction i_tau."""
    v = as_state_vector(x)
    check_state(v)
    i_tau = np.asarray(i_tau, dtype=float)
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"throttle must lie in [0, 1], got {u}")
    if abs(np.linalg.norm(i_tau) - 1.0) > 1e-12:
        raise ValueError("thrust direction must be a unit vector")
    out = np.empty(7)
    _kernels.state_rhs(v, u, i_tau[0], i_tau[1], i_tau[2], k.c1, k.c2, k.mu, out)
    return out


def propellant_kg(m: float, k: PhysicalConstants) -> float:
    return (1.0 - m) * k.mass_unit


# --- conversions -------------------------------------------------------------

def wrap_angle(a: float) -> float:
    return a % (2.0 * math.pi)


def kep_to_equinoctial(kep: KeplerianElements) -> np.ndarray:
    """Keplerian set -> [p, f, g, h, k, L]."""
    if kep.e < 0.0:
        raise DomainError("eccentricity must be non-negative")
    p = kep.a * (1.0 - kep.e ** 2)
    if not p > 0.0:
        raise DomainError(f"a(1-e^2) must be positive, got a={kep.a}, e={kep.e}")
    lon_peri = kep.argp + kep.raan
    t = math.tan(kep.i / 2.0)
    return np.array([
        p,
        kep.e * math.cos(lon_peri),
        kep.e * math.sin(lon_peri),
        t * math.cos(kep.raan),
        t * math.sin(kep.raan),
        kep.raan + kep.argp + kep.nu,
    ])


def equinoctial_to_kep(x: StateLike) -> KeplerianElements:
    """[p, f, g, h, k, L] -> Keplerian set with angles wrapped to [0, 2pi)."""
    v = as_state_vector(x)
    p, f, g, h, k, L = v[:6]
    e = math.hypot(f, g)
    if e >= 1.0:
        raise DomainError(f"non-elliptic orbit, e={e}")
    a = p / (1.0 - e * e)
    inc = 2.0 * math.atan(math.hypot(h, k))
    raan = math.atan2(k, h)
    lon_peri = math.atan2(g, f)
    return KeplerianElements(
        a=a, e=e, i=inc,
        raan=wrap_angle(raan),
        argp=wrap_angle(lon_peri - raan),
        nu=wrap_angle(L - lon_peri),
    )


def semimajor_axis(x: StateLike) -> float:
    v = as_state_vector(x)
    e2 = v[1] ** 2 + v[2] ** 2
    if e2 >= 1.0:
        raise DomainError("non-elliptic orbit")
    return v[0] / (1.0 - e2)


def inclination(x: StateLike) -> float:
    v = as_state_vector(x)
    return 2.0 * math.atan(math.hypot(v[3], v[4]))


def equinoctial_to_cartesian(x: StateLike, mu: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Heliocentric position and velocity for an equinoctial state."""
    v = as_state_vector(x)
    check_state(v)
    p, f, g, h, k, L = v[:6]
    cL, sL = math.cos(L), math.sin(L)
    alpha2 = h * h - k * k
    s2 = 1.0 + h * h + k * k
    w = 1.0 + f * cL + g * sL
    r = p / w
    hk2 = 2.0 * h * k
    pos = np.array([
        r / s2 * (cL + alpha2 * cL + hk2 * sL),
        r / s2 * (sL - alpha2 * sL + hk2 * cL),
        2.0 * r / s2 * (h * sL - k * cL),
    ])
    q = math.sqrt(mu / p) / s2
    vel = np.array([
        -q * (sL + alpha2 * sL - hk2 * cL + g - hk2 * f + alpha2 * g),
        -q * (-cL + alpha2 * cL + hk2 * sL - f + hk2 * g + alpha2 * f),
        2.0 * q * (h * cL + k * sL + f * h + g * k),
    ])
    return pos, vel


# --- ephemerides -------------------------------------------------------------
# Standish, "Keplerian Elements for Approximate Positions of the Major Planets",
# Table 1 (valid 1800-2050 AD), J2000 ecliptic. Columns:
# a [AU], e, I [deg], mean longitude [deg], longitude of perihelion [deg], node [deg];
# second row is the rate per Julian century.
_STANDISH = {
    "venus": (
        (0.72333566, 0.00677672, 3.39467605, 181.97909950, 131.60246718, 76.67984255),
        (0.00000390, -0.00004107, -0.00078890, 58517.81538729, 0.00268329, -0.27769418),
    ),
    "earth": (  # Earth-Moon barycentre
        (1.00000261, 0.01671123, -0.00001531, 100.46457166, 102.93768193, 0.0),
        (0.00000562, -0.00004392, -0.01294668, 35999.37244981, 0.32327364, 0.0),
    ),
}

Body = Literal["earth", "venus"]


def solve_kepler(M: float, e: float, tol: float = 1e-15) -> float:
    """Eccentric anomaly from mean anomaly by Newton iteration."""
    M = math.remainder(M, 2.0 * math.pi)
    E = M + e * math.sin(M) if e < 0.8 else math.pi * math.copysign(1.0, M)
    for _ in range(50):
        dE = (E - e * math.sin(E) - M) / (1.0 - e * math.cos(E))
        E -= dE
        if abs(dE) < tol:
            break
    return E


def ephemeris_mjd(body: Body, mjd: float) -> KeplerianElements:
    """Osculating heliocentric ecliptic elements of ``body`` at a Modified Julian Date."""
    try:
        el0, rate = _STANDISH[body.lower()]
    except KeyError:
        raise ValueError(f"unknown body {body!r}; expected 'earth' or 'venus'") from None
    T = (mjd - MJD_J2000) / 36525.0
    a, e, I, Lm, varpi, node = (c + r * T for c, r in zip(el0, rate))
    I, Lm, varpi, node = (math.radians(v) for v in (I, Lm, varpi, node))
    argp = varpi - node
    M = Lm - varpi
    E = solve_kepler(M, e)
    nu = 2.0 * math.atan2(math.sqrt(1.0 + e) * math.sin(E / 2.0),
                          math.sqrt(1.0 - e) * math.cos(E / 2.0))
    return KeplerianElements(a=a, e=e, i=I, raan=node, argp=argp, nu=nu)


def ephemeris(body: Body, epoch: float = 0.0, k: PhysicalConstants | None = None,
              reference_mjd: float = LAUNCH_MJD) -> KeplerianElements:
    """Elements of ``body`` at ``epoch`` time units past ``reference_mjd``."""
    k = k or nominal_constants()
    return ephemeris_mjd(body, reference_mjd + epoch * k.time_unit / DAY_S)


def date_to_mjd(d: Union[str, date, datetime]) -> float:
    """Calendar date (ISO string or date/datetime, taken as TDB) to MJD."""
    if isinstance(d, str):
        try:
            d = datetime.fromisoformat(d)
        except ValueError as exc:
            raise ValueError(f"invalid date {d!r}") from exc
    if not isinstance(d, datetime):
        d = datetime(d.year, d.month, d.day)
    ref = datetime(1858, 11, 17)
    delta = d - ref
    return delta.days + delta.seconds / DAY_S + delta.microseconds / (DAY_S * 1e6)


@dataclass(frozen=True)
class Scenario:
    """Earth departure state and frozen Venus target orbit."""

    launch_mjd: float = LAUNCH_MJD
    freeze_years: float = VENUS_FREEZE_YEARS
    constants: PhysicalConstants = field(default_factory=nominal_constants)

    def departure_state(self) -> np.ndarray:
        """Spacecraft [p, f, g, h, k, L, m] at launch: Earth's state, m = 1."""
        x = kep_to_equinoctial(ephemeris_mjd("earth", self.launch_mjd))
        return np.append(x, 1.0)

    def target_elements(self) -> np.ndarray:
        """Venus [p, f, g, h, k] frozen at launch + freeze_years."""
        mjd = self.launch_mjd + self.freeze_years * YEAR_DAYS
        return kep_to_equinoctial(ephemeris_mjd("venus", mjd))[:5]

    def earth_elements(self) -> np.ndarray:
        return kep_to_equinoctial(ephemeris_mjd("earth", self.launch_mjd))[:5]


def nominal_box(scenario: Scenario | None = None):
    """a in [a_V - 100 R_V, a_E + 100 R_E], inclination within 7 degrees."""
    from .propagate import TerminationBox

    scenario = scenario or Scenario()
    au = scenario.constants.length_unit
    a_v = ephemeris_mjd("venus", scenario.launch_mjd + scenario.freeze_years * YEAR_DAYS).a
    a_e = ephemeris_mjd("earth", scenario.launch_mjd).a
    return TerminationBox(a_min=a_v - 100.0 * R_VENUS_M / au,
                          a_max=a_e + 100.0 * R_EARTH_M / au,
                          inc_max=math.radians(7.0))

"""Rotating-frame CRTBP vector fields in nondimensional units.

Units: length ``d_star`` (primary separation), mass ``m_star`` (sum of the
primary masses) and time ``t_star`` chosen so that G = 1.  The larger primary
sits at ``(-mu, 0, 0)``, the smaller one at ``(1 - mu, 0, 0)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import _kernels as K
from .errors import DegenerateMass, SingularityError

G_KM3_KG_S2 = 6.67430e-20
G0_M_S2 = 9.80665
SINGULARITY_FLOOR = 1e-12

_CORIOLIS = np.array([[0.0, 2.0, 0.0], [-2.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


@dataclass(frozen=True)
class CrtbpParams:
    mu: float
    d_star: float = 1.0
    t_star: float = 1.0
    m_star: float = 1.0
    r_body1: float = 1e-9
    r_body2: float = 1e-9
    m_dry: float = 1e-9

    def __post_init__(self):
        if not 0.0 <= self.mu < 0.5:
            raise ValueError(f"mu must lie in [0, 1/2), got {self.mu}")
        if self.r_body1 <= 0 or self.r_body2 <= 0 or self.m_dry <= 0:
            raise ValueError("body radii and dry mass must be positive")

    @classmethod
    def from_physical(cls, mu, d_star_km, m_star_kg, r_body1_km, r_body2_km, m_dry_kg, G=G_KM3_KG_S2):
        """Build nondimensional constants from SI-ish inputs (km, kg, s)."""
        t_star = float(np.sqrt(d_star_km**3 / (G * m_star_kg)))
        return cls(
            mu=mu,
            d_star=d_star_km,
            t_star=t_star,
            m_star=m_star_kg,
            r_body1=r_body1_km / d_star_km,
            r_body2=r_body2_km / d_star_km,
            m_dry=m_dry_kg / m_star_kg,
        )

    @property
    def r1(self):
        return np.array([-self.mu, 0.0, 0.0])

    @property
    def r2(self):
        return np.array([1.0 - self.mu, 0.0, 0.0])

    @property
    def v_star(self):
        """Velocity unit in km/s."""
        return self.d_star / self.t_star

    @property
    def acc_star(self):
        """Acceleration unit in m/s^2."""
        return self.d_star * 1e3 / self.t_star**2

    def days(self, t):
        return t * self.t_star / 86400.0

    def from_days(self, days):
        return days * 86400.0 / self.t_star


@dataclass(frozen=True)
class EngineParams:
    tau_max: float
    beta: float
    m0: float

    def __post_init__(self):
        if self.tau_max <= 0:
            raise ValueError("tau_max must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.m0 <= 0:
            raise ValueError("m0 must be positive")

    @classmethod
    def from_physical(cls, thrust_n, m0_kg, params: CrtbpParams, isp_s=None, beta=None):
        """Thrust in newtons, mass in kg; give either ``isp_s`` or a nondimensional ``beta``."""
        if (isp_s is None) == (beta is None):
            raise ValueError("give exactly one of isp_s, beta")
        tau = thrust_n / (params.m_star * params.acc_star)
        if isp_s is not None:
            beta = params.v_star * 1e3 / (G0_M_S2 * isp_s)
        return cls(tau_max=tau, beta=float(beta), m0=m0_kg / params.m_star)

    @property
    def max_acceleration(self):
        """Initial thrust acceleration tau_max / m0 (nondimensional)."""
        return self.tau_max / self.m0


@dataclass(frozen=True)
class State:
    r: np.ndarray
    v: np.ndarray
    m: float

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float).reshape(3))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3))
        object.__setattr__(self, "m", float(self.m))

    def as_array(self):
        return np.concatenate([self.r, self.v, [self.m]])

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x[0:3], x[3:6], x[6])

    def is_admissible(self, params: CrtbpParams):
        return (
            np.linalg.norm(self.r - params.r1) > params.r_body1
            and np.linalg.norm(self.r - params.r2) > params.r_body2
            and self.m >= params.m_dry
        )


@dataclass(frozen=True)
class Control:
    rho: float
    omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float).reshape(3))
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"throttle {self.rho} outside [0, 1]")


def coriolis(v):
    """h(v) = (2 v_y, -2 v_x, 0)."""
    v = np.asarray(v, dtype=float)
    return np.array([2.0 * v[1], -2.0 * v[0], 0.0])


def coriolis_matrix():
    return _CORIOLIS.copy()


def _check_distance(r, params, floor):
    d1 = np.linalg.norm(r - params.r1)
    d2 = np.linalg.norm(r - params.r2) if params.mu > 0.0 else np.inf
    if d1 < floor or d2 < floor:
        raise SingularityError(f"|r - r_i| = {min(d1, d2):.3e} below floor {floor:.1e}")


def _g_and_dg(r, params, floor):
    r = np.asarray(r, dtype=float)
    _check_distance(r, params, floor)
    g = np.empty(3)
    G = np.empty((3, 3))
    K.gravity_and_jacobian(r[0], r[1], r[2], params.mu, g, G)
    return g, G


def gravity(r, params: CrtbpParams, floor=SINGULARITY_FLOOR):
    """Centrifugal plus two-body attractions of both primaries."""
    return _g_and_dg(r, params, floor)[0]


def gravity_jacobian(r, params: CrtbpParams, floor=SINGULARITY_FLOOR):
    return _g_and_dg(r, params, floor)[1]


def gravity_hessian_form(r, a, b, params: CrtbpParams, floor=SINGULARITY_FLOOR):
    """Vector with components sum_jk d2g_i/dr_j dr_k a_j b_k."""
    r = np.asarray(r, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_distance(r, params, floor)
    out = np.zeros(3)
    for coef, c in ((1.0 - params.mu, params.r1), (params.mu, params.r2)):
        if coef == 0.0:
            continue
        d = r - c
        n2 = d @ d
        n = np.sqrt(n2)
        da = d @ a
        db = d @ b
        out += 3.0 * coef * ((a * db + b * da + d * (a @ b)) / (n2 * n2 * n) - 5.0 * d * da * db / (n2**3 * n))
    return out


def drift_field(x: State, params: CrtbpParams):
    """f0(x) = (v, h(v) + g(r), 0) as a length-7 array."""
    out = np.zeros(7)
    out[0:3] = x.v
    out[3:6] = coriolis(x.v) + gravity(x.r, params)
    return out


def thrust_field(x: State, omega, engine: EngineParams, params: CrtbpParams | None = None):
    """f1(x, omega) = (0, tau_max omega / m, -tau_max beta) as a length-7 array."""
    m_dry = params.m_dry if params is not None else 0.0
    if x.m <= m_dry or x.m <= 0.0:
        raise DegenerateMass(f"m = {x.m:.6g} at or below dry mass {m_dry:.6g}")
    out = np.zeros(7)
    out[3:6] = engine.tau_max * np.asarray(omega, dtype=float) / x.m
    out[6] = -engine.tau_max * engine.beta
    return out


def collinear_point(params: CrtbpParams, which=1):
    """x-coordinate of L1 (between the primaries), L2 or L3."""
    mu = params.mu

    def gx(x):
        return gravity(np.array([x, 0.0, 0.0]), params)[0]

    eps = 1e-9
    if which == 1:
        return brentq(gx, -mu + eps, 1.0 - mu - eps, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    if which == 2:
        return brentq(gx, 1.0 - mu + eps, 2.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    if which == 3:
        return brentq(gx, -2.0, -mu - eps, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    raise ValueError("which must be 1, 2 or 3")

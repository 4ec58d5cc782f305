"""Pontryagin extremals: Hamiltonian, control laws and the event-aware flow.

Costates use the normal multiplier p0 = -1.  The extended point packs
``(r, v, m, p_r, p_v, p_m)`` into a length-14 array (see ``_kernels``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .dynamics import SINGULARITY_FLOOR, CrtbpParams, Control, EngineParams, State, coriolis, gravity, gravity_jacobian
from .errors import (
    ChatteringSuspected,
    IntegrationError,
    RegularityViolation,
    SingularityError,
    UndefinedDirection,
)

BURN = 1
COAST = 0


@dataclass(frozen=True)
class Costate:
    p_r: np.ndarray
    p_v: np.ndarray
    p_m: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "p_r", np.asarray(self.p_r, dtype=float).reshape(3))
        object.__setattr__(self, "p_v", np.asarray(self.p_v, dtype=float).reshape(3))
        object.__setattr__(self, "p_m", float(self.p_m))
        if not (np.all(np.isfinite(self.p_r)) and np.all(np.isfinite(self.p_v)) and np.isfinite(self.p_m)):
            raise ValueError("costate entries must be finite")

    def as_array(self):
        return np.concatenate([self.p_r, self.p_v, [self.p_m]])

    @classmethod
    def from_array(cls, p):
        p = np.asarray(p, dtype=float)
        return cls(p[0:3], p[3:6], p[6] if p.shape[0] > 6 else 0.0)


@dataclass(frozen=True)
class ExtremalPoint:
    x: State
    p: Costate
    t: float = 0.0

    def as_array(self):
        return np.concatenate([self.x.as_array(), self.p.as_array()])

    @classmethod
    def from_array(cls, z, t=0.0):
        z = np.asarray(z, dtype=float)
        return cls(State.from_array(z[:7]), Costate.from_array(z[7:14]), float(t))


@dataclass(frozen=True)
class FlowOptions:
    """Integrator and event settings."""

    rtol: float = 1e-12
    atol: float = 1e-12
    switch_tol: float = 1e-12
    time_tol: float = 1e-13
    regularity_tol: float = 1e-8
    max_switches: int = 200
    singularity_floor: float = SINGULARITY_FLOOR
    chunk: int = 20000
    control_sensitivities: bool = False


@dataclass
class SwitchEvent:
    """A located switching time with the one-sided sensitivities if propagated."""

    t: float
    z: np.ndarray
    h01: float
    mode_before: int
    mode_after: int
    phi_minus: np.ndarray | None = None
    phi_plus: np.ndarray | None = None
    dt_dp0: np.ndarray | None = None


@dataclass
class ExtremalTrajectory:
    t: np.ndarray
    z: np.ndarray
    switch_times: list = field(default_factory=list)
    arc_modes: list = field(default_factory=list)
    homotopy_lambda: float = 1.0
    events: list = field(default_factory=list)
    phi: np.ndarray | None = None
    phi_samples: np.ndarray | None = None
    seeds: tuple = ()
    sample_arc: np.ndarray | None = None

    @property
    def final(self):
        return self.z[-1]

    @property
    def n_switches(self):
        return len(self.switch_times)

    @property
    def n_burn_arcs(self):
        return sum(1 for m in self.arc_modes if m == BURN)

    def point(self, i):
        return ExtremalPoint.from_array(self.z[i], self.t[i])

    def arc_bounds(self):
        """(t_start, t_end, mode) for every arc."""
        edges = [self.t[0], *self.switch_times, self.t[-1]]
        return [(edges[i], edges[i + 1], self.arc_modes[i]) for i in range(len(self.arc_modes))]


def kernel_params(engine: EngineParams, params: CrtbpParams, lam=1.0):
    par = np.zeros(8)
    par[:4] = (params.mu, engine.tau_max, engine.beta, min(float(lam), 1.0))
    return par


def hamiltonian(pt: ExtremalPoint, u: Control, engine: EngineParams, params: CrtbpParams):
    """p.(f0 + rho f1) - rho."""
    x, p = pt.x, pt.p
    h0 = p.p_r @ x.v + p.p_v @ (coriolis(x.v) + gravity(x.r, params))
    pf1 = engine.tau_max * (p.p_v @ u.omega) / x.m - engine.tau_max * engine.beta * p.p_m
    return h0 + u.rho * (pf1 - 1.0)


def switching_function(pt: ExtremalPoint, engine: EngineParams):
    return (
        engine.tau_max * np.linalg.norm(pt.p.p_v) / pt.x.m
        - engine.tau_max * engine.beta * pt.p.p_m
        - 1.0
    )


def _direction(p_v, need):
    n = np.linalg.norm(p_v)
    if n == 0.0:
        if need:
            raise UndefinedDirection("primer vector vanishes on a thrust arc")
        return np.array([1.0, 0.0, 0.0])
    return p_v / n


def optimal_control(pt: ExtremalPoint, engine: EngineParams, mode=None, switch_tol=1e-12):
    """Bang-bang maximizer; inside the switch band the current ``mode`` wins."""
    h1 = switching_function(pt, engine)
    if abs(h1) <= switch_tol and mode is not None:
        rho = 1.0 if mode == BURN else 0.0
    else:
        rho = 1.0 if h1 > 0 else 0.0
    return Control(rho, _direction(pt.p.p_v, rho > 0))


def smoothed_control(pt: ExtremalPoint, engine: EngineParams, lam, mode=None):
    """Maximizer of p.f - (lam rho + (1 - lam) rho^2)."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if lam == 1.0:
        return optimal_control(pt, engine, mode)
    h1 = switching_function(pt, engine)
    rho = min(max(h1 / (2.0 * (1.0 - lam)) + 0.5, 0.0), 1.0)
    return Control(rho, _direction(pt.p.p_v, rho > 0))


def canonical_rhs(pt: ExtremalPoint, u: Control, engine: EngineParams, params: CrtbpParams):
    """(dx/dt, dp/dt) for a given control, each of length 7."""
    x, p = pt.x, pt.p
    tau, beta = engine.tau_max, engine.beta
    G = gravity_jacobian(x.r, params)
    xdot = np.zeros(7)
    xdot[0:3] = x.v
    xdot[3:6] = coriolis(x.v) + gravity(x.r, params) + u.rho * tau * u.omega / x.m
    xdot[6] = -u.rho * tau * beta
    pdot = np.zeros(7)
    pdot[0:3] = -G.T @ p.p_v
    pdot[3:6] = -p.p_r + np.array([2.0 * p.p_v[1], -2.0 * p.p_v[0], 0.0])
    pdot[6] = u.rho * tau * (p.p_v @ u.omega) / x.m**2
    return xdot, pdot


def _bands(lam):
    """Ordered psi-bands (lo, hi, kernel mode, fixed throttle) for the throttle law."""
    if lam >= 1.0:
        return [(-np.inf, 1.0, K.MODE_FIXED, 0.0), (1.0, np.inf, K.MODE_FIXED, 1.0)]
    return [
        (-np.inf, lam, K.MODE_FIXED, 0.0),
        (lam, 2.0 - lam, K.MODE_BAND, 0.0),
        (2.0 - lam, np.inf, K.MODE_FIXED, 1.0),
    ]


def _initial_band(z, par, bands, switch_tol):
    psi = K.switching_value(z, par) + 1.0
    rate = K.switching_rate(z, par)
    for i, (lo, hi, _, _) in enumerate(bands):
        if lo + switch_tol < psi < hi - switch_tol:
            return i
        if abs(psi - lo) <= switch_tol:
            return i if rate > 0 or i == 0 else i - 1
        if abs(psi - hi) <= switch_tol:
            return i if rate < 0 or i == len(bands) - 1 else i + 1
    return len(bands) - 1


def _status_error(status, t):
    if status == K.ST_SINGULAR:
        return SingularityError(f"trajectory reached a primary at t={t:.6g}")
    return IntegrationError(f"step size underflow at t={t:.6g}")


def _field(z, par, mode):
    out = np.empty(K.NZ)
    K.rhs(z, par, mode, 0, out)
    return out


def _h1_gradient(z, par):
    """Gradient of H1 in the 14 extended coordinates."""
    tau, beta = par[1], par[2]
    m = z[6]
    pv = z[10:13]
    n = np.linalg.norm(pv)
    g = np.zeros(K.NZ)
    g[6] = -tau * n / m**2
    g[10:13] = tau * pv / (m * n)
    g[13] = -tau * beta
    return g


def _set_band(par, band):
    lo, hi, kmode, rho = band
    par[4] = rho
    par[5] = max(lo, -1e300)
    par[6] = min(hi, 1e300)
    return kmode


def flow(
    z0,
    t_f,
    lam,
    engine: EngineParams,
    params: CrtbpParams,
    opts: FlowOptions = FlowOptions(),
    seeds=(),
    t0=0.0,
    record=True,
    lambda_sensitivity=False,
):
    """Integrate the extended canonical system from ``t0`` to ``t_f``.

    ``seeds`` lists extended indices of initial costate components whose
    sensitivities are propagated; the result holds ``phi`` (14 x len(seeds)),
    plus a trailing d z / d lam column when ``lambda_sensitivity`` is set.
    Every change of throttle regime is located as an event.  At lam = 1 these
    are the bang-bang switches and the sensitivities receive the saltation
    update there; for lam < 1 the throttle is continuous and no update is due.
    """
    seeds = tuple(int(s) for s in seeds)
    nc = len(seeds) + int(bool(lambda_sensitivity))
    n = K.NZ * (1 + nc)
    y = np.zeros(n)
    y[: K.NZ] = np.asarray(z0, dtype=float)
    for c, s in enumerate(seeds):
        y[K.NZ + s * nc + c] = 1.0
    bang = lam >= 1.0
    bands = _bands(lam)
    par = kernel_params(engine, params, lam)
    if lambda_sensitivity:
        if lam >= 1.0:
            raise ValueError("lambda sensitivity is defined for lam < 1 only")
        par[7] = 1.0
    ib = _initial_band(y, par, bands, opts.switch_tol)
    kmode = _set_band(par, bands[ib])
    rec_dim = n if record else K.NZ
    cap = opts.chunk if record else 4
    chunks_t = [np.array([t0])]
    chunks_y = [y[:rec_dim].copy()[None, :]]
    arcs = [np.array([0])]
    rec_t = np.empty(cap)
    rec_y = np.empty((cap, rec_dim))
    t = float(t0)
    nerr = n if opts.control_sensitivities else K.NZ
    h = K.initial_step(y, t, t_f, par, kmode, nc, opts.rtol, opts.atol, nerr)
    switches = []
    modes = [ib] if bang else []
    events = []
    t_last = -np.inf if t_f >= t0 else np.inf
    while True:
        status, t, h, nrec = K.integrate(
            y, t, t_f, h, par, kmode, nc, opts.rtol, opts.atol, nerr,
            True, opts.singularity_floor, t_last,
            rec_t, rec_y, rec_dim, 0, opts.switch_tol, opts.time_tol,
        )
        if record and nrec:
            chunks_t.append(rec_t[:nrec].copy())
            chunks_y.append(rec_y[:nrec].copy())
            arcs.append(np.full(nrec, len(events)))
        if status == K.ST_DONE:
            break
        if status == K.ST_BUFFER:
            continue
        if status != K.ST_SWITCH:
            raise _status_error(status, t)
        z = y[: K.NZ].copy()
        h01 = K.switching_rate(z, par)
        psi = K.switching_value(z, par) + 1.0
        lo, hi = bands[ib][0], bands[ib][1]
        step = -1 if abs(psi - lo) <= abs(psi - hi) else 1
        jb = ib + step
        if bang and abs(h01) < opts.regularity_tol:
            raise RegularityViolation(t, h01, opts.regularity_tol)
        ev = SwitchEvent(t=t, z=z, h01=h01, mode_before=ib, mode_after=jb)
        par_old = par.copy()
        kmode_old = kmode
        kmode = _set_band(par, bands[jb])
        if nc and bang:
            f_minus = _field(z, par_old, kmode_old)
            f_plus = _field(z, par, kmode)
            P = y[K.NZ:].reshape(K.NZ, nc)
            ev.phi_minus = P.copy()
            grad = _h1_gradient(z, par)
            dt = -(grad @ P) / (grad @ f_minus)
            P += np.outer(f_minus - f_plus, dt)
            ev.phi_plus = P.copy()
            ev.dt_dp0 = dt
        events.append(ev)
        if bang:
            switches.append(t)
            modes.append(jb)
            if len(switches) > opts.max_switches:
                raise ChatteringSuspected(len(switches), t)
        elif len(events) > 4 * opts.max_switches:
            raise ChatteringSuspected(len(events), t)
        ib = jb
        t_last = t
    zs = np.vstack(chunks_y)
    traj = ExtremalTrajectory(
        t=np.concatenate(chunks_t),
        z=zs[:, : K.NZ],
        switch_times=switches,
        arc_modes=modes,
        homotopy_lambda=float(lam),
        events=events,
        seeds=seeds,
        sample_arc=np.concatenate(arcs),
    )
    if nc:
        traj.phi = y[K.NZ:].reshape(K.NZ, nc).copy()
        if record:
            traj.phi_samples = zs[:, K.NZ:].reshape(-1, K.NZ, nc)
    if not record:
        traj.t = np.array([t0, t])
        traj.z = np.vstack([np.asarray(z0, dtype=float), y[: K.NZ]])
        traj.sample_arc = np.array([0, len(events)])
    return traj


def integrate_extremal(
    p0: Costate,
    x0: State,
    t_f,
    lam,
    engine: EngineParams,
    params: CrtbpParams,
    opts: FlowOptions = FlowOptions(),
):
    """Flow of the canonical system from (x0, p0) on [0, t_f]."""
    if t_f <= 0:
        raise ValueError("t_f must be positive")
    if not x0.is_admissible(params):
        raise ValueError("initial state outside the admissible set")
    z0 = np.concatenate([x0.as_array(), p0.as_array()])
    return flow(z0, t_f, lam, engine, params, opts)


def hamiltonian_along(traj: ExtremalTrajectory, engine: EngineParams, params: CrtbpParams):
    """Maximized Hamiltonian at every sample."""
    lam = traj.homotopy_lambda
    par = kernel_params(engine, params, lam)
    out = np.empty(traj.t.shape[0])
    arc = traj.sample_arc
    for i, z in enumerate(traj.z):
        if lam >= 1.0:
            rho = 1.0 if traj.arc_modes[arc[i]] == BURN else 0.0
            cost = rho
        else:
            rho = K.throttle(z, par, K.MODE_SMOOTH)[0]
            cost = lam * rho + (1.0 - lam) * rho * rho
        f = np.empty(K.NZ)
        par[4] = rho
        K.rhs(z, par, K.MODE_FIXED, 0, f)
        out[i] = z[7:14] @ f[0:7] - cost
    return out

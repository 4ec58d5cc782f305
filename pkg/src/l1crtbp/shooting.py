"""Target manifolds, the shooting function and its Newton / homotopy solvers.

Unknowns are the initial costate p0 (n = 7, or n = 6 for the constant-mass
reduction) and the multipliers nu of the final constraints.  The residual is

    S(p0, nu) = [ phi(x(t_f)) ; p(t_f) - dphi(x(t_f))^T nu ].
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import extremal as E
from .dynamics import CrtbpParams, EngineParams, State
from .errors import HomotopyStalled, L1CrtbpError, NoConvergence
from .precise import PreciseOptions, precise_flow

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- targets


@dataclass(frozen=True)
class TargetManifold:
    """Final constraint phi(x) = 0 with its first and second derivatives.

    The callables take a state array (only the first ``n`` entries are read)
    and keep the floating dtype of their input, so long-double states work.
    """

    l: int
    n: int
    phi: Callable
    dphi: Callable
    d2phi: Callable
    name: str = "custom"

    def __post_init__(self):
        if not 1 <= self.l <= self.n:
            raise ValueError(f"codimension l={self.l} must lie in [1, n={self.n}]")
        if self.n not in (6, 7):
            raise ValueError("state dimension n must be 6 or 7")

    def weighted_hessian(self, x, nu):
        """sum_i nu_i d2phi_i(x)."""
        W = np.zeros((self.n, self.n))
        for i in range(self.l):
            if nu[i] != 0.0:
                W += float(nu[i]) * self.d2phi(x, i)
        return W


def _dt(x):
    return np.result_type(np.asarray(x).dtype, np.float64)


def circular_orbit_target(center, radius, speed, n=6, name="circular"):
    """Planar circular orbit of given radius and rotating-frame speed about ``center``."""
    c = np.asarray(center, dtype=float).reshape(3)
    if radius <= 0:
        raise ValueError("radius must be positive")

    def phi(x):
        x = np.asarray(x)
        d = x[0:3] - c
        v = x[3:6]
        return np.array(
            [0.5 * (d @ d) - 0.5 * radius**2, 0.5 * (v @ v) - 0.5 * speed**2, v @ d, x[2], x[5]],
            dtype=_dt(x),
        )

    def dphi(x):
        x = np.asarray(x)
        d = x[0:3] - c
        v = x[3:6]
        J = np.zeros((5, n), dtype=_dt(x))
        J[0, 0:3] = d
        J[1, 3:6] = v
        J[2, 0:3] = v
        J[2, 3:6] = d
        J[3, 2] = 1.0
        J[4, 5] = 1.0
        return J

    blocks = [np.zeros((n, n)) for _ in range(5)]
    blocks[0][0:3, 0:3] = np.eye(3)
    blocks[1][3:6, 3:6] = np.eye(3)
    blocks[2][0:3, 3:6] = np.eye(3)
    blocks[2][3:6, 0:3] = np.eye(3)

    def d2phi(x, i):
        return blocks[i].copy()

    return TargetManifold(5, n, phi, dphi, d2phi, name)


def moon_circular_speed(params: CrtbpParams, r_m, frame="rotating"):
    """Speed used in the velocity row of the Moon target.

    ``rotating``: the two-body value sqrt(mu / r_m) taken as the rotating-frame
    speed.  ``inertial``: the rotating-frame speed of an orbit that is circular
    in the inertial frame (prograde), |sqrt(mu / r_m) - r_m|.
    """
    vc = np.sqrt(params.mu / r_m)
    if frame == "rotating":
        return float(vc)
    if frame == "inertial":
        return float(abs(vc - r_m))
    raise ValueError(f"frame must be 'rotating' or 'inertial', got {frame!r}")


def moon_circular_target(params: CrtbpParams, r_m, n=6, frame="rotating"):
    if r_m <= params.r_body2:
        raise ValueError(f"r_m={r_m} must exceed the secondary radius {params.r_body2}")
    return circular_orbit_target(params.r2, r_m, moon_circular_speed(params, r_m, frame), n, "moon_circular")


def fixed_state_target(x_f, n=6):
    """l = n target x(t_f) = x_f."""
    x_f = np.asarray(x_f, dtype=float)[:n].copy()

    def phi(x):
        x = np.asarray(x)
        return (x[:n] - x_f).astype(_dt(x))

    def dphi(x):
        return np.eye(n, dtype=_dt(x))

    def d2phi(x, i):
        return np.zeros((n, n))

    return TargetManifold(n, n, phi, dphi, d2phi, "fixed_state")


# ------------------------------------------------------------- problem


@dataclass(frozen=True)
class ShootingUnknowns:
    p0: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        p0 = np.asarray(self.p0)
        nu = np.asarray(self.nu)
        if p0.dtype.kind != "f":
            p0 = p0.astype(float)
        if nu.dtype.kind != "f":
            nu = nu.astype(float)
        if not (np.all(np.isfinite(p0)) and np.all(np.isfinite(nu))):
            raise ValueError("shooting unknowns must be finite")
        object.__setattr__(self, "p0", p0.copy())
        object.__setattr__(self, "nu", nu.copy())

    def vector(self):
        return np.concatenate([self.p0, self.nu])

    @classmethod
    def from_vector(cls, u, n):
        u = np.asarray(u)
        return cls(u[:n], u[n:])


@dataclass(frozen=True)
class ShootingProblem:
    x0: State
    t_f: float
    target: TargetManifold
    engine: EngineParams
    params: CrtbpParams
    lam: float = 1.0

    def __post_init__(self):
        if not self.t_f > 0:
            raise ValueError("t_f must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.target.n == 6 and self.engine.beta != 0.0:
            raise ValueError("the reduced n=6 model needs beta = 0")

    @property
    def n(self):
        return self.target.n

    @property
    def l(self):
        return self.target.l

    @property
    def seeds(self):
        return tuple(range(7, 7 + self.n))

    def z0(self, p0):
        p0 = np.asarray(p0)
        z = np.zeros(14, dtype=_dt(p0))
        z[:7] = self.x0.as_array()
        z[7 : 7 + self.n] = p0
        return z

    def with_lambda(self, lam):
        return replace(self, lam=float(lam))


@dataclass(frozen=True)
class ShootingOptions:
    tol: float = 1e-10
    max_iter: int = 30
    armijo: float = 1e-4
    min_step: float = 1.0 / 1024
    fd_step: float = 1e-7
    jacobian: str = "auto"
    flow: E.FlowOptions = E.FlowOptions()
    precise: bool = False
    precise_options: PreciseOptions = PreciseOptions()
    globalize: bool = False

    def __post_init__(self):
        if self.jacobian not in ("auto", "fd", "variational"):
            raise ValueError("jacobian must be auto, fd or variational")


@dataclass
class ShootingSolution:
    unknowns: ShootingUnknowns
    trajectory: E.ExtremalTrajectory | None
    residual: np.ndarray
    lam: float
    iterations: int = 0
    history: list = field(default_factory=list)
    precise: bool = False
    problem: ShootingProblem | None = None
    flow_options: E.FlowOptions | None = None

    @property
    def residual_norm(self):
        return float(np.max(np.abs(self.residual)))


def _assemble(problem, xf, pf, nu):
    tgt = problem.target
    J = tgt.dphi(xf)
    return np.concatenate([tgt.phi(xf), pf - J.T @ nu])


def _jacobian_blocks(problem, xf, nu, Phi):
    """DS from the sensitivity block Phi (14 x k, first n columns w.r.t. p0)."""
    n = problem.n
    tgt = problem.target
    x = np.asarray(xf, dtype=float)
    J = tgt.dphi(x).astype(float)
    W = tgt.weighted_hessian(x, np.asarray(nu, dtype=float))
    Mx = Phi[0:n]
    Mp = Phi[7 : 7 + n]
    top = J @ Mx
    bot = Mp - W @ Mx
    return top, bot, J


def evaluate(problem: ShootingProblem, u, opts: ShootingOptions = ShootingOptions(), jacobian=False, lambda_column=False):
    """Residual, optional variational Jacobian and d S / d lambda, and the end-point flow."""
    n, l = problem.n, problem.l
    u = np.asarray(u)
    p0, nu = u[:n], u[n:]
    lam = problem.lam
    if lambda_column and lam >= 1.0:
        raise ValueError("the lambda column exists for lam < 1 only")
    seeds = problem.seeds if jacobian else ()
    tr = E.flow(
        problem.z0(np.asarray(p0, dtype=float)), problem.t_f, lam, problem.engine, problem.params, opts.flow,
        seeds=seeds, record=False, lambda_sensitivity=lambda_column and jacobian,
    )
    zf = tr.final
    S = _assemble(problem, zf[:n], zf[7 : 7 + n], np.asarray(nu, dtype=float))
    if not jacobian:
        return S, None, None, tr
    top, bot, J = _jacobian_blocks(problem, zf[:n], nu, tr.phi)
    DS = np.zeros((n + l, n + l))
    DS[:l, :n] = top[:, :n]
    DS[l:, :n] = bot[:, :n]
    DS[l:, n:] = -J.T
    dl = None
    if lambda_column:
        dl = np.concatenate([top[:, n], bot[:, n]])
    return S, DS, dl, tr


def precise_residual(problem: ShootingProblem, u, popts: PreciseOptions = PreciseOptions()):
    """Residual of a lam = 1 problem from the extended-precision flow."""
    if problem.lam < 1.0:
        raise ValueError("the extended flow handles lam = 1 only")
    n = problem.n
    u = np.asarray(u)
    res = precise_flow(problem.z0(u[:n].astype(np.longdouble)), problem.t_f, problem.engine, problem.params, popts)
    zf = res.z
    return _assemble(problem, zf[:n], zf[7 : 7 + n], u[n:].astype(np.longdouble)), res


def shooting_residual(problem: ShootingProblem, unknowns: ShootingUnknowns, opts: ShootingOptions = ShootingOptions(), precise=False):
    u = unknowns.vector()
    if precise:
        return precise_residual(problem, u, opts.precise_options)[0]
    return evaluate(problem, u, opts)[0]


def fd_jacobian(problem, u, opts: ShootingOptions = ShootingOptions()):
    """Column-wise central differences with step fd_step * max(1, |u_j|)."""
    u = np.asarray(u, dtype=float)
    cols = []
    for j in range(u.shape[0]):
        h = opts.fd_step * max(1.0, abs(u[j]))
        up = u.copy()
        um = u.copy()
        up[j] += h
        um[j] -= h
        cols.append((evaluate(problem, up, opts)[0] - evaluate(problem, um, opts)[0]) / (2 * h))
    return np.column_stack(cols)


def _jac_mode(problem, opts):
    if opts.jacobian != "auto":
        return opts.jacobian
    return "variational" if problem.lam >= 1.0 else "fd"


def _residual(problem, u, opts, use_precise):
    if use_precise:
        return precise_residual(problem, u, opts.precise_options)[0]
    return evaluate(problem, u, opts)[0]


def _newton_step(problem, u, opts):
    mode = _jac_mode(problem, opts)
    if mode == "variational":
        _, DS, _, _ = evaluate(problem, np.asarray(u, dtype=float), opts, jacobian=True)
    else:
        DS = fd_jacobian(problem, u, opts)
    return DS


def _solve_linear(DS, rhs):
    try:
        return np.linalg.solve(DS, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(DS, rhs, rcond=None)[0]


def solve_shooting(problem: ShootingProblem, initial_guess: ShootingUnknowns, opts: ShootingOptions = ShootingOptions()):
    """Damped Newton on the shooting function.

    The line search halves the step until the 2-norm satisfies the Armijo
    decrease with factor ``opts.armijo``.  With ``opts.precise`` at lam = 1 the
    residual is evaluated by the extended-precision flow while the Jacobian
    keeps its float64 variational form.
    """
    use_precise = opts.precise and problem.lam >= 1.0
    u = initial_guess.vector()
    u = u.astype(np.longdouble) if use_precise else u.astype(float)
    history = []
    try:
        S = _residual(problem, u, opts, use_precise)
    except L1CrtbpError as exc:
        if opts.globalize:
            return _globalized(problem, initial_guess, opts, exc)
        raise
    it = 0
    while True:
        nrm = float(np.max(np.abs(S)))
        history.append(nrm)
        log.debug("newton lam=%.6g it=%d |S|=%.3e", problem.lam, it, nrm)
        if nrm <= opts.tol:
            break
        if it >= opts.max_iter:
            if opts.globalize:
                return _globalized(problem, initial_guess, opts, NoConvergence(it, nrm, "iteration limit"))
            raise NoConvergence(it, nrm, "iteration limit")
        DS = _newton_step(problem, u, opts)
        du = _solve_linear(DS, -np.asarray(S, dtype=float))
        n2 = float(np.linalg.norm(np.asarray(S, dtype=float)))
        alpha = 1.0
        while True:
            trial = u + (alpha * du).astype(u.dtype)
            try:
                S_t = _residual(problem, trial, opts, use_precise)
                ok = float(np.linalg.norm(np.asarray(S_t, dtype=float))) <= (1.0 - opts.armijo * alpha) * n2
            except L1CrtbpError:
                ok = False
            if ok:
                break
            alpha *= 0.5
            if alpha < opts.min_step:
                if opts.globalize:
                    return _globalized(problem, initial_guess, opts, NoConvergence(it, nrm, "line search failed"))
                raise NoConvergence(it, nrm, "line search failed")
        u, S = trial, S_t
        it += 1
    return _finish(problem, u, S, it, history, use_precise, opts)


def _finish(problem, u, S, it, history, use_precise, opts):
    n = problem.n
    uf = np.asarray(u, dtype=float)
    traj = E.flow(problem.z0(uf[:n]), problem.t_f, problem.lam, problem.engine, problem.params, opts.flow)
    return ShootingSolution(
        unknowns=ShootingUnknowns.from_vector(u, n),
        trajectory=traj,
        residual=np.asarray(S),
        lam=problem.lam,
        iterations=it,
        history=history,
        precise=use_precise,
        problem=problem,
        flow_options=opts.flow,
    )


# ------------------------------------------------------- globalization


@dataclass(frozen=True)
class ArclengthOptions:
    """Predictor-corrector settings for curves of the form F(w) = 0, w = (u, s)."""

    ds0: float = 1e-2
    ds_max: float = 1e6
    ds_min: float = 1e-9
    grow: float = 1.6
    shrink: float = 0.7
    accept: float = 1e-6
    step_tol: float = 1e-10
    max_corrector: int = 7
    min_alignment: float = 0.95
    max_steps: int = 20000
    end_gap: float = 1e-9


def _null_tangent(J, prev=None, last_positive=True):
    t = np.linalg.svd(J)[2][-1]
    if prev is None:
        return t if (t[-1] > 0) == last_positive else -t
    return t if t @ prev > 0 else -t


def _trace_curve(F, w0, s_end, aopts: ArclengthOptions, scale, label, on_accept=None):
    """Pseudo-arclength continuation of F(w) = 0 from w0 until w[-1] reaches s_end.

    ``scale`` rescales the unknowns (w = scale * what) so all columns of the
    Jacobian have unit norm at the start.  Returns the last accepted point.
    """
    wh = w0 / scale

    def Fh(x):
        R, J = F(x * scale)
        return R, J * scale

    R, J = Fh(wh)
    tv = _null_tangent(J)
    ds = aopts.ds0
    for _ in range(aopts.max_steps):
        s_now = wh[-1] * scale[-1]
        if s_now >= s_end - aopts.end_gap:
            return wh * scale
        if tv[-1] > 0 and (wh[-1] + ds * tv[-1]) * scale[-1] > s_end:
            ds = (s_end - aopts.end_gap * 0.5 - s_now) / (scale[-1] * tv[-1])
        wp = wh + ds * tv
        wc = wp.copy()
        ok = False
        for _k in range(aopts.max_corrector):
            try:
                R, J = Fh(wc)
            except (L1CrtbpError, ValueError):
                # the corrector left the admissible domain, e.g. lambda < 0
                break
            if not np.all(np.isfinite(R)):
                break
            if np.max(np.abs(R)) < aopts.accept:
                ok = True
                break
            A = np.vstack([J, tv])
            b = np.append(-R, -(tv @ (wc - wp)))
            try:
                dw = np.linalg.solve(A, b)
            except np.linalg.LinAlgError:
                break
            wc = wc + dw
            if np.linalg.norm(dw) <= aopts.step_tol * (1.0 + np.linalg.norm(wc)):
                try:
                    R, J = Fh(wc)
                except (L1CrtbpError, ValueError):
                    break
                ok = True
                break
        if ok:
            tn = _null_tangent(J, tv)
            if tn @ tv < aopts.min_alignment:
                ds *= 0.5
            else:
                wh, tv = wc, tn
                if _k <= 2:
                    ds = min(ds * aopts.grow, aopts.ds_max)
                elif _k >= 4:
                    ds *= aopts.shrink
                if on_accept is not None:
                    on_accept(wh * scale, R)
                continue
        else:
            ds *= 0.5
        if ds < aopts.ds_min:
            raise HomotopyStalled(float(wh[-1] * scale[-1]), f"{label}: step below {aopts.ds_min:g}")
    raise HomotopyStalled(float(wh[-1] * scale[-1]), f"{label}: step budget exhausted")


def newton_homotopy(problem: ShootingProblem, guess: ShootingUnknowns, opts: ShootingOptions = ShootingOptions(), aopts=ArclengthOptions(ds0=1e-2, ds_max=1e6, accept=1e-7)):
    """Track F(u, theta) = S(u) - (1 - theta) S(u0) from theta = 0 to 1 and polish with Newton.

    Plain damped Newton stalls at local minima of the residual norm on the
    Earth-Moon map; this continuation is a standard global fallback.
    """
    if problem.lam >= 1.0:
        raise ValueError("the Newton homotopy runs on smooth (lam < 1) problems")
    u0 = guess.vector().astype(float)
    S0 = evaluate(problem, u0, opts)[0]

    def F(w):
        S, DS, _, _ = evaluate(problem, w[:-1], opts, jacobian=True)
        return S - (1.0 - w[-1]) * S0, np.hstack([DS, S0[:, None]])

    w0 = np.append(u0, 0.0)
    scale = np.ones_like(w0)
    w = _trace_curve(F, w0, 1.0, aopts, scale, "newton homotopy")
    polish = replace(opts, globalize=False, jacobian="variational")
    return solve_shooting(problem, ShootingUnknowns.from_vector(w[:-1], problem.n), polish)


def _globalized(problem, guess, opts, exc):
    if problem.lam >= 1.0:
        raise exc
    log.info("damped Newton failed (%s); switching to the Newton homotopy", exc)
    return newton_homotopy(problem, guess, replace(opts, globalize=False))


# --------------------------------------------------------- continuation


def continuation(
    problem: ShootingProblem,
    lambda_grid,
    seed_guess: ShootingUnknowns,
    opts: ShootingOptions = ShootingOptions(),
    min_step=1e-4,
    final_opts: ShootingOptions | None = None,
):
    """Natural continuation in lambda with bisection of failed steps.

    Each solve is warm-started from the previous one (secant predictor once two
    solutions exist).  ``final_opts`` overrides the options of the lam = 1 solve.
    """
    grid = [float(x) for x in lambda_grid]
    if len(grid) < 2 or grid[0] != 0.0 or grid[-1] != 1.0 or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("lambda_grid must increase strictly from 0 to 1")
    sols = [solve_shooting(problem.with_lambda(0.0), seed_guess, opts)]
    targets = grid[1:]
    i = 0
    while i < len(targets):
        lam_t = targets[i]
        prev = sols[-1]
        o = final_opts if (lam_t >= 1.0 and final_opts is not None) else opts
        guess = _predict(sols, lam_t)
        try:
            sols.append(solve_shooting(problem.with_lambda(lam_t), guess, o))
            i += 1
            continue
        except L1CrtbpError as exc:
            step = lam_t - prev.lam
            if step / 2 < min_step:
                raise HomotopyStalled(prev.lam, str(exc)) from exc
            targets.insert(i, prev.lam + step / 2)
            log.info("continuation: bisecting to lam=%.6g", targets[i])
    return sols


def _predict(sols, lam_t):
    last = sols[-1]
    u1 = last.unknowns.vector().astype(float)
    n = last.unknowns.p0.shape[0]
    if len(sols) >= 2 and lam_t < 1.0:
        a = sols[-2]
        u0 = a.unknowns.vector().astype(float)
        dl = last.lam - a.lam
        if dl > 0:
            return ShootingUnknowns.from_vector(u1 + (u1 - u0) * (lam_t - last.lam) / dl, n)
    return ShootingUnknowns.from_vector(u1, n)


def arclength_continuation(
    problem: ShootingProblem,
    start: ShootingSolution,
    opts: ShootingOptions = ShootingOptions(),
    aopts: ArclengthOptions = ArclengthOptions(),
    lam_end=1.0,
    callback=None,
):
    """Pseudo-arclength continuation of S(u, lambda) = 0 in (u, lambda).

    Uses the exact d S / d lambda column from the variational flow, which
    follows steep stretches of the path where natural steps stall.  Stops
    ``aopts.end_gap`` short of ``lam_end`` (the smoothed law degenerates at 1).
    """
    n = problem.n
    w0 = np.append(start.unknowns.vector().astype(float), start.lam)

    def F(w):
        S, DS, dl, _ = evaluate(problem.with_lambda(w[-1]), w[:-1], opts, jacobian=True, lambda_column=True)
        return S, np.hstack([DS, dl[:, None]])

    _, J = F(w0)
    scale = 1.0 / np.linalg.norm(J, axis=0)
    scale[-1] = 1.0 / np.linalg.norm(J[:, -1]) if np.linalg.norm(J[:, -1]) > 0 else 1.0
    t0 = time.time()

    last = {"S": evaluate(problem.with_lambda(start.lam), w0[:-1], opts)[0]}

    def accept(w, R):
        # keep the corrector residual: a plain re-evaluation this close to
        # lam = 1 can underflow the step size at the steep control transition
        last["S"] = R
        if callback is not None:
            callback(w[-1], w[:-1], time.time() - t0)

    w = _trace_curve(F, w0, lam_end, aopts, scale, "lambda continuation", accept)
    lam = float(w[-1])
    S = last["S"]
    return ShootingSolution(ShootingUnknowns.from_vector(w[:-1], n), None, S, lam, problem=problem.with_lambda(lam), flow_options=opts.flow)


# ------------------------------------------------------------- seeding


def coarse_guess(problem: ShootingProblem, direction="velocity", scale=1.0):
    """p_r = 0, nu = 0 and p_v along the initial velocity (or radius), |p_v| = scale * m0 / tau_max."""
    x0 = problem.x0
    if direction == "velocity":
        d = x0.v
    elif direction == "radial":
        d = x0.r - problem.params.r1
    else:
        raise ValueError("direction must be 'velocity' or 'radial'")
    p0 = np.zeros(problem.n)
    p0[3:6] = d / np.linalg.norm(d) * scale * x0.m / problem.engine.tau_max
    return ShootingUnknowns(p0, np.zeros(problem.l))


def primer_seed(problem: ShootingProblem, magnitude=0.9, coupling=0.9):
    """Tangential primer seed for a transfer from a circular orbit about the larger primary.

    p_v along the velocity with |p_v| = magnitude; p_r along the radius with
    p_r = coupling * magnitude * (n_orb + 1) e_r, which makes the primer rotate
    with the orbit (n_orb the inertial mean motion).  nu is the least-squares
    multiplier of the resulting final costate.
    """
    x0 = problem.x0
    d = x0.r - problem.params.r1
    r = np.linalg.norm(d)
    n_orb = np.sqrt((1.0 - problem.params.mu) / r**3)
    p0 = np.zeros(problem.n)
    p0[0:3] = coupling * magnitude * (n_orb + 1.0) * d / r
    p0[3:6] = magnitude * x0.v / np.linalg.norm(x0.v)
    tr = E.flow(problem.z0(p0), problem.t_f, problem.lam, problem.engine, problem.params, E.FlowOptions(), record=False)
    zf = tr.final
    J = problem.target.dphi(zf[: problem.n])
    nu = np.linalg.lstsq(J.T, zf[7 : 7 + problem.n], rcond=None)[0]
    return ShootingUnknowns(p0, nu)

"""Second-order certification of bang-bang extremals through Jacobi fields.

The variational pair (Mx, Mp) = (dx/dp0, dp/dp0) is propagated from
Mx(0) = 0, Mp(0) = I with jump updates at every switch.  delta = det(Mx)
decides Conditions 1 and 2; the reduced form C^T W C decides Condition 3.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, solve_ivp

from . import extremal as E
from .dynamics import CrtbpParams, EngineParams, coriolis_matrix, gravity_hessian_form, gravity_jacobian
from .errors import NearSingularMx, PathSolveFailed, RankDeficientTarget, RegularityViolation, UndefinedDirection

STRICT_OPTIMUM = "strict strong-local optimum"
FOCAL_POINT = "focal point on arc"
FOLD = "fold at switch"
COND3_FAILURE = "Condition-3 failure"
INCONCLUSIVE = "inconclusive"

PASS = "pass"
FAIL = "fail"
UNDECIDED = "inconclusive"
VACUOUS = "vacuous"


@dataclass
class VariationalPair:
    Mx: np.ndarray
    Mp: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.Mx = np.asarray(self.Mx, dtype=float)
        self.Mp = np.asarray(self.Mp, dtype=float)
        if not (np.all(np.isfinite(self.Mx)) and np.all(np.isfinite(self.Mp))):
            raise ValueError("variational pair has non-finite entries")

    @classmethod
    def initial(cls, n, t=0.0):
        return cls(np.zeros((n, n)), np.eye(n), t)

    @property
    def n(self):
        return self.Mx.shape[0]


@dataclass
class DeltaTrace:
    t: np.ndarray
    delta: np.ndarray
    arc: np.ndarray
    switch_times: list
    switch_pairs: list
    arc_modes: list
    arc_min_abs: list = field(default_factory=list)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.delta = np.asarray(self.delta, dtype=float)
        self.arc = np.asarray(self.arc, dtype=int)
        if not self.arc_min_abs:
            self.arc_min_abs = [
                float(np.min(np.abs(self.delta[self.arc == k]))) if np.any(self.arc == k) else float("nan")
                for k in range(len(self.arc_modes))
            ]

    @property
    def first_burn_arc(self):
        for k, m in enumerate(self.arc_modes):
            if m == E.BURN:
                return k
        return None


@dataclass
class Verdict:
    status: str
    time: float | None = None
    index: int | None = None
    note: str = ""

    @property
    def passed(self):
        return self.status in (PASS, VACUOUS)


@dataclass
class Condition3Result:
    verdict: Verdict
    reduced: np.ndarray
    min_eig: float
    W: np.ndarray
    C: np.ndarray


@dataclass
class SufficiencyReport:
    condition1: Verdict
    condition2: Verdict
    condition3: Verdict
    reduced_matrix: np.ndarray
    min_eig: float
    nu: np.ndarray
    C: np.ndarray
    classification: str
    trace: DeltaTrace | None = None
    final_pair: VariationalPair | None = None
    j_curve: "JCurve | None" = None
    j_curve_error: str = ""


@dataclass
class JCurve:
    xi: np.ndarray
    J: np.ndarray
    endpoints: np.ndarray
    costates: np.ndarray
    slope0: float
    curvature0: float


# ------------------------------------------------------ Hamiltonian blocks


def _dims(n):
    if n not in (6, 7):
        raise ValueError("n must be 6 or 7")
    return n == 7


def _unit(p_v):
    nv = float(np.linalg.norm(p_v))
    if nv == 0.0:
        raise UndefinedDirection("burn-arc Hessian needs a nonzero primer vector")
    return p_v / nv, nv


def gravity_hessian_matrix(r, w, params: CrtbpParams):
    """Symmetric matrix sum_k w_k d2 g_k / dr dr."""
    Hm = np.empty((3, 3))
    eye = np.eye(3)
    for j in range(3):
        for k in range(j, 3):
            Hm[j, k] = Hm[k, j] = w @ gravity_hessian_form(r, eye[j], eye[k], params)
    return Hm


def hamiltonian_blocks(pt: E.ExtremalPoint, rho, engine: EngineParams, params: CrtbpParams, n=7):
    """(H_px, H_pp, H_xx, H_xp) of the maximized Hamiltonian at throttle rho in {0, 1}.

    H_px[i, j] = d xdot_i / d x_j, H_pp = d xdot / d p, H_xx the state Hessian
    and H_xp = H_px^T.
    """
    full = _dims(n)
    r, m = pt.x.r, pt.x.m
    pv = pt.p.p_v
    tau = engine.tau_max
    Hpx = np.zeros((n, n))
    Hpp = np.zeros((n, n))
    Hxx = np.zeros((n, n))
    Hpx[0:3, 3:6] = np.eye(3)
    Hpx[3:6, 0:3] = gravity_jacobian(r, params)
    Hpx[3:6, 3:6] = coriolis_matrix()
    Hxx[0:3, 0:3] = gravity_hessian_matrix(r, pv, params)
    if rho:
        w, nv = _unit(pv)
        Hpp[3:6, 3:6] = tau / (m * nv) * (np.eye(3) - np.outer(w, w))
        if full:
            Hpx[3:6, 6] = -tau * w / m**2
            Hxx[6, 6] = 2.0 * tau * nv / m**3
    return Hpx, Hpp, Hxx, Hpx.T.copy()


def variational_rhs(pt: E.ExtremalPoint, pair: VariationalPair, engine: EngineParams, params: CrtbpParams, rho):
    Hpx, Hpp, Hxx, Hxp = hamiltonian_blocks(pt, rho, engine, params, pair.n)
    return Hpx @ pair.Mx + Hpp @ pair.Mp, -Hxx @ pair.Mx - Hxp @ pair.Mp


def _f1(pt, engine, n):
    w, _ = _unit(pt.p.p_v)
    f1 = np.zeros(n)
    f1[3:6] = engine.tau_max * w / pt.x.m
    if n == 7:
        f1[6] = -engine.tau_max * engine.beta
    return f1


def _grad_pf1(pt, engine, n):
    """Row derivative in x of p.f1 at fixed optimal omega."""
    g = np.zeros(n)
    if n == 7:
        g[6] = -engine.tau_max * np.linalg.norm(pt.p.p_v) / pt.x.m**2
    return g


def _h01(pt, engine, params):
    # dH1/dt = {H0, H1} + rho {H1, H1} = H01 on both sides of the switch
    from .singular import bracket_H01

    return bracket_H01(pt, engine, params)


def switch_time_gradient(pt_i: E.ExtremalPoint, pair_minus: VariationalPair, engine: EngineParams, params: CrtbpParams, regularity_tol=1e-8):
    """d t_i / d p0 = -[p.df1/dx Mx + f1^T Mp] / H01."""
    h01 = _h01(pt_i, engine, params)
    if abs(h01) < regularity_tol:
        raise RegularityViolation(pt_i.t, h01, regularity_tol)
    n = pair_minus.n
    return -(_grad_pf1(pt_i, engine, n) @ pair_minus.Mx + _f1(pt_i, engine, n) @ pair_minus.Mp) / h01


def jump_update(pair_minus: VariationalPair, pt_i: E.ExtremalPoint, dti, delta_rho, engine: EngineParams):
    """Mx+ = Mx- - d_rho f1 (x) dt_i, Mp+ = Mp- + d_rho grad_x(p.f1)^T (x) dt_i."""
    if delta_rho not in (-1, 1, -1.0, 1.0):
        raise ValueError("delta_rho must be +1 or -1")
    n = pair_minus.n
    dti = np.asarray(dti, dtype=float)
    Mx = pair_minus.Mx - delta_rho * np.outer(_f1(pt_i, engine, n), dti)
    Mp = pair_minus.Mp + delta_rho * np.outer(_grad_pf1(pt_i, engine, n), dti)
    return VariationalPair(Mx, Mp, pt_i.t)


# -------------------------------------------------------- propagation


def _pair_from_phi(Phi, n, t):
    return VariationalPair(Phi[0:n, :n], Phi[7 : 7 + n, :n], t)


def propagate_variational(
    traj: E.ExtremalTrajectory,
    engine: EngineParams,
    params: CrtbpParams,
    n=None,
    opts: E.FlowOptions = E.FlowOptions(control_sensitivities=True),
    method="kernel",
):
    """delta(t) = det Mx(t) along a lam = 1 extremal plus the final pair.

    ``kernel`` re-integrates the extremal with the sensitivity block in the
    compiled integrator (jump updates applied at located switches).
    ``python`` integrates ``variational_rhs`` arc by arc with scipy and applies
    ``switch_time_gradient`` / ``jump_update``; it is slower and serves as an
    independent check.
    """
    if traj.homotopy_lambda < 1.0:
        raise ValueError("certification needs a lam = 1 extremal")
    if n is None:
        n = 6 if engine.beta == 0.0 else 7
    _dims(n)
    if method == "python":
        return _propagate_python(traj, engine, params, n, opts)
    if method != "kernel":
        raise ValueError("method must be 'kernel' or 'python'")
    seeds = tuple(range(7, 7 + n))
    tr = E.flow(traj.z[0], traj.t[-1], 1.0, engine, params, opts, seeds=seeds, t0=traj.t[0])
    Ps = tr.phi_samples
    delta = np.array([np.linalg.det(P[0:n, :n]) for P in Ps])
    pairs = []
    for ev in tr.events:
        pairs.append((float(np.linalg.det(ev.phi_minus[0:n, :n])), float(np.linalg.det(ev.phi_plus[0:n, :n]))))
    trace = DeltaTrace(tr.t, delta, tr.sample_arc, list(tr.switch_times), pairs, list(tr.arc_modes))
    return trace, _pair_from_phi(tr.phi, n, float(tr.t[-1])), tr


def _propagate_python(traj, engine, params, n, opts):
    edges = [float(traj.t[0]), *[float(s) for s in traj.switch_times], float(traj.t[-1])]
    z = np.asarray(traj.z[0], dtype=float).copy()
    pair = VariationalPair.initial(n, edges[0])
    ts, ds, arcs, pairs = [], [], [], []

    def rhs(t, y, rho):
        zz = y[:14]
        pt = E.ExtremalPoint.from_array(zz, t)
        omega = pt.p.p_v / np.linalg.norm(pt.p.p_v) if rho else np.zeros(3)
        xdot, pdot = E.canonical_rhs(pt, _control(rho, omega), engine, params)
        P = VariationalPair(y[14 : 14 + n * n].reshape(n, n), y[14 + n * n :].reshape(n, n))
        dMx, dMp = variational_rhs(pt, P, engine, params, rho)
        return np.concatenate([xdot, pdot, dMx.ravel(), dMp.ravel()])

    for k, mode in enumerate(traj.arc_modes):
        rho = 1 if mode == E.BURN else 0
        y0 = np.concatenate([z, pair.Mx.ravel(), pair.Mp.ravel()])
        sol = solve_ivp(rhs, (edges[k], edges[k + 1]), y0, method="DOP853", rtol=opts.rtol, atol=opts.atol, args=(rho,), dense_output=False)
        for t, y in zip(sol.t, sol.y.T):
            ts.append(t)
            ds.append(np.linalg.det(y[14 : 14 + n * n].reshape(n, n)))
            arcs.append(k)
        y = sol.y[:, -1]
        z = y[:14]
        pair = VariationalPair(y[14 : 14 + n * n].reshape(n, n), y[14 + n * n :].reshape(n, n), edges[k + 1])
        if k + 1 < len(traj.arc_modes):
            pt = E.ExtremalPoint.from_array(z, edges[k + 1])
            dti = switch_time_gradient(pt, pair, engine, params, opts.regularity_tol)
            d_minus = np.linalg.det(pair.Mx)
            new_rho = 1 if traj.arc_modes[k + 1] == E.BURN else 0
            pair = jump_update(pair, pt, dti, new_rho - rho, engine)
            pairs.append((float(d_minus), float(np.linalg.det(pair.Mx))))
    trace = DeltaTrace(np.array(ts), np.array(ds), np.array(arcs), list(traj.switch_times), pairs, list(traj.arc_modes))
    return trace, pair, None


def _control(rho, omega):
    from .dynamics import Control

    return Control(float(rho), omega if rho else np.array([1.0, 0.0, 0.0]))


def coast_delta_variation(trace: DeltaTrace):
    """Largest relative spread of delta over each coast arc (arcs where delta is not identically 0)."""
    out = []
    for k, mode in enumerate(trace.arc_modes):
        if mode != E.COAST:
            continue
        d = trace.delta[trace.arc == k]
        if d.size < 2:
            continue
        scale = np.max(np.abs(d))
        out.append(0.0 if scale == 0.0 else float((np.max(d) - np.min(d)) / scale))
    return out


# ---------------------------------------------------------- conditions


def _floor(trace, t, rel_floor, abs_floor):
    # relative to the running max of |delta| up to time t
    seen = np.abs(trace.delta[trace.t <= t]) if trace.delta.size else np.zeros(0)
    return max(rel_floor * float(seen.max()) if seen.size else 0.0, abs_floor)


def check_condition1(trace: DeltaTrace, rel_floor=1e-10, abs_floor=0.0):
    """delta must not vanish on the open arcs from the first burn onward.

    A zero is a strict sign change between samples of one arc, or a dip below
    the floor after |delta| has exceeded it on that arc.  The initial growth
    from the structural zero at the first switch is exempt, as is the leading
    coast where Mx is identically zero.
    """
    k0 = trace.first_burn_arc
    if k0 is None:
        return Verdict(UNDECIDED, note="no burn arc: delta identically zero")
    running = 0.0
    for k in range(k0, len(trace.arc_modes)):
        sel = trace.arc == k
        t = trace.t[sel]
        d = trace.delta[sel]
        above, prev_sign = False, 0.0
        for i in range(d.size):
            running = max(running, abs(d[i]))
            thr = max(rel_floor * running, abs_floor)
            if abs(d[i]) > thr:
                if above and np.sign(d[i]) != np.sign(prev_sign):
                    return Verdict(FAIL, time=float(t[i]), index=k, note="sign change on an arc")
                above = True
                prev_sign = d[i]
            elif above:
                return Verdict(FAIL, time=float(t[i]), index=k, note="|delta| below floor on an arc")
    note = "leading coast exempt (Mx = 0 before the first burn)" if k0 > 0 else ""
    return Verdict(PASS, note=note)


def check_condition2(trace: DeltaTrace, rel_floor=1e-10, abs_floor=0.0):
    """delta(t_i-) delta(t_i+) > 0 at every switch after the first burn begins."""
    k0 = trace.first_burn_arc
    undecided = None
    for i, (dm, dp) in enumerate(trace.switch_pairs):
        if k0 is not None and i < k0:
            continue
        thr = _floor(trace, trace.switch_times[i], rel_floor, abs_floor)
        if abs(dm) <= thr or abs(dp) <= thr:
            if undecided is None:
                undecided = i
            continue
        if dm * dp <= 0:
            return Verdict(FAIL, time=float(trace.switch_times[i]), index=i, note="fold: one-sided determinants change sign")
    if undecided is not None:
        return Verdict(UNDECIDED, time=float(trace.switch_times[undecided]), index=undecided, note="one-sided determinant below floor")
    return Verdict(PASS, note="switch into the first burn exempt (delta = 0 on both sides)" if k0 else "")


def _rank_checked(J, l):
    s = np.linalg.svd(J, compute_uv=False)
    if s.size < l or s[-1] <= 1e-12 * max(1.0, s[0]):
        raise RankDeficientTarget(f"dphi has rank < {l}")


def compute_multipliers(final_pt, target):
    x, p = _xp(final_pt, target.n)
    J = target.dphi(x).astype(float)
    _rank_checked(J, target.l)
    return np.linalg.solve(J @ J.T, J @ p)


def tangent_basis(final_pt, target):
    x, _ = _xp(final_pt, target.n)
    J = target.dphi(x).astype(float)
    _rank_checked(J, target.l)
    if target.l == target.n:
        return np.zeros((target.n, 0))
    vt = np.linalg.svd(J)[2]
    return vt[target.l :].T.copy()


def _xp(pt, n):
    if isinstance(pt, E.ExtremalPoint):
        z = pt.as_array()
    else:
        z = np.asarray(pt, dtype=float)
    return z[:n], z[7 : 7 + n]


def check_condition3(pair: VariationalPair, final_pt, target, nu, tol=1e-10, max_cond=1e12):
    n = pair.n
    if target.l == n:
        return Condition3Result(Verdict(VACUOUS, note="l = n: no tangent directions"), np.zeros((0, 0)), float("inf"), np.zeros((n, n)), np.zeros((n, 0)))
    cond = np.linalg.cond(pair.Mx)
    if not np.isfinite(cond) or cond > max_cond:
        raise NearSingularMx(cond)
    x, _ = _xp(final_pt, n)
    W = np.linalg.solve(pair.Mx.T, pair.Mp.T).T - target.weighted_hessian(x, nu)
    C = tangent_basis(final_pt, target)
    R = C.T @ W @ C
    Rs = 0.5 * (R + R.T)
    lmin = float(np.min(np.linalg.eigvalsh(Rs)))
    if lmin > tol:
        status, note = PASS, ""
    elif lmin >= -tol:
        status, note = UNDECIDED, "zero mode: "
    else:
        status, note = FAIL, ""
    return Condition3Result(Verdict(status, note=f"{note}min eigenvalue {lmin:.6g}"), R, lmin, W, C)


def classify(c1: Verdict, c2: Verdict, c3: Verdict):
    if c1.status == FAIL:
        return FOCAL_POINT
    if c2.status == FAIL:
        return FOLD
    if c3.status == FAIL:
        return COND3_FAILURE
    if c1.passed and c2.passed and c3.passed:
        return STRICT_OPTIMUM
    return INCONCLUSIVE


# -------------------------------------------------------------- J-curve


def circular_curve(target, x_f, center=None):
    """Arc-length-angle parameterization along the final planar circular orbit.

    Rotating the endpoint position about the orbit centre and the velocity by
    the same angle keeps every row of the circular-orbit target satisfied.
    """
    c = np.zeros(3) if center is None else np.asarray(center, dtype=float)
    x_f = np.asarray(x_f, dtype=float)

    def rot(a):
        ca, sa = np.cos(a), np.sin(a)
        return np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])

    G = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])

    def y(xi):
        out = x_f.copy()
        R = rot(xi)
        out[0:3] = c + R @ (x_f[0:3] - c)
        out[3:6] = R @ x_f[3:6]
        return out

    def dy(xi):
        out = np.zeros_like(x_f)
        R = rot(xi)
        out[0:3] = G @ R @ (x_f[0:3] - c)
        out[3:6] = G @ R @ x_f[3:6]
        return out

    return y, dy


def _endpoint_solve(problem, p0, y_target, opts, tol, max_iter, floor=1e-8):
    """Newton on x(t_f, p0) = y; a residual that stalls below ``floor`` is accepted.

    In float64 the Earth-Moon end point is only reproducible to ~1e-9, so the
    iteration stops once it no longer halves the residual.
    """
    n = problem.n
    best = np.inf
    for _ in range(max_iter):
        tr = E.flow(problem.z0(p0), problem.t_f, 1.0, problem.engine, problem.params, opts, seeds=problem.seeds, record=False)
        zf = tr.final
        res = zf[:n] - y_target[:n]
        r = float(np.max(np.abs(res)))
        if r <= tol or (r <= floor and r > 0.5 * best):
            return p0, zf
        best = min(best, r)
        Mx = tr.phi[0:n, :n]
        p0 = p0 - np.linalg.solve(Mx, res)
    raise PathSolveFailed(0.0, f"residual {r:.3e}")


def j_curve(solution, target=None, epsilon=1e-3, n_points=21, center=None, opts=None, tol=1e-11, max_iter=12):
    """J(xi) = int_0^xi lambda(eta) . y'(eta) d eta along a curve on the target.

    For each node the fixed-endpoint problem x(t_f, p0) = y(xi) is solved by
    Newton from the neighbouring node, and lambda = p(t_f, p0(xi)).
    """
    problem = solution.problem
    target = problem.target if target is None else target
    if target.l == target.n:
        raise ValueError("the J-curve needs a target with tangent directions")
    if n_points < 3 or n_points % 2 == 0:
        raise ValueError("n_points must be odd and >= 3")
    if opts is None:
        opts = solution.flow_options if getattr(solution, "flow_options", None) else E.FlowOptions(control_sensitivities=True)
    n = problem.n
    if center is None:
        center = problem.params.r2 if target.name == "moon_circular" else np.zeros(3)
    zf0 = solution.trajectory.final
    y, dy = circular_curve(target, zf0[:7], center)
    xi = np.linspace(-epsilon, epsilon, n_points)
    mid = n_points // 2
    p0_base = np.asarray(solution.unknowns.p0, dtype=float)
    ends = np.zeros((n_points, 7))
    costates = np.zeros((n_points, n))
    ends[mid] = zf0[:7]
    costates[mid] = zf0[7 : 7 + n]
    for direction in (1, -1):
        p0 = p0_base.copy()
        prev = None
        idx = range(mid + 1, n_points) if direction == 1 else range(mid - 1, -1, -1)
        for i in idx:
            guess = p0 if prev is None else 2 * p0 - prev
            try:
                p_new, zf = _endpoint_solve(problem, guess, y(xi[i]), opts, tol, max_iter)
            except (PathSolveFailed, np.linalg.LinAlgError) as exc:
                raise PathSolveFailed(float(xi[i]), str(exc)) from exc
            prev, p0 = p0, p_new
            ends[i] = zf[:7]
            costates[i] = zf[7 : 7 + n]
    integrand = np.array([costates[i] @ dy(xi[i])[:n] for i in range(n_points)])
    J = cumulative_trapezoid(integrand, xi, initial=0.0)
    J = J - J[mid]
    coef = np.polyfit(xi, J, 2)
    return JCurve(xi, J, ends, costates, float(coef[1]), float(2 * coef[0]))


# --------------------------------------------------------------- certify


def certify(solution, target=None, n=None, opts: E.FlowOptions | None = None, jcurve=False, rel_floor=1e-10, abs_floor=0.0, cond3_tol=1e-10, epsilon=1e-3, n_points=21):
    """Conditions 1-3 on a converged lam = 1 extremal and the resulting classification."""
    problem = solution.problem
    target = problem.target if target is None else target
    n = problem.n if n is None else n
    if opts is None:
        opts = getattr(solution, "flow_options", None) or E.FlowOptions(control_sensitivities=True)
    trace, pair, _ = propagate_variational(solution.trajectory, problem.engine, problem.params, n, opts)
    c1 = check_condition1(trace, rel_floor, 0.0)
    c2 = check_condition2(trace, rel_floor, abs_floor)
    zf = solution.trajectory.final
    nu = compute_multipliers(zf, target)
    try:
        c3r = check_condition3(pair, zf, target, nu, cond3_tol)
        c3, R, lmin, C = c3r.verdict, c3r.reduced, c3r.min_eig, c3r.C
    except NearSingularMx as exc:
        c3, R, lmin, C = Verdict(UNDECIDED, note=str(exc)), np.zeros((0, 0)), float("nan"), tangent_basis(zf, target)
    report = SufficiencyReport(c1, c2, c3, R, lmin, nu, C, classify(c1, c2, c3), trace, pair)
    if jcurve:
        try:
            report.j_curve = j_curve(solution, target, epsilon, n_points, opts=opts)
        except PathSolveFailed as exc:
            report.j_curve_error = str(exc)
    return report

"""Poisson-bracket ladder of the switching function and singular-arc diagnostics.

Brackets are taken along the drift Hamiltonian H0, so with a = p_v, b = p_r,
n = |a| and K the Coriolis matrix::

    da/dt = -(b - K a),   db/dt = -dg(r) a,   dr/dt = v.

Every closed form below was checked against a symbolic Poisson-bracket
expansion; see the decisions ledger for the two places where they depart
from the printed expressions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import CrtbpParams, EngineParams, gravity_hessian_form, gravity_jacobian
from .errors import ChatteringSuspected, UndefinedDirection
from .extremal import ExtremalPoint, ExtremalTrajectory, switching_function

_K = np.array([[0.0, 2.0, 0.0], [-2.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


def _unpack(pt: ExtremalPoint):
    a = pt.p.p_v
    n = float(np.linalg.norm(a))
    if n == 0.0:
        raise UndefinedDirection("brackets need a nonzero primer vector")
    return pt.x.r, pt.x.v, pt.x.m, pt.p.p_r, a, n


def bracket_H01(pt: ExtremalPoint, engine: EngineParams, params: CrtbpParams = None):
    _, _, m, b, a, n = _unpack(pt)
    return -engine.tau_max * (a @ (b + _K.T @ a)) / (m * n)


def _q_terms(pt, params):
    r, v, m, b, a, n = _unpack(pt)
    G = gravity_jacobian(r, params)
    ab = a @ b
    q = a @ G @ a + b @ b - (_K @ a) @ b - ab * ab / (n * n)
    return r, v, m, b, a, n, G, ab, q


def bracket_H001(pt: ExtremalPoint, engine: EngineParams, params: CrtbpParams):
    """{H0, H01} = tau/(m n) [a.dg a + b.b - (K a).b - (a.b)^2/n^2]."""
    _, _, m, _, _, n, _, _, q = _q_terms(pt, params)
    return engine.tau_max * q / (m * n)


def bracket_H0001(pt: ExtremalPoint, engine: EngineParams, params: CrtbpParams):
    """{H0, H001}, the time derivative of H001 along the drift flow."""
    r, v, m, b, a, n, G, ab, q = _q_terms(pt, params)
    adot = -(b - _K @ a)
    bdot = -G @ a
    ndot = -ab / n
    abdot = adot @ b + a @ bdot
    qdot = (
        2.0 * adot @ (G @ a)
        + v @ gravity_hessian_form(r, a, a, params)
        + 2.0 * b @ bdot
        - (_K @ adot) @ b
        - (_K @ a) @ bdot
        - 2.0 * ab * abdot / (n * n)
        + 2.0 * ab * ab * ndot / n**3
    )
    return engine.tau_max / m * (qdot / n - q * ndot / (n * n))


def bracket_H10001(pt: ExtremalPoint, engine: EngineParams, params: CrtbpParams):
    """{H1, H0001} from the second-derivative contraction of gravity."""
    r, _, m, _, a, n = _unpack(pt)
    tau = engine.tau_max
    val = tau * tau * (a @ gravity_hessian_form(r, a, a, params)) / (m * m * n * n)
    if engine.beta:
        val += tau * engine.beta * bracket_H0001(pt, engine, params) / m
    return val


def bracket_H10001_angles(pt: ExtremalPoint, engine: EngineParams, params: CrtbpParams):
    """Same bracket through the angles between p_v and the two radius vectors."""
    r, _, m, _, a, n = _unpack(pt)
    tau = engine.tau_max
    total = 0.0
    for coef, c in ((1.0 - params.mu, params.r1), (params.mu, params.r2)):
        if coef == 0.0:
            continue
        d = r - c
        dn = np.linalg.norm(d)
        ca = (a @ d) / (n * dn)
        total += coef * ca * (3.0 - 5.0 * ca * ca) / dn**4
    val = 3.0 * tau * tau * n / (m * m) * total
    if engine.beta:
        val += tau * engine.beta * bracket_H0001(pt, engine, params) / m
    return val


@dataclass(frozen=True)
class BracketLadder:
    H1: float
    H01: float
    H001: float
    H0001: float
    H10001: float


def ladder(pt: ExtremalPoint, engine: EngineParams, params: CrtbpParams) -> BracketLadder:
    return BracketLadder(
        H1=switching_function(pt, engine),
        H01=bracket_H01(pt, engine, params),
        H001=bracket_H001(pt, engine, params),
        H0001=bracket_H0001(pt, engine, params),
        H10001=bracket_H10001(pt, engine, params),
    )


@dataclass(frozen=True)
class SingularDistance:
    abs_H1: float
    abs_H01: float
    abs_H001: float
    abs_H0001: float
    H10001: float
    member: bool


def singular_surface_distance(pt: ExtremalPoint, engine: EngineParams, params: CrtbpParams, tol=1e-6):
    """Ladder magnitudes and membership in the singular set with the Kelley sign."""
    lad = ladder(pt, engine, params)
    mags = (abs(lad.H1), abs(lad.H01), abs(lad.H001), abs(lad.H0001))
    member = all(x <= tol for x in mags) and lad.H10001 <= 0.0
    return SingularDistance(*mags, H10001=lad.H10001, member=member)


@dataclass(frozen=True)
class ChatteringDiagnosis:
    flagged: bool
    reason: str
    window: tuple | None = None
    nearest: SingularDistance | None = None


def switch_accumulation(switch_times, ratio=0.5, window=6):
    """First index range where successive gaps shrink by less than ``ratio`` each."""
    ts = np.asarray(switch_times, dtype=float)
    if ts.size < window + 1:
        return None
    gaps = np.diff(ts)
    run = 0
    for i in range(1, gaps.size):
        if gaps[i - 1] > 0 and gaps[i] / gaps[i - 1] < ratio:
            run += 1
            if run >= window - 1:
                return (i - run, i + 1)
        else:
            run = 0
    return None


def diagnose_chattering(
    traj: ExtremalTrajectory | None,
    engine: EngineParams = None,
    params: CrtbpParams = None,
    tol=1e-6,
    switch_times=None,
    error: ChatteringSuspected | None = None,
    ratio=0.5,
    window=6,
):
    """Flag accumulating switches (ratio test) or an aborted chattering integration."""
    if error is not None:
        return ChatteringDiagnosis(True, str(error))
    ts = traj.switch_times if switch_times is None else switch_times
    win = switch_accumulation(ts, ratio, window)
    if win is None:
        return ChatteringDiagnosis(False, "no accumulation")
    nearest = None
    if traj is not None and engine is not None and params is not None:
        t0, t1 = ts[win[0]], ts[min(win[1], len(ts) - 1)]
        sel = np.where((traj.t >= t0) & (traj.t <= t1))[0]
        best = None
        for i in sel:
            pt = traj.point(i)
            if np.linalg.norm(pt.p.p_v) == 0.0:
                continue
            d = singular_surface_distance(pt, engine, params, tol)
            score = max(d.abs_H1, d.abs_H01, d.abs_H001, d.abs_H0001)
            if best is None or score < best[0]:
                best = (score, d)
        nearest = None if best is None else best[1]
    return ChatteringDiagnosis(True, "switch gaps contract geometrically", win, nearest)

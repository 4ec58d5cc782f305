"""Extended-precision flow of bang-bang extremals.

The Earth-Moon shooting map amplifies perturbations of the initial costate by
about 1e7, so a float64 integration cannot resolve residuals much below 1e-8.
This module integrates the lam = 1 canonical system in 80-bit ``longdouble``
with Gragg-Bulirsch-Stoer extrapolation.  Its weights are rational and are
formed in extended precision, so no float64-rounded tableau limits accuracy.
Switching times are found by root-finding on exact sub-steps from the last
accepted point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import CrtbpParams, EngineParams
from .errors import ChatteringSuspected, IntegrationError, RegularityViolation, SingularityError

LD = np.longdouble
_SEQ = (2, 4, 6, 8, 10, 12, 14, 16, 18, 20)


@dataclass(frozen=True)
class PreciseOptions:
    tol: float = 3e-19
    columns: int = 7
    h_max: float = 0.02
    h_init: float = 1e-3
    max_steps: int = 500000
    max_switches: int = 200
    regularity_tol: float = 1e-8
    singularity_floor: float = 1e-12
    hermite_samples: int = 16
    backend: str = "longdouble"
    dps: int = 40


class _Arith:
    """Scalar kind used by the integrator: 80-bit long double or mpmath."""

    def __init__(self, backend="longdouble", dps=40):
        if backend == "longdouble":
            self.num = LD
            self.sqrt = np.sqrt
            self.eps = np.finfo(LD).eps
            self.dtype = LD
        elif backend == "mpmath":
            import mpmath

            self.ctx = mpmath.mp.clone()
            self.ctx.dps = dps
            self.num = self.ctx.mpf
            self.sqrt = self.ctx.sqrt
            self.eps = self.ctx.eps
            self.dtype = object
        else:
            raise ValueError(f"unknown backend {backend!r}")

    def array(self, x):
        x = np.asarray(x)
        if self.dtype is LD:
            return x.astype(LD)
        return np.array([self._conv(v) for v in x.ravel()], dtype=object).reshape(x.shape)

    def _conv(self, v):
        if isinstance(v, LD):
            return self.num(str(v))
        if isinstance(v, np.generic):
            return self.num(v.item())
        return self.num(v)

    def zeros(self, n):
        return self.array(np.zeros(n))


@dataclass
class PreciseResult:
    z: np.ndarray
    t: object
    switch_times: list = field(default_factory=list)
    arc_modes: list = field(default_factory=list)
    n_steps: int = 0

    @property
    def n_burn_arcs(self):
        return sum(1 for m in self.arc_modes if m == 1)


class _System:
    def __init__(self, engine: EngineParams, params: CrtbpParams, floor, ar: _Arith):
        self.ar = ar
        self.mu = ar.num(params.mu)
        self.tau = ar.num(engine.tau_max)
        self.beta = ar.num(engine.beta)
        self.floor = floor

    def rhs(self, z, rho):
        mu, tau = self.mu, self.tau
        x, y, zz, vx, vy, vz, m, prx, pry, prz, pvx, pvy, pvz, _ = z
        dx1 = x + mu
        dx2 = x - (1 - mu)
        yz = y * y + zz * zz
        d1s = dx1 * dx1 + yz
        d2s = dx2 * dx2 + yz
        d1 = self.ar.sqrt(d1s)
        d2 = self.ar.sqrt(d2s)
        if d1 < self.floor or (mu != 0 and d2 < self.floor):
            raise SingularityError("extended flow reached a primary")
        k1 = (1 - mu) / (d1s * d1)
        k2 = mu / (d2s * d2) if mu != 0 else 0 * mu
        k = k1 + k2
        q1 = 3 * k1 / d1s
        q2 = 3 * k2 / d2s if mu != 0 else 0 * mu
        s1 = dx1 * pvx + y * pvy + zz * pvz
        s2 = dx2 * pvx + y * pvy + zz * pvz
        qs = q1 * s1 + q2 * s2
        out = self.ar.zeros(14)
        out[0] = vx
        out[1] = vy
        out[2] = vz
        out[3] = 2 * vy + x - k1 * dx1 - k2 * dx2
        out[4] = -2 * vx + y - k * y
        out[5] = -k * zz
        if rho:
            n = self.ar.sqrt(pvx * pvx + pvy * pvy + pvz * pvz)
            a = tau / (m * n)
            out[3] += a * pvx
            out[4] += a * pvy
            out[5] += a * pvz
            out[6] = -tau * self.beta
            out[13] = tau * n / (m * m)
        out[7] = -(pvx - k * pvx + q1 * dx1 * s1 + q2 * dx2 * s2)
        out[8] = -(pvy - k * pvy + qs * y)
        out[9] = -(-k * pvz + qs * zz)
        out[10] = -prx + 2 * pvy
        out[11] = -pry - 2 * pvx
        out[12] = -prz
        return out

    def h1(self, z):
        n = self.ar.sqrt(z[10] * z[10] + z[11] * z[11] + z[12] * z[12])
        return self.tau * n / z[6] - self.tau * self.beta * z[13] - 1

    def h01(self, z):
        a = z[10:13]
        b = z[7:10]
        n = self.ar.sqrt(a @ a)
        kta = self.ar.array([0, 0, 0])
        kta[0] = -2 * a[1]
        kta[1] = 2 * a[0]
        return -self.tau * (a @ (b + kta)) / (z[6] * n)


def _gbs_step(sys_, z, h, rho, cols):
    """One extrapolated midpoint step from the compensated pair ``z = (hi, lo)``.

    The midpoint sequences run on increments relative to the base point, so
    rounding acts on O(h) quantities instead of on the state itself.  Returns
    the increment and its error estimate.
    """
    hi, lo = z
    f0 = sys_.rhs(hi + lo, rho)
    rows = []
    for j in range(cols):
        n = _SEQ[j]
        hh = h / n
        a, b = sys_.ar.zeros(hi.shape[0]), hh * f0
        for _ in range(1, n):
            a, b = b, a + 2 * hh * sys_.rhs(hi + (lo + b), rho)
        row = [b]
        for q in range(1, j + 1):
            r = sys_.ar.num(_SEQ[j]) / _SEQ[j - q]
            row.append(row[q - 1] + (row[q - 1] - rows[j - 1][q - 1]) / (r * r - 1))
        rows.append(row)
    return rows[-1][-1], rows[-1][-1] - rows[-1][-2]


def _advance(z, w):
    """Compensated update (hi, lo) + w."""
    hi, lo = z
    y = lo + w
    s = hi + y
    return s, y - (s - hi)


def _value(z):
    return z[0] + z[1]


def _err_norm(e, z, tol):
    # p_m never feeds back into the flow, so it is left out of the control
    return max(float(abs(e[i])) / (tol * (1 + float(abs(z[i])))) for i in range(13))


def _wrong_side(g, rho):
    return g < 0 if rho else g > 0


def precise_flow(z0, t_f, engine: EngineParams, params: CrtbpParams, opts: PreciseOptions = PreciseOptions(), t0=0.0):
    """Integrate the lam = 1 extended system from ``t0`` to ``t_f`` in long double."""
    ar = _Arith(opts.backend, opts.dps)
    sys_ = _System(engine, params, opts.singularity_floor, ar)
    z0 = ar.array(z0)
    z = (z0, ar.zeros(z0.shape[0]))
    t = ar.num(t0)
    tf = ar.num(t_f)
    g = sys_.h1(z0)
    rho = 1 if (g > 0 or (g == 0 and sys_.h01(z0) > 0)) else 0
    res = PreciseResult(z=z0, t=t, arc_modes=[rho])
    h = ar.num(opts.h_init)
    cols = opts.columns
    expo = 1.0 / (2 * cols - 1)
    for _ in range(opts.max_steps):
        if t >= tf:
            break
        h = min(h, ar.num(opts.h_max), tf - t)
        w, e = _gbs_step(sys_, z, h, rho, cols)
        err = _err_norm(e, z[0], opts.tol)
        fac = min(4.0, max(0.2, 0.9 * (1.0 / max(err, 1e-30)) ** expo))
        if err > 1.0:
            h = h * ar.num(fac)
            if h < 1e-14:
                raise IntegrationError(f"extended step underflow at t={float(t):.6g}")
            continue
        y = _advance(z, w)
        s_hit = _first_crossing(sys_, z, y, h, rho, opts.hermite_samples)
        if s_hit is None:
            z, t = y, t + h
        else:
            s_star = _locate(sys_, z, rho, cols, s_hit)
            z = _advance(z, _gbs_step(sys_, z, s_star, rho, cols)[0])
            t = t + s_star
            h01 = sys_.h01(_value(z))
            if abs(h01) < opts.regularity_tol:
                raise RegularityViolation(float(t), float(h01), opts.regularity_tol)
            rho = 1 - rho
            res.switch_times.append(t)
            res.arc_modes.append(rho)
            if len(res.switch_times) > opts.max_switches:
                raise ChatteringSuspected(len(res.switch_times), float(t))
        res.n_steps += 1
        h = h * ar.num(fac)
    else:
        raise IntegrationError("extended flow exceeded max_steps")
    res.z = _value(z)
    res.t = t
    return res


def _first_crossing(sys_, z, y, h, rho, samples):
    """Return a step length whose endpoint lies past a crossing, or None."""
    zv, yv = _value(z), _value(y)
    g1 = sys_.h1(yv)
    if _wrong_side(g1, rho):
        return h
    g0 = sys_.h1(zv)
    d0 = sys_.h01(zv) * h
    d1 = sys_.h01(yv) * h
    for k in range(1, samples):
        s = sys_.ar.num(k) / samples
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        val = h00 * g0 + h10 * d0 + h01 * g1 + h11 * d1
        if _wrong_side(val, rho) and abs(val) > 1e-15:
            return s * h
    return None


def _h1_after(sys_, z, s, rho, cols):
    return sys_.h1(_value(_advance(z, _gbs_step(sys_, z, s, rho, cols)[0])))


def _locate(sys_, z, rho, cols, s_hi):
    """Illinois iteration on s -> H1(step(z, s)) over (0, s_hi]."""
    g_hi = _h1_after(sys_, z, s_hi, rho, cols)
    if not _wrong_side(g_hi, rho):
        raise IntegrationError("switch bracket lost during location")
    s_lo = sys_.ar.num(0)
    g_lo = sys_.h1(_value(z))
    if _wrong_side(g_lo, rho):
        g_lo = -g_lo
    side = 0
    s = s_hi
    for _ in range(200):
        s = (s_lo * g_hi - s_hi * g_lo) / (g_hi - g_lo)
        if not (s_lo < s < s_hi):
            s = (s_lo + s_hi) / 2
        g = _h1_after(sys_, z, s, rho, cols)
        if g == 0 or s_hi - s_lo <= 4 * sys_.ar.eps * max(sys_.ar.num(1), s_hi):
            return s
        if _wrong_side(g, rho):
            s_hi, g_hi = s, g
            if side == -1:
                g_lo /= 2
            side = -1
        else:
            s_lo, g_lo = s, g
            if side == 1:
                g_hi /= 2
            side = 1
        if abs(g) < 10 * sys_.ar.eps:
            return s
    return s

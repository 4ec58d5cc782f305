"""Numba kernels for the canonical system and its variational equations.

Layout of the extended point ``z`` (length 14)::

    z[0:3] r     z[3:6] v     z[6] m
    z[7:10] p_r  z[10:13] p_v z[13] p_m

``par`` packs ``[mu, tau_max, beta, lam, rho_fixed, psi_lo, psi_hi, lam_col]``;
``psi_lo, psi_hi`` bound the band of psi = H1 + 1 inside which the current arc
is valid, and a positive ``lam_col`` makes the last sensitivity column the
derivative with respect to lam (zero initial value, forced by the throttle).  ``mode`` selects the
throttle law: ``MODE_FIXED`` uses ``par[4]`` (a bang arc), ``MODE_SMOOTH``
uses the clamped affine law of the lambda-blended cost and ``MODE_BAND`` the
same law without clamping, which keeps the field analytic across the band
edges so that steps straddling an edge are accepted and the edge is then
located on the dense output.

When ``nc > 0`` the vector ``y`` carries, after ``z``, the 14 x nc row-major
sensitivity matrix ``dz/dp0`` restricted to ``nc`` costate columns.
"""

import numpy as np
from numba import njit
from scipy.integrate._ivp import dop853_coefficients as _dop

NZ = 14
MODE_FIXED = 0
MODE_SMOOTH = 1
MODE_BAND = 2

ST_DONE = 0
ST_SWITCH = 1
ST_BUFFER = 2
ST_SMALL_STEP = 3
ST_SINGULAR = 4

N_STAGES = _dop.N_STAGES
A = np.ascontiguousarray(_dop.A, dtype=np.float64)
B = np.ascontiguousarray(_dop.B, dtype=np.float64)
C = np.ascontiguousarray(_dop.C, dtype=np.float64)
E3 = np.ascontiguousarray(_dop.E3, dtype=np.float64)
E5 = np.ascontiguousarray(_dop.E5, dtype=np.float64)
D = np.ascontiguousarray(_dop.D, dtype=np.float64)
N_EXT = _dop.N_STAGES_EXTENDED
N_INTERP = _dop.INTERPOLATOR_POWER

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERR_EXP = -1.0 / 8.0


@njit(cache=True)
def gravity_and_jacobian(x, y, zc, mu, g, G):
    """Fill ``g`` (3,) and its symmetric Jacobian ``G`` (3, 3); return min distance."""
    c1 = 1.0 - mu
    d1x = x + mu
    d2x = x - 1.0 + mu
    n1sq = d1x * d1x + y * y + zc * zc
    n2sq = d2x * d2x + y * y + zc * zc
    n1 = np.sqrt(n1sq)
    n2 = np.sqrt(n2sq)
    i13 = 1.0 / (n1sq * n1)
    i15 = i13 / n1sq
    if mu == 0.0:
        # massless secondary: no attraction and no singularity
        i23 = 0.0
        i25 = 0.0
        n2 = np.inf
    else:
        i23 = 1.0 / (n2sq * n2)
        i25 = i23 / n2sq
    g[0] = x - c1 * d1x * i13 - mu * d2x * i23
    g[1] = y - c1 * y * i13 - mu * y * i23
    g[2] = -c1 * zc * i13 - mu * zc * i23
    a1 = c1 * i13
    a2 = mu * i23
    b1 = 3.0 * c1 * i15
    b2 = 3.0 * mu * i25
    G[0, 0] = 1.0 - a1 - a2 + b1 * d1x * d1x + b2 * d2x * d2x
    G[1, 1] = 1.0 - a1 - a2 + (b1 + b2) * y * y
    G[2, 2] = -a1 - a2 + (b1 + b2) * zc * zc
    G[0, 1] = b1 * d1x * y + b2 * d2x * y
    G[0, 2] = b1 * d1x * zc + b2 * d2x * zc
    G[1, 2] = (b1 + b2) * y * zc
    G[1, 0] = G[0, 1]
    G[2, 0] = G[0, 2]
    G[2, 1] = G[1, 2]
    return min(n1, n2)


@njit(cache=True)
def gravity_hessian_contract(r, mu, w, T):
    """T_ij = sum_k w_k d2g_k/dr_i dr_j (symmetric 3 x 3)."""
    for b in range(2):
        if b == 0:
            coef = 1.0 - mu
            cx = -mu
        else:
            coef = mu
            cx = 1.0 - mu
        if coef == 0.0:
            continue
        d0 = r[0] - cx
        d1 = r[1]
        d2 = r[2]
        nsq = d0 * d0 + d1 * d1 + d2 * d2
        n = np.sqrt(nsq)
        i5 = 1.0 / (nsq * nsq * n)
        i7 = i5 / nsq
        dw = d0 * w[0] + d1 * w[1] + d2 * w[2]
        d = (d0, d1, d2)
        for i in range(3):
            for j in range(3):
                val = (w[i] * d[j] + w[j] * d[i]) * i5 - 5.0 * dw * d[i] * d[j] * i7
                if i == j:
                    val += dw * i5
                T[i, j] += 3.0 * coef * val


@njit(cache=True)
def throttle(z, par, mode):
    """Return (rho, s, psi) where s is the unclamped smooth throttle."""
    tau = par[1]
    beta = par[2]
    lam = par[3]
    m = z[6]
    pvn = np.sqrt(z[10] * z[10] + z[11] * z[11] + z[12] * z[12])
    psi = tau * pvn / m - tau * beta * z[13]
    if mode == MODE_FIXED:
        return par[4], par[4], psi
    s = (psi - lam) / (2.0 * (1.0 - lam))
    if mode == MODE_BAND:
        return s, s, psi
    rho = min(max(s, 0.0), 1.0)
    return rho, s, psi


@njit(cache=True)
def switching_value(z, par):
    tau = par[1]
    pvn = np.sqrt(z[10] * z[10] + z[11] * z[11] + z[12] * z[12])
    return tau * pvn / z[6] - tau * par[2] * z[13] - 1.0


@njit(cache=True)
def switching_rate(z, par):
    """dH1/dt along the flow, i.e. the bracket H01 = -tau p_v.p_r / (m |p_v|)."""
    tau = par[1]
    pvn = np.sqrt(z[10] * z[10] + z[11] * z[11] + z[12] * z[12])
    if pvn == 0.0:
        return 0.0
    return -tau * (z[10] * z[7] + z[11] * z[8] + z[12] * z[9]) / (z[6] * pvn)


@njit(cache=True)
def event_value(z, par):
    """Signed distance of psi = H1 + 1 to the band [par[5], par[6]]; negative outside."""
    psi = switching_value(z, par) + 1.0
    return min(psi - par[5], par[6] - psi)


@njit(cache=True)
def event_rate(z, par):
    psi = switching_value(z, par) + 1.0
    d = switching_rate(z, par)
    if psi - par[5] <= par[6] - psi:
        return d
    return -d


@njit(cache=True)
def rhs(y, par, mode, nc, out):
    """Canonical field (and variational field if nc > 0). Returns min body distance."""
    mu = par[0]
    tau = par[1]
    beta = par[2]
    lam = par[3]
    g = np.empty(3)
    G = np.empty((3, 3))
    dmin = gravity_and_jacobian(y[0], y[1], y[2], mu, g, G)
    m = y[6]
    pvx = y[10]
    pvy = y[11]
    pvz = y[12]
    pvn = np.sqrt(pvx * pvx + pvy * pvy + pvz * pvz)
    rho, s, psi = throttle(y, par, mode)
    if pvn > 0.0:
        wx = pvx / pvn
        wy = pvy / pvn
        wz = pvz / pvn
    else:
        wx = 0.0
        wy = 0.0
        wz = 0.0
    acc = rho * tau / m
    out[0] = y[3]
    out[1] = y[4]
    out[2] = y[5]
    out[3] = 2.0 * y[4] + g[0] + acc * wx
    out[4] = -2.0 * y[3] + g[1] + acc * wy
    out[5] = g[2] + acc * wz
    out[6] = -rho * tau * beta
    out[7] = -(G[0, 0] * pvx + G[0, 1] * pvy + G[0, 2] * pvz)
    out[8] = -(G[1, 0] * pvx + G[1, 1] * pvy + G[1, 2] * pvz)
    out[9] = -(G[2, 0] * pvx + G[2, 1] * pvy + G[2, 2] * pvz)
    out[10] = -y[7] + 2.0 * pvy
    out[11] = -y[8] - 2.0 * pvx
    out[12] = -y[9]
    out[13] = rho * tau * pvn / (m * m)
    if nc == 0:
        return dmin

    T = np.zeros((3, 3))
    gravity_hessian_contract(y[0:3], mu, y[10:13], T)
    w = (wx, wy, wz)
    smooth_active = mode == MODE_BAND or (mode == MODE_SMOOTH and s > 0.0 and s < 1.0)
    if smooth_active:
        ks = 1.0 / (2.0 * (1.0 - lam))
    else:
        ks = 0.0
    if pvn > 0.0:
        kp = acc / pvn
    else:
        kp = 0.0
    lam_col = par.shape[0] > 7 and par[7] > 0.0
    base = NZ
    for c in range(nc):
        # column c of Phi lives at y[base + i*nc + c]
        P = np.empty(NZ)
        for i in range(NZ):
            P[i] = y[base + i * nc + c]
        wdot = w[0] * P[10] + w[1] * P[11] + w[2] * P[12]
        drho = 0.0
        if smooth_active:
            drho = ks * (-tau * pvn / (m * m) * P[6] + tau / m * wdot - tau * beta * P[13])
        o = base + c
        for i in range(3):
            out[o + i * nc] = P[3 + i]
        for i in range(3):
            acc_i = G[i, 0] * P[0] + G[i, 1] * P[1] + G[i, 2] * P[2]
            acc_i += -acc * w[i] / m * P[6]
            acc_i += kp * (P[10 + i] - w[i] * wdot)
            acc_i += tau * w[i] / m * drho
            out[o + (3 + i) * nc] = acc_i
        out[o + 3 * nc] += 2.0 * P[4]
        out[o + 4 * nc] += -2.0 * P[3]
        out[o + 6 * nc] = -tau * beta * drho
        for i in range(3):
            out[o + (7 + i) * nc] = -(T[i, 0] * P[0] + T[i, 1] * P[1] + T[i, 2] * P[2]) - (
                G[i, 0] * P[10] + G[i, 1] * P[11] + G[i, 2] * P[12]
            )
        out[o + 10 * nc] = -P[7] + 2.0 * P[11]
        out[o + 11 * nc] = -P[8] - 2.0 * P[10]
        out[o + 12 * nc] = -P[9]
        out[o + 13 * nc] = (
            -2.0 * rho * tau * pvn / (m * m * m) * P[6]
            + rho * tau / (m * m) * wdot
            + tau * pvn / (m * m) * drho
        )
        if lam_col and c == nc - 1 and smooth_active:
            # forcing of d z / d lam through the throttle
            dl = (psi - 1.0) / (2.0 * (1.0 - lam) * (1.0 - lam))
            for i in range(3):
                out[o + (3 + i) * nc] += tau * w[i] / m * dl
            out[o + 6 * nc] += -tau * beta * dl
            out[o + 13 * nc] += tau * pvn / (m * m) * dl
    return dmin


@njit(cache=True)
def _stage(y, h, K, s, par, mode, nc, ytmp):
    n = y.shape[0]
    for i in range(n):
        acc = 0.0
        for j in range(s):
            acc += A[s, j] * K[j, i]
        ytmp[i] = y[i] + h * acc
    return rhs(ytmp, par, mode, nc, K[s])


@njit(cache=True)
def rk_step(y, f, h, par, mode, nc, K, ynew, ytmp):
    """One DOP853 step; K[0] must hold f. Returns min body distance over stages."""
    n = y.shape[0]
    for i in range(n):
        K[0, i] = f[i]
    dmin = 1e300
    for s in range(1, N_STAGES):
        dmin = min(dmin, _stage(y, h, K, s, par, mode, nc, ytmp))
    for i in range(n):
        acc = 0.0
        for j in range(N_STAGES):
            acc += B[j] * K[j, i]
        ynew[i] = y[i] + h * acc
    dmin = min(dmin, rhs(ynew, par, mode, nc, K[N_STAGES]))
    return dmin


@njit(cache=True)
def error_norm(K, h, y, ynew, rtol, atol, nerr):
    e5 = 0.0
    e3 = 0.0
    for i in range(nerr):
        sc = atol + max(abs(y[i]), abs(ynew[i])) * rtol
        a5 = 0.0
        a3 = 0.0
        for j in range(N_STAGES + 1):
            a5 += E5[j] * K[j, i]
            a3 += E3[j] * K[j, i]
        a5 /= sc
        a3 /= sc
        e5 += a5 * a5
        e3 += a3 * a3
    if e5 == 0.0 and e3 == 0.0:
        return 0.0
    return abs(h) * e5 / np.sqrt((e5 + 0.01 * e3) * nerr)


@njit(cache=True)
def dense_coeffs(y, ynew, h, par, mode, nc, K, F, ytmp):
    """Extra stages and interpolation coefficients for the last step."""
    n = y.shape[0]
    for s in range(N_STAGES + 1, N_EXT):
        for i in range(n):
            acc = 0.0
            for j in range(s):
                acc += A[s, j] * K[j, i]
            ytmp[i] = y[i] + h * acc
        rhs(ytmp, par, mode, nc, K[s])
    for i in range(n):
        dy = ynew[i] - y[i]
        F[0, i] = dy
        F[1, i] = h * K[0, i] - dy
        F[2, i] = 2.0 * dy - h * (K[N_STAGES, i] + K[0, i])
    for r in range(N_INTERP - 3):
        for i in range(n):
            acc = 0.0
            for j in range(N_EXT):
                acc += D[r, j] * K[j, i]
            F[3 + r, i] = h * acc


@njit(cache=True)
def dense_eval(y, F, x, out, nfirst):
    """Evaluate the interpolant at fraction x of the step (first nfirst comps)."""
    for i in range(nfirst):
        acc = 0.0
        for k in range(N_INTERP - 1, -1, -1):
            acc += F[k, i]
            if (N_INTERP - 1 - k) % 2 == 0:
                acc *= x
            else:
                acc *= 1.0 - x
        out[i] = acc + y[i]


@njit(cache=True)
def _hermite_crossing(h0, d0, h1, d1, h):
    """Check an interior sign violation of the cubic Hermite model of H1."""
    for k in range(1, 8):
        x = k / 8.0
        x2 = x * x
        x3 = x2 * x
        val = (
            (2 * x3 - 3 * x2 + 1) * h0
            + (x3 - 2 * x2 + x) * h * d0
            + (-2 * x3 + 3 * x2) * h1
            + (x3 - x2) * h * d1
        )
        if val < 0.0:
            return True
    return False


@njit(cache=True)
def integrate(
    y, t, t_end, h_abs, par, mode, nc, rtol, atol, nerr,
    detect, floor, t_last_switch,
    rec_t, rec_y, rec_dim, nrec, switch_tol, time_tol,
):
    """Advance ``y`` in place from t toward t_end.

    Returns (status, t, h_abs, nrec). On ST_SWITCH, ``y`` holds the point at
    the located switching time ``t`` (still integrated with the old mode).
    """
    n = y.shape[0]
    K = np.empty((N_EXT, n))
    F = np.empty((N_INTERP, n))
    f = np.empty(n)
    ynew = np.empty(n)
    ytmp = np.empty(n)
    ytry = np.empty(n)
    zt = np.empty(NZ)
    cap = rec_t.shape[0]
    dmin = rhs(y, par, mode, nc, f)
    if dmin < floor or not np.isfinite(dmin):
        return ST_SINGULAR, t, h_abs, nrec
    direction = 1.0 if t_end >= t else -1.0
    while direction * (t_end - t) > 0.0:
        if nrec >= cap:
            return ST_BUFFER, t, h_abs, nrec
        min_step = 10.0 * abs(np.nextafter(t, direction * np.inf) - t)
        if h_abs < min_step:
            h_abs = min_step
        rejected = False
        while True:
            if h_abs < min_step:
                return ST_SMALL_STEP, t, h_abs, nrec
            h = h_abs * direction
            t_new = t + h
            if direction * (t_new - t_end) > 0.0:
                t_new = t_end
            h = t_new - t
            h_abs = abs(h)
            dmin = rk_step(y, f, h, par, mode, nc, K, ynew, ytmp)
            if dmin < floor or not np.isfinite(dmin):
                # step into or too close to a primary: shrink, then give up
                h_abs *= 0.25
                rejected = True
                if h_abs < min_step:
                    return ST_SINGULAR, t, h_abs, nrec
                continue
            en = error_norm(K, h, y, ynew, rtol, atol, nerr)
            if not np.isfinite(en):
                h_abs *= 0.25
                rejected = True
                continue
            if en < 1.0:
                if en == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = min(MAX_FACTOR, SAFETY * en ** ERR_EXP)
                if rejected:
                    factor = min(1.0, factor)
                h_next = h_abs * factor
                break
            h_abs *= max(MIN_FACTOR, SAFETY * en ** ERR_EXP)
            rejected = True

        if detect:
            h0 = event_value(y, par)
            d0 = event_rate(y, par)
            h1 = event_value(ynew, par)
            d1 = event_rate(ynew, par)
            crossed = h1 < -switch_tol
            if crossed:
                dense_coeffs(y, ynew, h, par, mode, nc, K, F, ytmp)
            elif _hermite_crossing(h0, d0, h1, d1, h):
                # confirm on the true interpolant
                dense_coeffs(y, ynew, h, par, mode, nc, K, F, ytmp)
                for k in range(1, 16):
                    dense_eval(y, F, k / 16.0, zt, NZ)
                    hv = event_value(zt, par)
                    if hv < -switch_tol:
                        crossed = True
                        break
            if crossed:
                # bracket the first wrong-sign sample
                xa = 0.0
                xb = 1.0
                for k in range(1, 33):
                    xk = k / 32.0
                    dense_eval(y, F, xk, zt, NZ)
                    hv = event_value(zt, par)
                    if hv < -switch_tol:
                        xb = xk
                        break
                    xa = xk
                for it in range(200):
                    if abs(xb - xa) * abs(h) <= 0.25 * time_tol:
                        break
                    xm = 0.5 * (xa + xb)
                    dense_eval(y, F, xm, zt, NZ)
                    hv = event_value(zt, par)
                    if hv < 0.0:
                        xb = xm
                    else:
                        xa = xm
                ts = t + 0.5 * (xa + xb) * h
                if direction * (ts - t_last_switch) <= time_tol:
                    ts = t + xb * h
                # polish on genuinely integrated points
                fs = np.empty(n)
                for it in range(6):
                    hs = ts - t
                    if hs == 0.0:
                        for i in range(n):
                            ytry[i] = y[i]
                    else:
                        for i in range(n):
                            fs[i] = f[i]
                        rk_step(y, fs, hs, par, mode, nc, K, ytry, ytmp)
                    hv = event_value(ytry, par)
                    dv = event_rate(ytry, par)
                    if abs(hv) <= switch_tol or dv == 0.0:
                        break
                    dt = -hv / dv
                    if abs(dt) <= time_tol:
                        ts += dt
                        hs = ts - t
                        for i in range(n):
                            fs[i] = f[i]
                        rk_step(y, fs, hs, par, mode, nc, K, ytry, ytmp)
                        break
                    ts += dt
                for i in range(n):
                    y[i] = ytry[i]
                t = ts
                if nrec < cap:
                    rec_t[nrec] = t
                    for i in range(rec_dim):
                        rec_y[nrec, i] = y[i]
                    nrec += 1
                return ST_SWITCH, t, h_next, nrec

        for i in range(n):
            y[i] = ynew[i]
            f[i] = K[N_STAGES, i]
        t = t_new
        h_abs = h_next
        rec_t[nrec] = t
        for i in range(rec_dim):
            rec_y[nrec, i] = y[i]
        nrec += 1
    return ST_DONE, t, h_abs, nrec


@njit(cache=True)
def initial_step(y, t, t_end, par, mode, nc, rtol, atol, nerr):
    """Hairer's starting step heuristic (as in scipy's select_initial_step)."""
    n = y.shape[0]
    f0 = np.empty(n)
    f1 = np.empty(n)
    rhs(y, par, mode, nc, f0)
    d0 = 0.0
    d1 = 0.0
    for i in range(nerr):
        sc = atol + abs(y[i]) * rtol
        d0 += (y[i] / sc) ** 2
        d1 += (f0[i] / sc) ** 2
    d0 = np.sqrt(d0 / nerr)
    d1 = np.sqrt(d1 / nerr)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, abs(t_end - t))
    direction = 1.0 if t_end >= t else -1.0
    y1 = y + direction * h0 * f0
    rhs(y1, par, mode, nc, f1)
    d2 = 0.0
    for i in range(nerr):
        sc = atol + abs(y[i]) * rtol
        d2 += ((f1[i] - f0[i]) / sc) ** 2
    d2 = np.sqrt(d2 / nerr) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    return min(100 * h0, h1, abs(t_end - t))

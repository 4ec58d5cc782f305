import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st
from scipy.optimize import least_squares

from l1crtbp import extremal as E
from l1crtbp import singular as S
from l1crtbp.dynamics import CrtbpParams, EngineParams
from l1crtbp.errors import UndefinedDirection

MU = 1.2153e-2
PRM = CrtbpParams(mu=MU, r_body1=0.0166, r_body2=0.0045)
ENG = EngineParams(tau_max=0.05, beta=0.0, m0=1.0)
ENG_B = EngineParams(tau_max=0.05, beta=0.4, m0=1.0)
FLOW = E.FlowOptions(rtol=1e-13, atol=1e-13)


def _pt(z):
    return E.ExtremalPoint.from_array(np.asarray(z, dtype=float))


def _random_z(rng, pr_scale=1.0):
    while True:
        r = rng.uniform(-1.2, 1.2, 3)
        r[2] *= 0.3
        if np.linalg.norm(r - PRM.r1) > 0.15 and np.linalg.norm(r - PRM.r2) > 0.15:
            break
    return np.concatenate([r, 0.3 * rng.normal(size=3), [rng.uniform(0.6, 1.0)], pr_scale * rng.normal(size=3), rng.normal(size=3), [rng.normal()]])


# ---------------------------------------------------------------- symbolic oracle


def _symbolic_ladder(tau, beta, mu):
    r = sp.symbols("x y z", real=True)
    v = sp.symbols("vx vy vz", real=True)
    m = sp.Symbol("m", positive=True)
    pr = sp.symbols("prx pry prz", real=True)
    pv = sp.symbols("pvx pvy pvz", real=True)
    pm = sp.Symbol("pm", real=True)
    X = list(r) + list(v) + [m]
    P = list(pr) + list(pv) + [pm]
    d1 = sp.sqrt((r[0] + mu) ** 2 + r[1] ** 2 + r[2] ** 2)
    d2 = sp.sqrt((r[0] - 1 + mu) ** 2 + r[1] ** 2 + r[2] ** 2)
    U = (r[0] ** 2 + r[1] ** 2) / 2 + (1 - mu) / d1 + mu / d2
    g = [sp.diff(U, c) for c in r]
    h = [2 * v[1], -2 * v[0], 0]
    H0 = sum(pr[i] * v[i] for i in range(3)) + sum(pv[i] * (h[i] + g[i]) for i in range(3))
    n = sp.sqrt(sum(c**2 for c in pv))
    H1 = tau * n / m - tau * beta * pm - 1

    def along(F, G):
        # derivative of G along the Hamiltonian flow of F
        return sum(sp.diff(F, P[i]) * sp.diff(G, X[i]) - sp.diff(F, X[i]) * sp.diff(G, P[i]) for i in range(7))

    H01 = along(H0, H1)
    H001 = along(H0, H01)
    H0001 = along(H0, H001)
    exprs = {"H01": H01, "H001": H001, "H0001": H0001, "H101": along(H1, H01), "H1001": along(H1, H001), "H10001": along(H1, H0001)}
    args = X + P
    return {k: sp.lambdify(args, e, "numpy") for k, e in exprs.items()}


@pytest.fixture(scope="module")
def oracle():
    return _symbolic_ladder(ENG.tau_max, 0.0, MU)


@pytest.fixture(scope="module")
def oracle_beta():
    return _symbolic_ladder(ENG_B.tau_max, ENG_B.beta, MU)


def test_closed_forms_match_symbolic_brackets(oracle):
    rng = np.random.default_rng(7)
    for _ in range(40):
        z = _random_z(rng)
        pt = _pt(z)
        lad = S.ladder(pt, ENG, PRM)
        for name, got in (("H01", lad.H01), ("H001", lad.H001), ("H0001", lad.H0001), ("H10001", lad.H10001)):
            ref = oracle[name](*z)
            assert got == pytest.approx(ref, rel=1e-9, abs=1e-12), name
        assert abs(oracle["H101"](*z)) <= 1e-12


def test_h101_with_mass_flow(oracle_beta):
    # with beta > 0 the bracket is tau beta H01 / m instead of zero
    rng = np.random.default_rng(11)
    for _ in range(10):
        z = _random_z(rng)
        pt = _pt(z)
        want = ENG_B.tau_max * ENG_B.beta * S.bracket_H01(pt, ENG_B, PRM) / z[6]
        assert oracle_beta["H101"](*z) == pytest.approx(want, rel=1e-10, abs=1e-14)
        assert S.bracket_H10001(pt, ENG_B, PRM) == pytest.approx(oracle_beta["H10001"](*z), rel=1e-9)


# ---------------------------------------------------------------- FD Poisson oracle


def _grad(F, z, h=1e-6):
    g = np.empty(14)
    for i in range(14):
        e = np.zeros(14)
        e[i] = h
        g[i] = (F(z + e) - F(z - e)) / (2 * h)
    return g


def _fd_bracket(F, G, z):
    gf, gg = _grad(F, z), _grad(G, z)
    return gf[7:] @ gg[:7] - gf[:7] @ gg[7:]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_h101_vanishes_fd(seed):
    z = _random_z(np.random.default_rng(seed))

    def h1(w):
        return E.switching_function(_pt(w), ENG)

    def h01(w):
        return S.bracket_H01(_pt(w), ENG, PRM)

    assert abs(_fd_bracket(h1, h01, z)) <= 1e-8


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_h10001_two_forms_agree(seed):
    pt = _pt(_random_z(np.random.default_rng(seed)))
    a = S.bracket_H10001(pt, ENG, PRM)
    b = S.bracket_H10001_angles(pt, ENG, PRM)
    assert a == pytest.approx(b, rel=1e-8, abs=1e-14)


def _coast_ladder_fd(z0, getter_pairs, dt=1e-3):
    fwd = E.flow(z0, dt, 1.0, ENG, PRM, FLOW).final
    bwd = E.flow(z0, -dt, 1.0, ENG, PRM, FLOW).final
    return [((f(_pt(fwd)) - f(_pt(bwd))) / (2 * dt), g(_pt(z0))) for f, g in getter_pairs]


def test_ladder_derivatives_along_coast():
    rng = np.random.default_rng(5)
    pairs = [
        (lambda p: E.switching_function(p, ENG), lambda p: S.bracket_H01(p, ENG, PRM)),
        (lambda p: S.bracket_H01(p, ENG, PRM), lambda p: S.bracket_H001(p, ENG, PRM)),
        (lambda p: S.bracket_H001(p, ENG, PRM), lambda p: S.bracket_H0001(p, ENG, PRM)),
    ]
    for _ in range(5):
        z = _random_z(rng)
        z[10:13] *= 0.5 / np.linalg.norm(z[10:13])  # H1 < 0: coast
        assert E.switching_function(_pt(z), ENG) < 0
        for fd, exact in _coast_ladder_fd(z, pairs):
            assert fd == pytest.approx(exact, rel=1e-4, abs=1e-9)


def test_h01_derivative_along_burn():
    rng = np.random.default_rng(8)
    z = _random_z(rng)
    z[10:13] *= 40.0 / np.linalg.norm(z[10:13])
    assert E.switching_function(_pt(z), ENG) > 0
    dt = 1e-4
    f = E.flow(z, dt, 1.0, ENG, PRM, FLOW).final
    b = E.flow(z, -dt, 1.0, ENG, PRM, FLOW).final
    fd = (S.bracket_H01(_pt(f), ENG, PRM) - S.bracket_H01(_pt(b), ENG, PRM)) / (2 * dt)
    assert fd == pytest.approx(S.bracket_H001(_pt(z), ENG, PRM), rel=1e-5)


def test_h01_examples():
    rng = np.random.default_rng(2)
    z = _random_z(rng)
    a = z[10:13]
    z[7:10] = -np.array([2 * a[1], -2 * a[0], 0.0])  # p_r = -dh p_v
    assert abs(S.bracket_H01(_pt(z), ENG, PRM)) < 1e-15
    z = _random_z(rng)
    base = S.bracket_H01(_pt(z), ENG, PRM)
    z2 = z.copy()
    z2[7:14] *= 3.0
    assert S.bracket_H01(_pt(z2), ENG, PRM) == pytest.approx(3.0 * base, rel=1e-13)
    z[10:13] = 0.0
    with pytest.raises(UndefinedDirection):
        S.bracket_H01(_pt(z), ENG, PRM)


def test_h001_with_zero_pr():
    rng = np.random.default_rng(4)
    z = _random_z(rng)
    z[7:10] = 0.0
    pt = _pt(z)
    a = z[10:13]
    from l1crtbp.dynamics import gravity_jacobian

    want = ENG.tau_max * (a @ gravity_jacobian(z[:3], PRM) @ a) / (z[6] * np.linalg.norm(a))
    assert S.bracket_H001(pt, ENG, PRM) == pytest.approx(want, rel=1e-13)


def test_h0001_velocity_term(oracle):
    rng = np.random.default_rng(9)
    z = _random_z(rng)
    z[3:6] = 0.0
    assert S.bracket_H0001(_pt(z), ENG, PRM) == pytest.approx(oracle["H0001"](*z), rel=1e-9)


def test_h10001_zero_cases():
    # p_v orthogonal to both radius vectors
    z = np.zeros(14)
    z[0:3] = [0.3, 0.4, 0.0]
    z[6] = 1.0
    z[10:13] = [0.0, 0.0, 30.0]
    assert abs(S.bracket_H10001(_pt(z), ENG, PRM)) < 1e-14
    # on the x-axis beyond the secondary both radius vectors are parallel
    c = np.sqrt(3.0 / 5.0)
    z[0:3] = [1.5, 0.0, 0.0]
    z[10:13] = 30.0 * np.array([c, np.sqrt(1 - c * c), 0.0])
    assert abs(S.bracket_H10001(_pt(z), ENG, PRM)) < 1e-12


def _singular_points(count=12, seed=0):
    """Points with H1 = H01 = H001 = H0001 = 0, by least squares over (p_r, p_v)."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        r = np.array([0.3, 0.25, 0.0]) if k < count // 2 else np.array([0.5, -0.2, 0.05])
        th = rng.uniform(0, 2 * np.pi)
        a = np.array([np.cos(th), np.sin(th), 0.1 * rng.normal()])
        a *= 0.9 / ENG.tau_max / np.linalg.norm(a)
        base = np.concatenate([r, [0.1, 0.5, 0.0], [0.9], rng.normal(size=3), a, [0.0]])

        def resid(q, base=base):
            z = base.copy()
            z[7:13] = q
            lad = S.ladder(_pt(z), ENG, PRM)
            return [lad.H1, lad.H01, lad.H001, lad.H0001]

        sol = least_squares(resid, base[7:13], xtol=1e-15, ftol=1e-15, gtol=1e-15)
        if sol.cost < 1e-20:
            z = base.copy()
            z[7:13] = sol.x
            out.append(z)
    return out


@pytest.fixture(scope="module")
def singular_points():
    return _singular_points()


def test_singular_membership_and_kelley(singular_points):
    signs = set()
    for z in singular_points:
        d = S.singular_surface_distance(_pt(z), ENG, PRM)
        assert max(d.abs_H1, d.abs_H01, d.abs_H001, d.abs_H0001) < 1e-8
        assert d.member == (d.H10001 <= 0)
        signs.add(bool(d.H10001 > 0))
    assert signs == {True, False}


def test_order_two_witness(oracle, singular_points):
    for z in singular_points:
        assert abs(oracle["H101"](*z)) < 1e-10
        assert abs(oracle["H1001"](*z)) < 1e-6
    assert max(abs(S.bracket_H10001(_pt(z), ENG, PRM)) for z in singular_points) > 1e-3


def test_chattering_detection():
    fuller = np.cumsum(0.3 * (1.0 / 3.0) ** np.arange(12))
    diag = S.diagnose_chattering(None, switch_times=list(fuller))
    assert diag.flagged and diag.window is not None
    assert not S.diagnose_chattering(None, switch_times=[0.3, 0.6]).flagged
    assert not S.diagnose_chattering(None, switch_times=list(np.linspace(0.1, 2.0, 20))).flagged


def test_chattering_from_error():
    from l1crtbp.errors import ChatteringSuspected

    assert S.diagnose_chattering(None, error=ChatteringSuspected(201, 3.0)).flagged


def test_toy_extremal_not_singular(toy_solution):
    from conftest import TOY_ENGINE, TOY_PARAMS

    traj = toy_solution.trajectory
    assert not S.diagnose_chattering(traj, TOY_ENGINE, TOY_PARAMS).flagged
    for i in range(0, len(traj.t), 7):
        assert not S.singular_surface_distance(traj.point(i), TOY_ENGINE, TOY_PARAMS).member

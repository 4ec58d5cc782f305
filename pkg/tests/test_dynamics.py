import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp
from scipy.optimize import bisect

from l1crtbp.dynamics import (
    CrtbpParams,
    EngineParams,
    State,
    collinear_point,
    coriolis,
    drift_field,
    gravity,
    gravity_hessian_form,
    gravity_jacobian,
    thrust_field,
)
from l1crtbp.errors import DegenerateMass, SingularityError

MU = 1.2153e-2
EMS = CrtbpParams(mu=MU, r_body1=6378 / 384400, r_body2=1737 / 384400, m_dry=1e-3 / 6.045e24)
TWO_BODY = CrtbpParams(mu=0.0)

vec3 = st.lists(st.floats(-3, 3, allow_nan=False), min_size=3, max_size=3).map(np.array)


def _admissible(r, params=EMS, margin=0.05):
    return np.linalg.norm(r - params.r1) > margin and np.linalg.norm(r - params.r2) > margin


def test_coriolis_values():
    assert np.array_equal(coriolis([0, 0, 0]), [0, 0, 0])
    assert np.array_equal(coriolis([1, 0, 0]), [0, -2, 0])
    assert np.array_equal(coriolis([0, 1, 5]), [2, 0, 0])


@given(vec3, vec3, st.floats(-4, 4), st.floats(-4, 4))
def test_coriolis_linear(a, b, al, be):
    np.testing.assert_allclose(coriolis(al * a + be * b), al * coriolis(a) + be * coriolis(b), atol=1e-12)


def test_gravity_two_body_unit_circle():
    np.testing.assert_allclose(gravity([1.0, 0.0, 0.0], CrtbpParams(mu=0.0, r_body2=1e-9)), 0.0, atol=1e-15)


def test_gravity_vanishes_at_l1_by_bisection():
    x_l1 = bisect(lambda x: gravity([x, 0, 0], EMS)[0], -MU + 0.1, 1 - MU - 0.01, xtol=1e-15)
    np.testing.assert_allclose(gravity([x_l1, 0, 0], EMS), 0.0, atol=1e-12)
    assert collinear_point(EMS, 1) == pytest.approx(x_l1, abs=1e-13)


def test_gravity_singular_at_secondary():
    with pytest.raises(SingularityError):
        gravity(EMS.r2, EMS)


def test_drift_zero_at_libration_point():
    x = State([collinear_point(EMS, 1), 0, 0], [0, 0, 0], 1.0)
    np.testing.assert_allclose(drift_field(x, EMS), 0.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(vec3, vec3)
def test_drift_mass_row_zero(r, v):
    if not _admissible(r):
        return
    assert drift_field(State(r, v, 0.7), EMS)[6] == 0.0


def test_two_body_circular_orbit_closes():
    # the R = 1 circle co-rotates with the frame: start off the x-axis, away from the massless secondary
    prm = TWO_BODY
    ic = np.array([0.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    rate = drift_field(State(ic[:3], ic[3:], 1.0), prm)
    assert np.linalg.norm(rate) < 1e-15
    # radius 1/2: rotating-frame speed 1/sqrt(R) - R, synodic period 2 pi / (R^-1.5 - 1)
    R = 0.5
    x0 = np.array([R, 0, 0, 0, 1 / np.sqrt(R) - R, 0])
    tangent = drift_field(State(x0[:3], x0[3:], 1.0), prm)[:3]
    assert abs(tangent @ x0[:3]) < 1e-15
    period = 2 * np.pi / (R**-1.5 - 1)
    sol = solve_ivp(lambda t, y: drift_field(State(y[:3], y[3:], 1.0), prm)[:6], (0, period), x0, method="DOP853", rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(sol.y[:, -1], x0, atol=1e-9)


def test_thrust_field():
    eng = EngineParams(0.3, 0.0, 1.0)
    x = State([0.5, 0, 0], [0, 0, 0], 1.0)
    np.testing.assert_allclose(thrust_field(x, [1, 0, 0], eng), [0, 0, 0, 0.3, 0, 0, 0])
    assert thrust_field(x, [0, 1, 0], eng)[6] == 0.0
    eng_b = EngineParams(0.3, 0.2, 1.0)
    assert thrust_field(x, [0, 1, 0], eng_b)[6] == pytest.approx(-0.06)
    with pytest.raises(DegenerateMass):
        thrust_field(State([0.5, 0, 0], [0, 0, 0], EMS.m_dry / 2), [1, 0, 0], eng, EMS)


def _fd_jac(r, params, h=1e-6):
    return np.column_stack([(gravity(r + h * e, params) - gravity(r - h * e, params)) / (2 * h) for e in np.eye(3)])


def test_gravity_jacobian_fd_fixed_point():
    r = np.array([0.5, 0.2, 0.1])
    J = gravity_jacobian(r, EMS)
    np.testing.assert_allclose(J, _fd_jac(r, EMS), rtol=1e-6, atol=1e-8)
    assert np.array_equal(J, J.T)


def test_gravity_jacobian_two_body_unit():
    np.testing.assert_allclose(gravity_jacobian([1, 0, 0], CrtbpParams(mu=0.0)), np.diag([3.0, 0.0, -1.0]), atol=1e-14)


@settings(max_examples=100, deadline=None)
@given(vec3)
def test_gravity_jacobian_fd_random(r):
    if not _admissible(r, margin=0.1):
        return
    J = gravity_jacobian(r, EMS)
    np.testing.assert_allclose(J, _fd_jac(r, EMS), rtol=1e-6, atol=1e-6 * np.abs(J).max())
    # divergence of f0: d(v)/dv contributes nothing, d(h)/dv is traceless
    assert abs(np.trace(np.array([[0, 2, 0], [-2, 0, 0], [0, 0, 0]]))) == 0


@settings(max_examples=60, deadline=None)
@given(vec3, vec3, vec3)
def test_gravity_hessian_form(r, a, b):
    if not _admissible(r, margin=0.1):
        return
    h = 1e-4
    fd = (gravity_jacobian(r + h * b, EMS) - gravity_jacobian(r - h * b, EMS)) @ a / (2 * h)
    got = gravity_hessian_form(r, a, b, EMS)
    scale = max(1.0, np.abs(fd).max())
    np.testing.assert_allclose(got, fd, atol=1e-4 * scale)
    np.testing.assert_allclose(got, gravity_hessian_form(r, b, a, EMS), atol=1e-12 * scale)
    assert np.array_equal(gravity_hessian_form(r, np.zeros(3), b, EMS), np.zeros(3))


@settings(max_examples=100, deadline=None)
@given(vec3, vec3)
def test_drift_divergence_free(r, v):
    if not _admissible(r, margin=0.1):
        return
    z = np.concatenate([r, v, [1.0]])
    h = 1e-6
    div = 0.0
    for i in range(7):
        e = np.zeros(7)
        e[i] = h
        fp = drift_field(State.from_array(z + e), EMS)
        fm = drift_field(State.from_array(z - e), EMS)
        div += (fp[i] - fm[i]) / (2 * h)
    assert abs(div) < 1e-12 * max(1.0, np.abs(gravity_jacobian(r, EMS)).max())


def test_physical_units_ems():
    prm = CrtbpParams.from_physical(MU, 384400.0, 6.045e24, 6378.0, 1737.0, 1e-3)
    assert prm.t_star == pytest.approx(3.7521e5, rel=1e-4)
    eng = EngineParams.from_physical(1.0, 500.0, prm, beta=0.0)
    # initial acceleration 1 N / 500 kg = 2e-3 m/s^2
    assert eng.max_acceleration * prm.acc_star == pytest.approx(2e-3, rel=1e-12)


def test_param_validation():
    with pytest.raises(ValueError):
        CrtbpParams(mu=0.6)
    with pytest.raises(ValueError):
        EngineParams(-1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        EngineParams(1.0, -0.1, 1.0)

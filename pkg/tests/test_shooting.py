import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import FLOW, TOY_ENGINE, TOY_PARAMS, toy_problem
from l1crtbp import shooting as Sh
from l1crtbp.dynamics import CrtbpParams, EngineParams, State
from l1crtbp.errors import HomotopyStalled, NoConvergence

MU = 1.2153e-2
EMS = CrtbpParams(mu=MU, r_body1=6378 / 384400, r_body2=1737 / 384400, m_dry=1e-3 / 6.045e24)
R_M = 13069.6 / 384400


def _on_moon_orbit(theta, tgt_speed):
    d = R_M * np.array([np.cos(theta), np.sin(theta), 0.0])
    v = tgt_speed * np.array([-np.sin(theta), np.cos(theta), 0.0])
    return np.concatenate([EMS.r2 + d, v])


@given(st.floats(0, 2 * np.pi))
def test_moon_target_vanishes_on_orbit(theta):
    tgt = Sh.moon_circular_target(EMS, R_M)
    x = _on_moon_orbit(theta, Sh.moon_circular_speed(EMS, R_M))
    np.testing.assert_allclose(tgt.phi(x), 0.0, atol=1e-16)
    assert tgt.l == 5 and tgt.n == 6


def test_moon_speed_frames():
    assert Sh.moon_circular_speed(EMS, R_M) == pytest.approx(np.sqrt(MU / R_M))
    assert Sh.moon_circular_speed(EMS, R_M, "inertial") == pytest.approx(np.sqrt(MU / R_M) - R_M)
    with pytest.raises(ValueError):
        Sh.moon_circular_speed(EMS, R_M, "galactic")


def test_moon_target_inside_body_rejected():
    with pytest.raises(ValueError):
        Sh.moon_circular_target(EMS, EMS.r_body2)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_target_derivatives_fd(seed):
    rng = np.random.default_rng(seed)
    tgt = Sh.moon_circular_target(EMS, R_M)
    x = _on_moon_orbit(rng.uniform(0, 6.3), 0.5) + rng.normal(size=6) * 0.01
    h = 1e-7
    fd = np.column_stack([(tgt.phi(x + h * e) - tgt.phi(x - h * e)) / (2 * h) for e in np.eye(6)])
    np.testing.assert_allclose(tgt.dphi(x), fd, atol=1e-8)
    for i in range(tgt.l):
        fd2 = np.column_stack([(tgt.dphi(x + h * e)[i] - tgt.dphi(x - h * e)[i]) / (2 * h) for e in np.eye(6)])
        np.testing.assert_allclose(tgt.d2phi(x, i), fd2, atol=1e-7)
        assert np.array_equal(tgt.d2phi(x, i), tgt.d2phi(x, i).T)


def test_target_keeps_long_double():
    tgt = Sh.moon_circular_target(EMS, R_M)
    x = _on_moon_orbit(0.3, 0.4).astype(np.longdouble)
    assert tgt.phi(x).dtype == np.longdouble and tgt.dphi(x).dtype == np.longdouble


def test_fixed_state_target():
    xf = np.arange(7.0)
    tgt = Sh.fixed_state_target(xf, n=6)
    assert tgt.l == tgt.n == 6
    np.testing.assert_array_equal(tgt.phi(xf), 0.0)
    np.testing.assert_array_equal(tgt.dphi(xf), np.eye(6))
    assert not tgt.weighted_hessian(xf, np.ones(6)).any()


def test_weighted_hessian():
    tgt = Sh.circular_orbit_target([0, 0, 0], 1.0, 1.0)
    W = tgt.weighted_hessian(np.zeros(6), np.array([2.0, 3.0, 5.0, 7.0, 11.0]))
    expect = np.zeros((6, 6))
    expect[:3, :3] = 2 * np.eye(3)
    expect[3:, 3:] = 3 * np.eye(3)
    expect[:3, 3:] = expect[3:, :3] = 5 * np.eye(3)
    np.testing.assert_array_equal(W, expect)


def test_validation():
    tgt = Sh.circular_orbit_target([0, 0, 0], 1.0, 1.0)
    x0 = State([0.5, 0, 0], [0, 1, 0], 1.0)
    with pytest.raises(ValueError):
        Sh.ShootingProblem(x0, -1.0, tgt, TOY_ENGINE, TOY_PARAMS)
    with pytest.raises(ValueError):
        Sh.ShootingProblem(x0, 1.0, tgt, TOY_ENGINE, TOY_PARAMS, lam=1.5)
    with pytest.raises(ValueError):
        Sh.ShootingProblem(x0, 1.0, tgt, EngineParams(0.2, 0.1, 1.0), TOY_PARAMS)
    with pytest.raises(ValueError):
        Sh.ShootingUnknowns([np.nan] * 6, [0.0] * 5)
    with pytest.raises(ValueError):
        Sh.TargetManifold(8, 6, None, None, None)
    with pytest.raises(ValueError):
        Sh.ShootingOptions(jacobian="magic")


def test_unknowns_roundtrip():
    u = np.arange(11.0)
    k = Sh.ShootingUnknowns.from_vector(u, 6)
    assert np.array_equal(k.vector(), u) and k.p0.shape == (6,) and k.nu.shape == (5,)


def test_multipliers_only_touch_costate_rows():
    pb = toy_problem(lam=0.5)
    u = np.r_[0.1, 0.0, 0.0, 0.0, 5.5, 0.0, np.zeros(5)]
    S0 = Sh.evaluate(pb, u)[0]
    u2 = u.copy()
    u2[6:] = [0.3, -0.2, 0.1, 0.4, 0.7]
    S1 = Sh.evaluate(pb, u2)[0]
    assert np.array_equal(S0[:5], S1[:5])
    assert not np.allclose(S0[5:], S1[5:])


@pytest.mark.parametrize("lam", [0.0, 0.5])
def test_variational_jacobian_matches_fd(lam):
    pb = toy_problem(lam=lam)
    opts = Sh.ShootingOptions(flow=FLOW)
    u = np.r_[0.1, 0.02, 0.0, -0.05, 5.5, 0.0, 0.2, -0.1, 0.05, 0.0, 0.0]
    _, DS, dl, _ = Sh.evaluate(pb, u, opts, jacobian=True, lambda_column=True)
    fd = Sh.fd_jacobian(pb, u, opts)
    assert np.linalg.norm(DS - fd) <= 1e-5 * np.linalg.norm(fd)
    h = 1e-6
    fl = (Sh.evaluate(pb.with_lambda(lam + h), u, opts)[0] - Sh.evaluate(pb.with_lambda(lam), u, opts)[0]) / h
    assert np.linalg.norm(dl - fl) <= 1e-3 * max(1.0, np.linalg.norm(fl))


def test_newton_from_solution(toy_solution):
    pb = toy_solution.problem
    opts = Sh.ShootingOptions(tol=1e-10, jacobian="variational", flow=FLOW)
    again = Sh.solve_shooting(pb, toy_solution.unknowns, opts)
    assert again.iterations <= 2
    assert again.residual_norm <= 1e-10


def test_toy_solution_structure(toy_solution):
    traj = toy_solution.trajectory
    assert toy_solution.residual_norm <= 1e-10
    assert traj.n_burn_arcs == 2 and traj.n_switches == 4


def test_transversality(toy_solution):
    pb = toy_solution.problem
    u = toy_solution.unknowns
    zf = toy_solution.trajectory.final
    J = pb.target.dphi(zf[:6])
    # p(t_f) is orthogonal to the tangent space of the target
    Q = np.linalg.svd(J)[2][pb.l :]
    assert np.linalg.norm(Q @ zf[7:13]) <= 1e-9 * np.linalg.norm(zf[7:13])
    np.testing.assert_allclose(zf[7:13], J.T @ u.nu, atol=1e-9)


def test_infeasible_transfer_time():
    pb = Sh.ShootingProblem(toy_problem().x0, 0.05, toy_problem().target, TOY_ENGINE, TOY_PARAMS, lam=1.0)
    opts = Sh.ShootingOptions(max_iter=15, jacobian="fd", flow=FLOW)
    with pytest.raises(NoConvergence):
        Sh.solve_shooting(pb, Sh.coarse_guess(pb), opts)


def test_continuation_two_point_grid():
    # short raise 0.5 -> 0.52: lam = 0 and lam = 1 both converge without bisection
    r0, r1 = 0.5, 0.52
    x0 = State([r0, 0, 0], [0, np.sqrt(1 / r0) - r0, 0], 1.0)
    tgt = Sh.circular_orbit_target([0, 0, 0], r1, np.sqrt(1 / r1) - r1)
    pb = Sh.ShootingProblem(x0, 1.0, tgt, TOY_ENGINE, TOY_PARAMS)
    opts = Sh.ShootingOptions(tol=1e-10, jacobian="variational", flow=FLOW)
    sols = Sh.continuation(pb, [0.0, 1.0], Sh.coarse_guess(pb), opts, min_step=0.5)
    assert [s.lam for s in sols] == [0.0, 1.0]
    assert sols[-1].residual_norm <= 1e-10


def test_continuation_stalls_on_direct_jump():
    # without an intermediate grid point the lam = 1 solve fails even after bisection
    pb = toy_problem()
    opts = Sh.ShootingOptions(tol=1e-10, jacobian="variational", flow=FLOW)
    with pytest.raises(HomotopyStalled) as info:
        Sh.continuation(pb, [0.0, 1.0], Sh.coarse_guess(pb), opts)
    assert 0.9 < info.value.lambda_reached < 1.0


def test_grid_validation():
    pb = toy_problem()
    with pytest.raises(ValueError):
        Sh.continuation(pb, [0.0, 0.5], Sh.coarse_guess(pb))
    with pytest.raises(ValueError):
        Sh.continuation(pb, [0.0, 0.6, 0.4, 1.0], Sh.coarse_guess(pb))


def test_coarse_guess():
    pb = toy_problem()
    g = Sh.coarse_guess(pb, "velocity", scale=2.0)
    assert np.linalg.norm(g.p0[3:6]) == pytest.approx(2.0 * pb.x0.m / TOY_ENGINE.tau_max)
    assert not g.p0[:3].any() and not g.nu.any()
    r = Sh.coarse_guess(pb, "radial")
    np.testing.assert_allclose(r.p0[3:6] / np.linalg.norm(r.p0[3:6]), [1, 0, 0])

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinoplan.constraints import (ConstraintError, ConstraintSet, ConstraintTerm, acceleration_loss,
                                  huber, inequality_penalty, integrate_trajectory_loss,
                                  object_collision_loss, orientation_loss, robot_collision_loss,
                                  surface_loss, task_step_loss, torque_loss, velocity_loss)
from kinoplan.robotmodel import PlanarArmModel, chain_points, forward_kinematics
from kinoplan.splinecore import SplineCurve
from kinoplan.trajectory import Layout, PhaseTrajectory, duration, make_trajectory, BoundaryConditions

from conftest import two_link

LAY = Layout()


def brute_force_slack(c, mu):
    return np.min((c + mu**2) ** 2)


def test_inequality_penalty_examples():
    assert inequality_penalty(0.5) == 0.25
    assert inequality_penalty(-2.0) == 0.0


def test_slack_elimination_spot_checks():
    mu = np.arange(-2, 2 + 1e-12, 1e-4)
    for c in (-1.3, -0.01, 0.0, 0.4, 1.7):
        assert inequality_penalty(c) == pytest.approx(brute_force_slack(c, mu), abs=1e-4)


@pytest.mark.parametrize("x,val", [(0.5, 0.125), (2.0, 1.5), (0.0, 0.0), (-2.0, 1.5)])
def test_huber(x, val):
    assert float(huber(x, 1.0)) == pytest.approx(val)


def test_huber_rejects_bad_delta():
    with pytest.raises(ConstraintError):
        huber(1.0, 0.0)


def test_limit_losses(arm):
    assert velocity_loss(arm, 0.5 * arm.dq_limits) == 0
    dq = 0.5 * arm.dq_limits
    dq[0] = 1.1 * arm.dq_limits[0]
    assert velocity_loss(arm, dq) == pytest.approx(float(huber(0.1 * arm.dq_limits[0])))
    ddq = -arm.ddq_limits * np.array([1.0, 1.5, 0.2])
    assert acceleration_loss(arm, ddq) == pytest.approx(float(huber(0.5 * arm.ddq_limits[1])))
    assert torque_loss(arm, np.zeros(3), np.zeros(3), np.zeros(3)) == 0


def test_limit_loss_monotone(arm, rng):
    for _ in range(50):
        a = rng.uniform(-3, 3, 3)
        b = a.copy()
        i = rng.integers(3)
        b[i] = a[i] * rng.uniform(1.0, 2.0)
        assert velocity_loss(arm, b) >= velocity_loss(arm, a)
        assert acceleration_loss(arm, 10 * b) >= acceleration_loss(arm, 10 * a)


def test_surface_loss():
    m = two_link()
    q = np.array([np.pi / 2, -np.pi / 2])  # ee at (1, 1)
    bounds = {"x_lo": -1.0, "x_hi": 1.5, "y_line": 1.0}
    assert surface_loss(m, q, bounds) == pytest.approx(0, abs=1e-24)
    assert surface_loss(m, q, dict(bounds, y_line=0.9)) == pytest.approx(0.005)
    assert surface_loss(m, q, dict(bounds, x_hi=0.8)) == pytest.approx(float(huber(0.2)))


@pytest.mark.parametrize("err,arg", [(0.0, 0.0), (np.pi, 2.0), (np.pi / 2, 1.0)])
def test_orientation_loss(err, arg):
    m = two_link()
    q = np.array([0.2, 0.5])
    assert orientation_loss(m, q, 0.7 + err) == pytest.approx(float(huber(arg)), abs=1e-15)


def test_robot_collision_examples():
    m = two_link()
    assert robot_collision_loss(m, np.zeros(2), [(0.0, 1.0, 2.0, 2.0)], clearance=0.15) == 0
    # one link sampled at base and tip only; the tip lies on the box face
    one = PlanarArmModel([1.0], [1.0], [0.5], [0.1], [1.0], [1.0], [1.0])
    box = [(1.0, -0.5, 2.0, 0.5)]
    assert robot_collision_loss(one, np.zeros(1), box, clearance=0.15, spacing=2.0) == \
        pytest.approx(float(huber(0.15)))


def point_box_distance(p, box):
    x_lo, y_lo, x_hi, y_hi = box
    dx = max(x_lo - p[0], 0.0, p[0] - x_hi)
    dy = max(y_lo - p[1], 0.0, p[1] - y_hi)
    return np.hypot(dx, dy)


def test_robot_collision_zero_iff_clear(arm, rng):
    clearance = 0.15
    for _ in range(200):
        q = rng.uniform(-np.pi, np.pi, 3)
        c = rng.uniform(-1, 1, 2)
        box = (c[0], c[1], c[0] + rng.uniform(0.05, 0.4), c[1] + rng.uniform(0.05, 0.4))
        pts = chain_points(arm, q, 0.1)
        d = min(point_box_distance(p, box) for p in pts)
        loss = robot_collision_loss(arm, q, [box], clearance)
        assert (loss == 0) == (d >= clearance)


def test_object_collision():
    box = [(0.0, 0.0, 1.0, 1.0)]
    assert object_collision_loss([[-0.5, 0.5], [2.0, 2.0]], box) == 0
    assert object_collision_loss([[0.05, 0.5], [2.0, 2.0]], box) == pytest.approx(float(huber(0.05)))
    xs = np.linspace(-0.01, 0.01, 201)
    vals = np.array([object_collision_loss([[x, 0.5]], box) for x in xs])
    assert vals[100] == 0 and np.max(np.abs(np.diff(vals))) < 1e-5


def test_task_step_loss():
    m = two_link()
    q = np.array([0.3, 0.8])
    assert task_step_loss(m, q, np.zeros(2), np.ones(2), 0.01) == 1.0
    assert task_step_loss(m, q, np.ones(2), np.ones(2), 0.0) == 1.0
    radius = np.linalg.norm(forward_kinematics(m, q).position)
    w = 1.5
    v = w * radius
    assert task_step_loss(m, q, np.array([w, 0.0]), np.zeros(2), 0.01) == pytest.approx(
        1 + 0.01 * v**2 / radius, rel=1e-6)


def rest_traj(n=3, rate=1.0, q=None):
    q = np.zeros(n) if q is None else q
    bc = BoundaryConditions(q, np.zeros(n), np.zeros(n), q, np.zeros(n))
    return make_trajectory(bc, np.full(LAY.C_r, rate), np.zeros((LAY.n_free, n)))


def all_terms(arm):
    return ConstraintSet([ConstraintTerm("velocity", 1e-3), ConstraintTerm("acceleration", 1e-3),
                          ConstraintTerm("torque", 1e-3)], eta=0.0)


def test_integral_recovers_duration(arm, rng):
    traj = make_trajectory(BoundaryConditions(*np.zeros((5, 3))), rng.uniform(0.5, 2, LAY.C_r),
                           np.zeros((LAY.n_free, 3)))
    b = integrate_trajectory_loss(traj, arm, all_terms(arm), N=512)
    assert b.task == pytest.approx(duration(traj, 512), abs=1e-12)
    assert np.all(b.per_term == 0)


def test_constant_velocity_violation(arm):
    # linear path in joint 0 only, r = 1: dq = slope, constant
    limit = arm.dq_limits[0]
    k = LAY.path_knots.array
    greville = np.array([k[i + 1:i + 1 + LAY.D_p].mean() for i in range(LAY.C_p)])
    P = np.zeros((LAY.C_p, 3))
    P[:, 0] = 1.1 * limit * greville
    traj = PhaseTrajectory(SplineCurve(LAY.path_knots, P), SplineCurve(LAY.rate_knots, np.ones((LAY.C_r, 1))))
    cset = ConstraintSet([ConstraintTerm("velocity", 1.0)])
    b = integrate_trajectory_loss(traj, arm, cset, N=256)
    assert b.per_term[0] == pytest.approx(float(huber(0.1 * limit)), rel=1e-9)


def test_quadrature_refinement(arm, rng):
    bc = BoundaryConditions(*rng.uniform(-1, 1, (5, 3)))
    traj = make_trajectory(bc, rng.uniform(0.5, 2, LAY.C_r), rng.normal(0, 0.1, (LAY.n_free, 3)))
    cset = ConstraintSet([ConstraintTerm("velocity", 1.0), ConstraintTerm("acceleration", 1.0),
                          ConstraintTerm("torque", 1.0)], eta=0.01)
    a = integrate_trajectory_loss(traj, arm, cset, N=1024).total
    b = integrate_trajectory_loss(traj, arm, cset, N=4096).total
    assert abs(a - b) / abs(b) < 1e-4


def test_constraint_set_json_and_validation():
    cset = ConstraintSet([ConstraintTerm("surface", 2e-6, {"x_lo": -0.3, "x_hi": 0.5, "y_line": 0.4}),
                          ConstraintTerm("velocity", 6e-3)], eta=0.01)
    back = ConstraintSet.from_json(json.loads(json.dumps(cset.to_json())))
    assert back == cset
    with pytest.raises(ConstraintError):
        ConstraintTerm("gravity", 1.0)
    with pytest.raises(ConstraintError):
        ConstraintTerm("velocity", 0.0)
    with pytest.raises(ConstraintError):
        ConstraintSet([ConstraintTerm("velocity", 1.0), ConstraintTerm("velocity", 2.0)])
    with pytest.raises(ConstraintError):
        task_step_loss(two_link(), np.zeros(2), np.zeros(2), np.zeros(2), -1.0)


@settings(max_examples=100, deadline=None)
@given(c=st.floats(-2, 2))
def test_penalty_is_minimised_slack(c):
    # minimiser of (c + mu^2)^2 is mu^2 = max(-c, 0)
    mu2 = max(-c, 0.0)
    assert inequality_penalty(c) == pytest.approx((c + mu2) ** 2, abs=1e-15)
    assert inequality_penalty(c) <= (c + 0.3**2) ** 2 + 1e-15

import numpy as np
import pytest

from kinoplan.harness import Dataset, default_alpha, generate_reach_problems
from kinoplan.metricopt import ManifoldMetric
from kinoplan.neuralplanner import (PlannerNetwork, TrainConfig, TrainingError, batch_gradient,
                                    batch_loss, forward, normalize_inputs, plan, replan_from_time,
                                    train, train_epoch)
from kinoplan.trajectory import (BoundaryConditions, Layout, build_time_map, duration,
                                 kinematic_state_at_phase, state_at_time)

from oracles import rel_err

LAY = Layout()


@pytest.fixture(scope="module")
def reach(request):
    from kinoplan.robotmodel import default_model
    return generate_reach_problems(24, 9, default_model(), val_fraction=0.25)


def residuals(traj, bc):
    q0, dq0, ddq0 = kinematic_state_at_phase(traj, 0.0)
    q1, dq1, _ = kinematic_state_at_phase(traj, 1.0)
    return max(np.max(np.abs(a - b)) for a, b in
               ((q0, bc.q0), (dq0, bc.dq0), (ddq0, bc.ddq0), (q1, bc.qd), (dq1, bc.dqd)))


def test_normalize_inputs(arm):
    zero = BoundaryConditions(*np.zeros((5, 3)))
    assert np.array_equal(normalize_inputs(zero, arm), np.zeros(15))
    bc = BoundaryConditions(np.zeros(3), arm.dq_limits, np.zeros(3), np.zeros(3), np.zeros(3))
    f = normalize_inputs(bc, arm)
    assert f.shape == (15,) and np.array_equal(f[6:9], np.ones(3))


def test_zero_network_plan(arm, reach):
    net = PlannerNetwork.zeros(3, LAY)
    p = reach.problems[0]
    phi, rate = forward(net, normalize_inputs(p, arm))
    assert np.array_equal(phi, np.zeros((LAY.n_free, 3))) and np.array_equal(rate, np.ones(LAY.C_r))
    traj = plan(net, p, arm)
    assert duration(traj, 256) == pytest.approx(1.0, abs=1e-14)
    # same shape as the direct planner's start: interior points on the segment between the anchors
    P = traj.path.control_points
    frac = (np.arange(LAY.n_free) / (LAY.n_free - 1))[:, None]
    assert np.allclose(P[3:LAY.C_p - 2], P[2] + (P[LAY.C_p - 2] - P[2]) * frac, atol=1e-12)


def test_head_shapes_and_positive_rate(arm, reach):
    net = PlannerNetwork.init(3, LAY, hidden=32, seed=1)
    feats = np.stack([normalize_inputs(p, arm) for p in reach.problems[:5]])
    phi, rate = forward(net, feats)
    assert phi.shape == (5, LAY.C_p - 6 + 1, 3) and rate.shape == (5, LAY.C_r)
    assert np.all(rate > 0)
    with pytest.raises(TrainingError):
        forward(net, feats[:, :-1])


def test_forward_deterministic_and_sensitive(arm, reach):
    x = normalize_inputs(reach.problems[1], arm)
    a = PlannerNetwork.init(3, LAY, hidden=32, seed=4)
    b = PlannerNetwork.init(3, LAY, hidden=32, seed=4)
    assert all(np.array_equal(u, v) for u, v in zip(forward(a, x), forward(b, x)))
    b.trunk[0][0][0, 0] += 0.1
    assert not np.array_equal(forward(a, x)[0], forward(b, x)[0])


def test_any_network_meets_boundary(arm, reach):
    for seed in range(3):
        net = PlannerNetwork.init(3, LAY, hidden=16, seed=seed)
        for p in reach.problems[:4]:
            assert residuals(plan(net, p, arm), p.bc) < 1e-8


def test_gradient_probe(arm, reach):
    net = PlannerNetwork.init(3, LAY, hidden=16, seed=2)
    probs = reach.problems[:4]
    terms = probs[0].constraints
    alpha = default_alpha(probs[0].task)
    _, grads, _ = batch_gradient(net, probs, model=arm, terms=terms, alpha=alpha, N=64)
    params = net.parameters()
    for k, index in ((0, (3, 5)), (1, (7,))):  # one first-layer weight, one first-layer bias
        h = 1e-6
        vals = []
        for sign in (1, -1):
            trial = [a.copy() for a in params]
            trial[k][index] += sign * h
            vals.append(float(batch_loss(net, probs, arm, terms, alpha, 64, trial)[0]))
        fd = (vals[0] - vals[1]) / (2 * h)
        assert rel_err(grads[k][index], fd, 1e-8) < 1e-3


def test_zero_lr_freezes_weights_but_updates_alpha(arm, reach):
    net = PlannerNetwork.init(3, LAY, hidden=16, seed=0)
    before = [a.copy() for a in net.parameters()]
    terms = reach.problems[0].constraints
    metric = ManifoldMetric(default_alpha(reach.problems[0].task))
    cfg = TrainConfig(lr=0.0, batch_size=len(reach.train), N=32, budget_margin=1.0)
    net, new_metric, stats = train_epoch(net, reach, arm, terms, metric, cfg)
    assert all(np.array_equal(a, b) for a, b in zip(before, net.parameters()))
    expected = metric.alpha + metric.gamma * np.log(np.maximum(stats.train_terms, 1e-12) / terms.budgets)
    assert np.allclose(new_metric.alpha, expected, atol=1e-12)
    assert stats.val_loss is not None


def test_single_problem_overfit(arm, reach):
    ds = Dataset.from_problems(reach.problems[:1], 0)
    terms = reach.problems[0].constraints
    net = PlannerNetwork.init(3, LAY, hidden=16, seed=0)
    metric = ManifoldMetric.zeros(len(terms.terms), gamma=0.0)  # fixed weights isolate the descent
    net, _, hist = train(net, ds, arm, terms, metric, TrainConfig(lr=1e-3, epochs=200, N=32))
    assert hist[-1].train_loss <= 0.5 * hist[0].train_loss


def test_replan_identity_and_endpoint(arm, reach):
    net = PlannerNetwork.init(3, LAY, hidden=16, seed=3)
    p = reach.problems[2]
    traj = plan(net, p, arm)
    tm = build_time_map(traj)
    same, new_p = replan_from_time(net, traj, tm, 0.0, (p.bc.qd, p.bc.dqd), arm, p)
    for k in ("q0", "dq0", "ddq0", "qd", "dqd"):
        assert np.allclose(getattr(new_p.bc, k), getattr(p.bc, k), atol=1e-12)
    _, end_p = replan_from_time(net, traj, tm, tm.T, (p.bc.q0, np.zeros(3)), arm, p)
    assert np.allclose(end_p.bc.q0, p.bc.qd) and np.allclose(end_p.bc.dq0, p.bc.dqd)
    with pytest.raises(TrainingError):
        replan_from_time(net, traj, tm, 2 * tm.T, (p.bc.qd, p.bc.dqd), arm)


def test_replan_seam_continuity(arm, reach):
    net = PlannerNetwork.init(3, LAY, hidden=16, seed=5)
    p, other = reach.problems[3], reach.problems[4]
    traj = plan(net, p, arm)
    tm = build_time_map(traj)
    t_s = 0.4 * tm.T
    new, _ = replan_from_time(net, traj, tm, t_s, (other.bc.qd, other.bc.dqd), arm, p)
    before = state_at_time(traj, tm, t_s)
    after = kinematic_state_at_phase(new, 0.0)
    for a, b in zip(before, after):
        assert np.max(np.abs(a - b)) < 1e-8


def test_checkpoint_round_trip(tmp_path, arm, reach):
    net = PlannerNetwork.init(3, LAY, hidden=16, seed=7)
    metric = ManifoldMetric([0.1, -0.2, 0.3, -4.0], gamma=0.02)
    path = tmp_path / "net.json"
    net.save(path, metric)
    back, m = PlannerNetwork.load(path)
    assert all(np.array_equal(a, b) for a, b in zip(net.parameters(), back.parameters()))
    assert np.array_equal(m.alpha, metric.alpha) and m.gamma == metric.gamma
    x = normalize_inputs(reach.problems[0], arm)
    assert np.array_equal(forward(net, x)[1], forward(back, x)[1])


def test_train_config_validation():
    with pytest.raises(TrainingError):
        TrainConfig(lr=-1.0)
    with pytest.raises(TrainingError):
        TrainConfig(budget_margin=0.0)
    with pytest.raises(TrainingError):
        TrainConfig(optimizer="rmsprop")

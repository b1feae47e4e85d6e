"""Train a small planner network briefly, then switch goals mid-motion.

A short run (a few dozen epochs) is enough to see the constraint losses fall;
the acceptance run trains for 400.  Run: python3 demos/train_and_replan.py
"""
import numpy as np

from kinoplan.harness import default_alpha, generate_reach_problems
from kinoplan.harness.evaluation import validate_trajectory
from kinoplan.metricopt import ManifoldMetric
from kinoplan.neuralplanner import PlannerNetwork, TrainConfig, plan, replan_from_time, train_epoch
from kinoplan.robotmodel import default_model
from kinoplan.trajectory import build_time_map, kinematic_state_at_phase, state_at_time

arm = default_model()
data = generate_reach_problems(600, seed=21, model=arm, val_fraction=0.1)
terms = data.problems[0].constraints
net = PlannerNetwork.init(3, seed=0)
metric = ManifoldMetric(default_alpha(data.problems[0].task))
cfg = TrainConfig()

opt = None
for epoch in range(40):
    net, metric, stats = train_epoch(net, data, arm, terms, metric, cfg, epoch, opt)
    opt = stats.optimizer_state
    if epoch % 10 == 0:
        print(f"epoch {epoch:3d}  loss {stats.train_loss:.3f}  terms/budget "
              f"{np.round(stats.train_terms / terms.budgets, 2)}")

ok = sum(validate_trajectory(plan(net, p, arm), p, arm).success for p in data.val)
print(f"held-out feasible after 40 epochs: {ok}/{len(data.val)}")

p, other = data.val[0], data.val[1]
traj = plan(net, p, arm)
tm = build_time_map(traj)
t_s = 0.4 * tm.T
new, _ = replan_from_time(net, traj, tm, t_s, (other.bc.qd, other.bc.dqd), arm, p)
before, after = state_at_time(traj, tm, t_s), kinematic_state_at_phase(new, 0.0)
jump = max(np.abs(a - b).max() for a, b in zip(before, after))
print(f"goal switched at t={t_s:.3f} s, seam jump {jump:.1e}")

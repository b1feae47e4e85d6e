"""Plan one reach-on-line motion by direct optimisation and inspect it.

Run: python3 demos/reach_direct.py
"""
import numpy as np

from kinoplan.harness import default_alpha, generate_reach_problems
from kinoplan.harness.evaluation import validate_trajectory
from kinoplan.metricopt import ManifoldMetric, OptimizerConfig, direct_plan
from kinoplan.robotmodel import default_model
from kinoplan.trajectory import build_time_map, state_at_time

arm = default_model()
problem = generate_reach_problems(1, seed=3, model=arm).problems[0]
print("start", problem.bc.q0.round(3), "goal", problem.bc.qd.round(3))

res = direct_plan(problem, metric=ManifoldMetric(default_alpha(problem.task)), model=arm,
                  cfg=OptimizerConfig(max_iters=1500))
m = validate_trajectory(res.trajectory, problem, arm)
print(f"duration {m.T:.3f} s, feasible {m.success}")
for kind, v, b in zip(m.kinds, m.integrals, m.budgets):
    print(f"  {kind:<13} {v:.2e} / {b:.2e}")

# sample the motion on a uniform clock
tm = build_time_map(res.trajectory)
for t in np.linspace(0, tm.T, 6):
    q, dq, _ = state_at_time(res.trajectory, tm, t)
    print(f"t={t:5.3f}  q={np.round(q, 3)}  |dq|={np.abs(dq).max():.3f}")

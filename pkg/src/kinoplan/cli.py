"""Command-line entry point: ``kinoplan {gen,plan,train,eval,check}``.

Every option may also come from a ``--config`` JSON file keyed by the
option's long name (``quad_n`` or ``quad-n``); explicit flags win.  Exit
status is 0 on success, 2 on bad arguments, 1 on runtime failure and 3
when a self-test fails.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import subprocess
import sys
import time

import numpy as np

from .constraints import ConstraintSet, integrate_trajectory_loss
from .harness import (Dataset, PlanningProblem, default_alpha,
                      generate_reach_problems, generate_transfer_problems)
from .harness.evaluation import evaluate_planner, validate_trajectory, write_report_csv, write_report_json
from .metricopt import (ManifoldMetric, OptimizerConfig, TrajectoryObjective, direct_plan,
                        initial_guess, loss_gradient)
from .neuralplanner import PlannerNetwork, TrainConfig, plan, train_epoch
from .robotmodel import PlanarArmModel, default_model
from .serialize import dumps17, fmt17
from .trajectory import (BoundaryConditions, Layout, boundary_constants, duration,
                         kinematic_state_at_phase, make_trajectory)

log = logging.getLogger("kinoplan")

TASKS = {"reach": "reach_on_line", "transfer": "transfer_with_orientation"}

DEFAULTS = {
    "task": "reach", "count": 10, "seed": 0, "val_fraction": 0.0, "model": None,
    "constraints": None, "planner": "direct", "problem": None, "index": 0, "dataset": None,
    "checkpoint": None, "epochs": 400, "lr": 5e-5, "batch": 128, "quad_n": None,
    "n_dense": 1024, "max_iters": 1500, "hidden": 128, "budget_margin": 0.3, "out": None,
}

READ_PATHS = ("model", "constraints", "problem", "dataset", "checkpoint")


class UsageError(Exception):
    pass


class SelfTestFailure(Exception):
    pass


def version_string() -> str:
    try:
        from importlib.metadata import version
        v = version("artifact")
    except Exception:
        v = "0+unknown"
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=here, capture_output=True,
                             text=True, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            v += "+g" + rev.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return v


# ---------------------------------------------------------------- argument handling

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    a = common.add_argument
    a("--config", help="JSON file of option defaults (flags win)")
    a("--seed", type=int)
    a("--model", help="robot model JSON")
    a("--constraints", help="constraint-set JSON overriding each problem's own")
    a("--quad-n", dest="quad_n", type=int,
      help="quadrature cells while optimising (default 200 direct, 100 training)")
    a("--n-dense", dest="n_dense", type=int, help="validation grid size (>= 1024)")
    a("--out", help="output file or directory")
    a("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="kinoplan", description="Spline-based kinodynamic planning.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a problem dataset (JSON lines)")
    g.add_argument("--task", choices=sorted(TASKS))
    g.add_argument("--count", type=int)
    g.add_argument("--val-fraction", dest="val_fraction", type=float)

    def planner_opts(sp):
        sp.add_argument("--planner", choices=["direct", "network"])
        sp.add_argument("--direct", dest="planner", action="store_const", const="direct")
        sp.add_argument("--checkpoint")
        sp.add_argument("--max-iters", dest="max_iters", type=int)

    pl = sub.add_parser("plan", parents=[common], help="plan one problem")
    planner_opts(pl)
    pl.add_argument("--problem", help="problem JSON, or a dataset file with --index")
    pl.add_argument("--index", type=int)

    t = sub.add_parser("train", parents=[common], help="train the network planner")
    t.add_argument("--dataset")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--budget-margin", dest="budget_margin", type=float)

    e = sub.add_parser("eval", parents=[common], help="evaluate a planner on a dataset")
    planner_opts(e)
    e.add_argument("--dataset")

    sub.add_parser("check", parents=[common], help="run the invariant self-tests")
    return p


def resolve(argv) -> dict:
    """Parse ``argv`` and merge with the config file and defaults."""
    ns = vars(_parser().parse_args(argv))
    cfg = dict(DEFAULTS)
    if ns.get("config"):
        try:
            with open(ns["config"]) as f:
                file_cfg = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        for k, v in file_cfg.items():
            key = k.replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"unknown config key {k!r}")
            cfg[key] = v
    for k, v in ns.items():
        if v is not None and k != "config":
            cfg[k] = v
    for k in READ_PATHS:
        if cfg.get(k) is not None and not os.path.exists(cfg[k]):
            raise UsageError(f"--{k}: no such file {cfg[k]!r}")
    if cfg["task"] not in TASKS:
        raise UsageError(f"unknown task {cfg['task']!r}")
    if cfg["n_dense"] < 1024:
        raise UsageError("--n-dense must be >= 1024")
    for k in ("count", "epochs", "batch", "max_iters"):
        if cfg[k] <= 0:
            raise UsageError(f"--{k.replace('_', '-')} must be positive")
    return cfg


def _effective(cfg: dict) -> dict:
    # the output location is left out so reruns into different paths are byte-identical
    out = {k: v for k, v in cfg.items() if k not in ("verbose", "out")}
    out["version"] = version_string()
    return out


def _model(cfg) -> PlanarArmModel:
    if cfg["model"] is None:
        return default_model()
    with open(cfg["model"]) as f:
        return PlanarArmModel.from_json(json.load(f))


def _override_constraints(cfg, problems):
    if cfg["constraints"] is None:
        return list(problems)
    with open(cfg["constraints"]) as f:
        cset = ConstraintSet.from_json(json.load(f))
    return [dataclasses.replace(p, constraints=cset) for p in problems]


def _load_dataset(cfg) -> Dataset:
    if cfg["dataset"] is None:
        raise UsageError("--dataset is required")
    ds = Dataset.load(cfg["dataset"])
    if not len(ds):
        raise UsageError("dataset is empty")
    ds.problems = _override_constraints(cfg, ds.problems)
    return ds


def _load_problem(cfg) -> PlanningProblem:
    path = cfg["problem"]
    if path is None:
        raise UsageError("--problem is required")
    with open(path) as f:
        text = f.read()
    try:
        d = json.loads(text)
        problem = PlanningProblem.from_json(d.get("problem", d))
    except json.JSONDecodeError:
        problems = Dataset.load(path).problems
        if not 0 <= cfg["index"] < len(problems):
            raise UsageError(f"--index {cfg['index']} outside dataset of {len(problems)}")
        problem = problems[cfg["index"]]
    return _override_constraints(cfg, [problem])[0]


def _planner(cfg, model):
    """``problem -> trajectory`` callable for the selected planner."""
    if cfg["planner"] == "network":
        if cfg["checkpoint"] is None:
            raise UsageError("--planner network needs --checkpoint")
        net, _ = PlannerNetwork.load(cfg["checkpoint"])
        if net.n != model.n:
            raise UsageError("checkpoint and model disagree on joint count")
        return lambda p: plan(net, p, model)
    opt = OptimizerConfig(max_iters=cfg["max_iters"], N=cfg["quad_n"] or OptimizerConfig.N)

    def run(p):
        metric = ManifoldMetric(default_alpha(p.task)) if len(p.constraints.terms) == len(
            default_alpha(p.task)) else ManifoldMetric.zeros(len(p.constraints.terms))
        return direct_plan(p, cfg=opt, metric=metric, model=model).trajectory
    return run


def _write_json(path, obj) -> None:
    text = dumps17(obj) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as f:
            f.write(text)


# ---------------------------------------------------------------- subcommands

def cmd_gen(cfg) -> None:
    model = _model(cfg)
    task = TASKS[cfg["task"]]
    if task == TASKS["reach"]:
        ds = generate_reach_problems(cfg["count"], cfg["seed"], model, val_fraction=cfg["val_fraction"])
    else:
        ds = generate_transfer_problems(cfg["count"], cfg["seed"], model, val_fraction=cfg["val_fraction"])
    ds.problems = _override_constraints(cfg, ds.problems)
    out = cfg["out"] or f"{cfg['task']}_{cfg['seed']}.jsonl"
    ds.save(out, meta=_effective(cfg))
    log.info("wrote %d problems to %s", len(ds), out)


def cmd_plan(cfg) -> None:
    model = _model(cfg)
    planner = _planner(cfg, model)
    problem = _load_problem(cfg)
    t0 = time.perf_counter()
    traj = planner(problem)
    elapsed = time.perf_counter() - t0
    m = validate_trajectory(traj, problem, model, cfg["n_dense"], elapsed)
    _write_json(cfg["out"], {"config": _effective(cfg), "problem": problem.to_json(),
                             "trajectory": traj.to_json(), "metrics": m.row()})


def cmd_train(cfg) -> None:
    model = _model(cfg)
    ds = _load_dataset(cfg)
    problems = ds.problems
    task = problems[0].task
    if any(p.task != task for p in problems):
        raise UsageError("training needs a single-task dataset")
    terms = problems[0].constraints
    out = cfg["out"] or "run"
    os.makedirs(out, exist_ok=True)
    tc = TrainConfig(lr=cfg["lr"], batch_size=cfg["batch"], epochs=cfg["epochs"],
                     N=cfg["quad_n"] or TrainConfig.N,
                     seed=cfg["seed"], budget_margin=cfg["budget_margin"])
    net = PlannerNetwork.init(model.n, Layout(), cfg["hidden"], cfg["seed"])
    alpha = default_alpha(task)
    metric = ManifoldMetric(alpha if len(alpha) == len(terms.terms) else np.zeros(len(terms.terms)))
    opt = None
    rows = []
    for epoch in range(tc.epochs):
        net, metric, stats = train_epoch(net, ds, model, terms, metric, tc, epoch, opt)
        opt = stats.optimizer_state
        rows.append(stats.row())
        log.info("epoch %d loss %.6g", epoch, stats.train_loss)
    ckpt = net.to_json(metric)
    ckpt["config"] = _effective(cfg)
    with open(os.path.join(out, "checkpoint.json"), "w") as f:
        f.write(dumps17(ckpt, indent=None) + "\n")
    with open(os.path.join(out, "epochs.csv"), "w", newline="") as f:
        f.write("# " + json.dumps(_effective(cfg), sort_keys=True) + "\n")
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for r in rows:
            w.writerow({k: fmt17(v) if isinstance(v, float) else v for k, v in r.items()})


def cmd_eval(cfg) -> None:
    model = _model(cfg)
    planner = _planner(cfg, model)
    ds = _load_dataset(cfg)
    report = evaluate_planner(planner, ds, model, cfg["n_dense"], config=_effective(cfg))
    out = cfg["out"] or "report"
    os.makedirs(out, exist_ok=True)
    write_report_csv(report, os.path.join(out, "report.csv"))
    write_report_json(report, os.path.join(out, "report.json"))
    log.info("success ratio %.3f", report.success_ratio)


def self_tests(seed: int = 0, model=None) -> list:
    """``[(name, passed, detail)]`` for the boundary, gradient and quadrature checks."""
    model = model or default_model()
    rng = np.random.default_rng(seed)
    lay = Layout()
    results = []

    consts = boundary_constants(lay)
    worst = 0.0
    for _ in range(50):
        bc = BoundaryConditions(*(rng.uniform(-1, 1, model.n) for _ in range(5)))
        traj = make_trajectory(bc, rng.uniform(0.5, 3.0, lay.C_r), rng.normal(0, 0.1, (lay.n_free, model.n)), lay)
        q0, dq0, ddq0 = kinematic_state_at_phase(traj, 0.0)
        q1, dq1, _ = kinematic_state_at_phase(traj, 1.0)
        for a, b in ((q0, bc.q0), (dq0, bc.dq0), (ddq0, bc.ddq0), (q1, bc.qd), (dq1, bc.dqd)):
            worst = max(worst, float(np.max(np.abs(a - b))))
    results.append(("boundary", worst < 1e-8, f"max residual {worst:.3g} (constants: {consts.source})"))

    p = generate_reach_problems(1, seed, model).problems[0]
    metric = ManifoldMetric(default_alpha(p.task))
    x = initial_guess(p, model) + rng.normal(0, 1e-2, Layout().n_free * model.n + lay.C_r)
    g = loss_gradient(x, p, metric, 64, model)
    obj = TrajectoryObjective(p, model, lay, 64)
    idx = rng.choice(len(x), 8, replace=False)
    err = 0.0
    for i in idx:
        h = 1e-6
        e = np.zeros_like(x)
        e[i] = h
        fd = (obj.value(x + e, metric.alpha) - obj.value(x - e, metric.alpha)) / (2 * h)
        err = max(err, abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-6))
    results.append(("gradient", err < 1e-4, f"max relative error {err:.3g}"))

    cset0 = ConstraintSet([], eta=0.0)
    traj = make_trajectory(p.bc, np.exp(x[-lay.C_r:]), x[:-lay.C_r].reshape(lay.n_free, model.n), lay,
                           free_is_offset=False)
    task = integrate_trajectory_loss(traj, model, cset0, N=512).task
    dur = duration(traj, 512)
    a = integrate_trajectory_loss(traj, model, p.constraints, N=512).total
    b = integrate_trajectory_loss(traj, model, p.constraints, N=1024).total
    ok = abs(task - dur) <= 1e-12 * max(1.0, dur) and abs(a - b) <= 1e-4 * abs(b)
    results.append(("quadrature", ok, f"|task-T|={abs(task - dur):.3g}, refinement {abs(a - b) / abs(b):.3g}"))
    return results


def cmd_check(cfg) -> None:
    results = self_tests(cfg["seed"], _model(cfg))
    report = {"config": _effective(cfg),
              "checks": [{"name": n, "passed": ok, "detail": d} for n, ok, d in results]}
    for n, ok, d in results:
        print(f"{'PASS' if ok else 'FAIL'} {n}: {d}", file=sys.stderr)
    if cfg["out"] is not None:
        _write_json(cfg["out"], report)
    if not all(ok for _, ok, _ in results):
        raise SelfTestFailure(", ".join(n for n, ok, _ in results if not ok))


COMMANDS = {"gen": cmd_gen, "plan": cmd_plan, "train": cmd_train, "eval": cmd_eval, "check": cmd_check}


def run(argv=None) -> int:
    try:
        cfg = resolve(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:  # argparse
        return 0 if exc.code in (0, None) else 2
    except UsageError as exc:
        print(f"kinoplan: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if cfg.get("verbose") else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        COMMANDS[cfg["command"]](cfg)
    except UsageError as exc:
        print(f"kinoplan: error: {exc}", file=sys.stderr)
        return 2
    except SelfTestFailure as exc:
        print(f"kinoplan: self-test failed: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"kinoplan: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())

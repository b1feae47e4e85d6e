import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from kinoplan import cli
from kinoplan.harness import Dataset
from kinoplan.harness.evaluation import validate_trajectory
from kinoplan.harness.problems import PlanningProblem
from kinoplan.robotmodel import default_model
from kinoplan.trajectory import PhaseTrajectory


def test_gen_is_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for out in (a, b):
        assert cli.run(["gen", "--task", "reach", "--count", "10", "--seed", "7", "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
    meta = json.loads(a.read_text().splitlines()[0])["meta"]
    assert meta["seed"] == 7 and meta["count"] == 10 and "version" in meta
    assert len(Dataset.load(a)) == 10


def test_transfer_gen(tmp_path):
    out = tmp_path / "t.jsonl"
    assert cli.run(["gen", "--task", "transfer", "--count", "3", "--seed", "1", "--out", str(out)]) == 0
    assert all(p.task == "transfer_with_orientation" for p in Dataset.load(out).problems)


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["gen", "--task", "juggle"],
    ["gen", "--count", "-3"],
    ["gen", "--count", "ten"],
    ["plan", "--problem", "/nonexistent.json"],
    ["plan"],
    ["eval", "--n-dense", "100", "--dataset", __file__],
    ["plan", "--planner", "network", "--problem", __file__],
])
def test_bad_arguments_exit_2(argv, capsys):
    assert cli.run(argv) == 2


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"count": 4, "seed": 3, "quad-n": 64}))
    resolved = cli.resolve(["gen", "--config", str(cfg), "--seed", "9"])
    assert resolved["count"] == 4 and resolved["seed"] == 9 and resolved["quad_n"] == 64
    cfg.write_text(json.dumps({"bogus": 1}))
    assert cli.run(["gen", "--config", str(cfg)]) == 2
    cfg.write_text("{not json")
    assert cli.run(["gen", "--config", str(cfg)]) == 2


def test_runtime_failure_exit_1(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"task": "reach_on_line"}\n')
    assert cli.run(["eval", "--dataset", str(bad), "--out", str(tmp_path / "r")]) == 1


def test_check_passes(tmp_path):
    out = tmp_path / "check.json"
    assert cli.run(["check", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert {c["name"] for c in report["checks"]} == {"boundary", "gradient", "quadrature"}
    assert all(c["passed"] for c in report["checks"])


def test_check_failure_exit_3(monkeypatch):
    monkeypatch.setattr(cli, "self_tests", lambda seed, model: [("boundary", False, "forced")])
    assert cli.run(["check"]) == 3


def test_plan_round_trip(tmp_path):
    data = tmp_path / "d.jsonl"
    cli.run(["gen", "--count", "2", "--seed", "5", "--out", str(data)])
    problem = Dataset.load(data).problems[1]
    pfile = tmp_path / "p.json"
    pfile.write_text(json.dumps(problem.to_json()))
    out = tmp_path / "plan.json"
    assert cli.run(["plan", "--direct", "--problem", str(pfile), "--max-iters", "200", "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    traj = PhaseTrajectory.from_json(d["trajectory"])
    m = validate_trajectory(traj, PlanningProblem.from_json(d["problem"]), default_model(), 1024)
    row = m.row()
    for k, v in d["metrics"].items():
        if k != "planning_time":
            assert row[k] == v, k
    assert d["config"]["planner"] == "direct" and d["config"]["seed"] == 0
    # the dataset form with --index resolves to the same problem
    out2 = tmp_path / "plan2.json"
    assert cli.run(["plan", "--problem", str(data), "--index", "1", "--max-iters", "200", "--out", str(out2)]) == 0
    assert json.loads(out2.read_text())["trajectory"] == d["trajectory"]
    assert cli.run(["plan", "--problem", str(data), "--index", "5"]) == 2


def test_train_then_eval_network(tmp_path):
    data = tmp_path / "d.jsonl"
    cli.run(["gen", "--count", "12", "--seed", "2", "--val-fraction", "0.25", "--out", str(data)])
    run_dir = tmp_path / "run"
    argv = ["train", "--dataset", str(data), "--epochs", "3", "--batch", "4", "--lr", "1e-4",
            "--quad-n", "32", "--hidden", "16", "--out", str(run_dir)]
    assert cli.run(argv) == 0
    ckpt = json.loads((run_dir / "checkpoint.json").read_text())
    assert ckpt["config"]["epochs"] == 3 and len(ckpt["alpha"]) == 4
    with open(run_dir / "epochs.csv") as f:
        lines = f.read().splitlines()
    assert lines[0].startswith("# ") and len(list(csv.DictReader(lines[1:]))) == 3

    rep = tmp_path / "rep"
    assert cli.run(["eval", "--dataset", str(data), "--planner", "network",
                    "--checkpoint", str(run_dir / "checkpoint.json"), "--out", str(rep)]) == 0
    summary = json.loads((rep / "report.json").read_text())
    assert summary["summary"]["count"] == 12
    assert summary["summary"]["max_boundary_residual"] < 1e-8
    assert summary["config"]["planner"] == "network"
    with open(rep / "report.csv") as f:
        assert len(list(csv.DictReader(f))) == 12


def test_inputs_not_mutated(tmp_path):
    data = tmp_path / "d.jsonl"
    cli.run(["gen", "--count", "3", "--seed", "4", "--out", str(data)])
    before = data.read_bytes()
    cli.run(["eval", "--dataset", str(data), "--max-iters", "5", "--out", str(tmp_path / "r")])
    assert data.read_bytes() == before


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "kinoplan", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "check" in r.stdout
    r = subprocess.run([sys.executable, "-m", "kinoplan", "gen", "--nope"], capture_output=True, text=True)
    assert r.returncode == 2

import json
from importlib import resources

import jsonschema
import pytest

from formnav import cli
from formnav.persist import load_checkpoint
from formnav.ppo import TrainResult
from formnav.world import Scenario, build_corridor

SMALL = ["--steps", "256", "--n-envs", "2", "--n-steps", "64", "--eval-every", "2", "--max-steps", "60"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train") / "run"
    assert cli.main(["train", *SMALL, "--out", str(out)]) == 0
    return out


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_scenario_round_trip(tmp_path):
    out = tmp_path / "s.json"
    assert run("scenario", "--formation", "wedge", "--out", out) == 0
    sc = Scenario.from_json(out.read_text())
    assert sc.to_json() == build_corridor(5, "wedge", 6.0, 2.0, 20.0, 4.0).to_json()


def test_infeasible_geometry_exit_code(tmp_path, capsys):
    assert run("scenario", "--narrow", "0.2", "--out", tmp_path / "s.json") == cli.EXIT_GEOMETRY
    assert "error" in capsys.readouterr().err
    assert not (tmp_path / "s.json").exists()


def test_zero_step_train_writes_checkpoints(tmp_path):
    assert run("train", "--steps", "0", "--out", tmp_path) == 0
    assert (tmp_path / "train.jsonl").read_text() == ""
    params, config, steps = load_checkpoint(tmp_path / "final.ckpt.json")
    assert steps == 0 and config.method == "afor"
    assert (tmp_path / "best.ckpt.json").read_bytes() == (tmp_path / "final.ckpt.json").read_bytes()


def test_bl_checkpoint_records_ablation(tmp_path):
    assert run("train", "--steps", "0", "--method", "bl", "--out", tmp_path) == 0
    _, config, _ = load_checkpoint(tmp_path / "final.ckpt.json")
    assert config.method == "bl" and config.reward.w_adapt == 0.0


def test_training_flags_reach_checkpoint_config(tmp_path):
    assert run("train", "--steps", "0", "--lr", "1e-3", "--anneal-lr", "--c-v", "0.05", "--c-e", "0",
               "--eval-seeds", "4", "--no-curriculum", "--goal-shift", "0.5", "--out", tmp_path) == 0
    _, config, _ = load_checkpoint(tmp_path / "final.ckpt.json")
    ppo = config.ppo
    assert (ppo.lr, ppo.anneal_lr, ppo.c_v, ppo.c_e, ppo.curriculum) == (1e-3, True, 0.05, 0.0, False)
    assert ppo.eval_seeds == (1000, 1001, 1002, 1003) and ppo.goal_shift == 0.5


def test_divergence_exit_code(tmp_path, monkeypatch):
    def fake_train(scenarios, ppo_config, reward_config, seed=0, params=None, callback=None):
        from formnav.policy import init_params
        p = init_params(seed)
        return TrainResult(params=p, best_params=p, log=[], env_steps=128, diverged=True)
    monkeypatch.setattr(cli, "train", fake_train)
    assert run("train", "--steps", "128", "--out", tmp_path) == cli.EXIT_TRAINING
    assert (tmp_path / "final.ckpt.json").exists()


def test_train_log_is_deterministic(trained, tmp_path):
    assert run("train", *SMALL, "--out", tmp_path) == 0
    assert (tmp_path / "train.jsonl").read_bytes() == (trained / "train.jsonl").read_bytes()
    recs = [json.loads(line) for line in (trained / "train.jsonl").read_text().splitlines()]
    assert [r["iter"] for r in recs] == [0, 1]
    assert set(recs[0]) == {"iter", "env_steps", "mean_return", "sr_eval", "cfi_eval", "loss",
                            "clip_frac", "kl", "entropy", "wall_ms"}
    assert recs[1]["sr_eval"] is not None and recs[0]["sr_eval"] is None


def test_eval_outputs_and_schema(trained, tmp_path, capsys):
    out = tmp_path / "ev"
    assert run("eval", "--ckpt", trained / "final.ckpt.json", "--seeds", 10, "--out", out, "--table") == 0
    table = capsys.readouterr().out.splitlines()
    assert [c.strip() for c in table[0].split("|")] == ["Method", "SR (%)", "δ<0.5", "δ<0.3", "δ<0.1", "δ<0.03"]
    doc = json.loads((out / "metrics.json").read_text())
    schema = json.loads(resources.files("formnav").joinpath("schemas/metrics.schema.json").read_text())
    jsonschema.validate(doc, schema)
    assert doc["seeds"] == list(range(10)) and len(doc["per_seed"]) == 10
    assert sorted(p.name for p in out.glob("traj_seed*.csv")) == sorted(f"traj_seed{s}.csv" for s in range(10))
    again = tmp_path / "ev2"
    run("eval", "--ckpt", trained / "final.ckpt.json", "--seeds", 10, "--out", again)
    assert (again / "traj_seed3.csv").read_bytes() == (out / "traj_seed3.csv").read_bytes()


def test_lf_eval_needs_no_checkpoint(tmp_path):
    assert run("eval", "--method", "lf", "--formation", "wedge", "--seeds", 2, "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "metrics.json").read_text())
    assert doc["method"] == "lf" and "wedge" in doc["scenario"]


def test_policy_eval_without_checkpoint_fails(tmp_path):
    assert run("eval", "--method", "afor", "--out", tmp_path) == cli.EXIT_CHECKPOINT


def test_bad_checkpoints(tmp_path, trained):
    assert run("eval", "--ckpt", tmp_path / "missing.json", "--out", tmp_path) == cli.EXIT_IO
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert run("eval", "--ckpt", bad, "--out", tmp_path) == cli.EXIT_CHECKPOINT
    doc = json.loads((trained / "final.ckpt.json").read_text())
    doc["params"] = [p for p in doc["params"] if p["name"] != "gnn.0.W"]
    bad.write_text(json.dumps(doc))
    assert run("eval", "--ckpt", bad, "--out", tmp_path) == cli.EXIT_CHECKPOINT


def test_generalize(trained, tmp_path):
    out = tmp_path / "g.json"
    ckpt = trained / "final.ckpt.json"
    assert run("generalize", "--ckpt", ckpt, "--formation", "wedge", "--seeds", 2,
               "--sizes", "3,5,7,9", "--out", out) == 0
    doc = json.loads(out.read_text())
    assert [e["n"] for e in doc["sizes"]] == [3, 5, 7, 9]
    assert len({e["params_digest"] for e in doc["sizes"]}) == 1
    assert all(e["wide"] >= 6.0 for e in doc["sizes"])
    assert run("generalize", "--ckpt", ckpt, "--formation", "wedge", "--sizes", "3,4",
               "--out", out) == cli.EXIT_GEOMETRY


def test_plot_data(trained, tmp_path):
    ev = tmp_path / "ev"
    run("eval", "--method", "lf", "--seeds", 1, "--out", ev)
    out = tmp_path / "plot.json"
    assert run("plot-data", "--traj", ev / "traj_seed0.csv", "--out", out) == 0
    doc = json.loads(out.read_text())
    assert len(doc["robots"]) == 5
    assert len(doc["walls"]) == 8
    times = [s["t"] for s in doc["snapshots"]]
    assert times == sorted(set(times))
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert run("plot-data", "--traj", empty, "--out", out) == cli.EXIT_IO
    assert run("plot-data", "--traj", tmp_path / "nope.csv", "--out", out) == cli.EXIT_IO


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("FORMNAV_THREADS", "2")
    assert cli.worker_count(8) == 2
    monkeypatch.delenv("FORMNAV_THREADS")
    assert cli.worker_count(3) == 3

import csv
import json

import numpy as np
import pytest
import yaml

from marlflow.cli import main
from marlflow.dataflow import collect_episode
from marlflow.envs import make_env
from marlflow.errors import ConfigurationError
from marlflow.runner import (Trainer, config_from_yaml, config_to_yaml, evaluate, load_checkpoint, load_config,
                             parse_override, record_config, train)
from marlflow.runner.config import RunConfig
from marlflow.runner.plotting import collect_runs, emit_curves, seed_band
from marlflow.runner.train import _Greedy


def small(*extra, algo="iql", steps=200):
    return load_config(overrides=[f"algorithm.name={algo}", f"training.total_steps={steps}",
                                  "training.eval_interval=100", "training.eval_episodes=2", *extra])


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# -- config ------------------------------------------------------------------------


def test_defaults_fill_every_section():
    cfg = load_config()
    assert cfg.to_dict().keys() == {"task", "algorithm", "model", "training"}
    assert cfg.algorithm.gamma == 0.99 and cfg.model.hidden == [64, 64] and cfg.training.seeds == [0]
    assert cfg.algorithm.eps_decay_steps == cfg.training.total_steps // 2


def test_cli_overrides_beat_files(tmp_path):
    f1, f2 = tmp_path / "a.yaml", tmp_path / "b.yaml"
    f1.write_text("algorithm: {gamma: 0.9, lam: 0.5}\n")
    f2.write_text("algorithm: {lam: 0.7}\ntask: {env_config: {horizon: 3}}\n")
    cfg = load_config([f1, f2], ["algorithm.gamma=0.8", {"task": {"env_config": {"preset": "coordination"}}}])
    assert cfg.algorithm.gamma == 0.8 and cfg.algorithm.lam == 0.7
    assert cfg.task.env_config == {"horizon": 3, "preset": "coordination"}


def test_unknown_key_suggests_closest():
    with pytest.raises(ConfigurationError, match="did you mean 'gamma'"):
        load_config(overrides=["algorithm.gama=0.9"])
    with pytest.raises(ConfigurationError, match="section"):
        load_config(overrides=[{"algorythm": {"gamma": 0.9}}])


def test_type_and_range_errors(tmp_path):
    for bad in ["algorithm.gamma=fast", "training.total_steps=1.5", "training.seeds=3", "model.hidden=[0]",
                "algorithm.gamma=2.0", "training.sharing=some", "model.kind=tabular"]:
        with pytest.raises(ConfigurationError):
            load_config(overrides=[bad])
    broken = tmp_path / "x.yaml"
    broken.write_text("algorithm: [unclosed\n")
    with pytest.raises(ConfigurationError):
        load_config([broken])
    with pytest.raises(ConfigurationError):
        parse_override("gamma")


def test_recorded_config_round_trips_with_overrides(tmp_path):
    cfg = small("algorithm.gamma=0.8", "training.seeds=[3, 4]")
    path = record_config(cfg, tmp_path)
    back = config_from_yaml(path.read_text())
    assert back == cfg
    assert yaml.safe_load(path.read_text())["algorithm"]["gamma"] == 0.8
    assert config_to_yaml(back) == config_to_yaml(cfg)


# -- training ------------------------------------------------------------------------


def test_zero_steps_emits_initial_eval_only(tmp_path):
    hist = Trainer(small(steps=0), out_dir=tmp_path).run()
    assert hist.metrics == [] and len(hist.evals) == 1
    assert len(read_csv(tmp_path / "eval.csv")) == 1
    assert read_csv(tmp_path / "metrics.csv") == []


def test_metrics_rows_increase_in_env_steps(tmp_path):
    hist = Trainer(small(algo="mappo", steps=300), out_dir=tmp_path).run()
    steps = [r["env_steps"] for r in hist.metrics]
    assert all(b > a for a, b in zip(steps, steps[1:]))
    rows = read_csv(tmp_path / "metrics.csv")
    assert [int(r["iteration"]) for r in rows] == list(range(1, len(rows) + 1))
    assert {"reward_team", "reward_sum", "loss_actor_loss"} <= rows[0].keys()
    assert len(read_csv(tmp_path / "timing.csv")) == len(rows)
    assert (tmp_path / "checkpoints" / "final.npz").exists()


def test_same_config_and_seed_give_identical_metrics(tmp_path):
    for name in ("a", "b"):
        Trainer(small(algo="qmix", steps=400), seed=5, out_dir=tmp_path / name).run()
    assert (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()
    assert (tmp_path / "a/eval.csv").read_bytes() == (tmp_path / "b/eval.csv").read_bytes()


def test_parallel_workers_match_single_worker(tmp_path):
    one = Trainer(small(algo="ippo", steps=200)).run()
    two = Trainer(small("training.workers=3", algo="ippo", steps=200)).run()
    assert one.metrics == two.metrics


def test_evaluate_is_pure_and_deterministic():
    env = make_env("matrix", {"preset": "matching_pennies"})
    trainer = Trainer(small("task.env_config={preset: matching_pennies}", algo="iql"))
    before = trainer.algo.checksum()
    res = evaluate(trainer.algo, env, 3, seed=0)
    assert trainer.algo.checksum() == before
    assert res["sum"] == 0.0 and set(res) == {"a0", "a1", "sum"}
    assert evaluate(trainer.algo, env, 3, seed=0) == res


def test_evaluate_one_episode_equals_a_collected_episode():
    trainer = Trainer(small(algo="mappo"))
    env = make_env("matrix")
    res = evaluate(trainer.algo, env, 1, seed=0)
    actors = {pid: _Greedy(trainer.algo, pid) for pid in trainer.policy_map.policy_ids}
    bufs = collect_episode(env, actors, trainer.policy_map, np.random.default_rng(1), seed=2)
    assert res["team"] == pytest.approx(np.mean([b.total_reward for b in bufs.values()]))


def test_train_writes_per_seed_dirs(tmp_path):
    cfg = small("training.seeds=[0, 1]", "training.run_name=demo")
    results = train(cfg, out_root=tmp_path)
    assert set(results) == {0, 1}
    assert (tmp_path / "demo/config.yaml").exists()
    assert (tmp_path / "demo/seed_1/metrics.csv").exists()


def test_checkpoint_reload_reproduces_greedy_eval(tmp_path):
    trainer = Trainer(small(algo="qmix", steps=300), out_dir=tmp_path)
    trainer.run()
    algo, cfg, header = load_checkpoint(tmp_path / "checkpoints/final.npz")
    assert header["env_steps"] == trainer.env_steps and cfg == trainer.cfg
    assert algo.checksum() == trainer.algo.checksum()
    env = make_env("matrix")
    assert evaluate(algo, env, 2, 0) == evaluate(trainer.algo, env, 2, 0)


def test_transition_dump(tmp_path):
    Trainer(small("training.dump_transitions=true", steps=40), out_dir=tmp_path).run()
    lines = (tmp_path / "transitions.jsonl").read_text().splitlines()
    assert len(lines) == 80 and json.loads(lines[0])["iteration"] == 1


# -- plotting ------------------------------------------------------------------------


def test_emit_curves_band_and_groups(tmp_path):
    cfg = small("training.seeds=[0, 1, 2]", "task.env_config={preset: team_2v2}", "training.sharing=group",
                "training.run_name=mixed")
    train(cfg, out_root=tmp_path / "runs")
    summary = emit_curves(tmp_path / "runs", tmp_path / "plots")
    assert (tmp_path / "plots/mixed.png").exists()
    rows = read_csv(summary)
    assert [r["group"] for r in rows] == ["red", "blue", "sum"]
    curves = collect_runs(tmp_path / "runs")["mixed"]
    steps, mean, lo, hi = seed_band(curves, "red")
    stacked = np.stack([g["red"] for _, g in curves])
    np.testing.assert_allclose(lo, stacked.min(axis=0))
    np.testing.assert_allclose(hi, stacked.max(axis=0))


def test_single_seed_band_collapses(tmp_path):
    train(small("training.run_name=solo"), out_root=tmp_path)
    _, mean, lo, hi = seed_band(collect_runs(tmp_path)["solo"], "team")
    np.testing.assert_array_equal(lo, mean)
    np.testing.assert_array_equal(hi, mean)


def test_emit_curves_rejects_empty(tmp_path):
    with pytest.raises(ConfigurationError):
        emit_curves(tmp_path, tmp_path / "out")


# -- cli -----------------------------------------------------------------------------


def test_cli_train_eval_plot(tmp_path, capsys):
    out = tmp_path / "runs"
    assert main(["train", "--algo", "iql", "--env", "matrix", "--scenario", "coordination", "--sharing", "full",
                 "--seed", "0", "--steps", "100", "--workers", "1", "--out", str(out)]) == 0
    ckpt = out / "iql_matrix/seed_0/checkpoints/final.npz"
    assert main(["eval", "--checkpoint", str(ckpt), "--episodes", "2"]) == 0
    assert json.loads(capsys.readouterr().out.splitlines()[-1])["env_steps"] == 100
    assert main(["plot", "--in", str(out), "--out", str(tmp_path / "plots")]) == 0


def test_cli_validate_exit_codes(tmp_path):
    report = tmp_path / "r.json"
    assert main(["validate", "--env", "turn_game", "--episodes", "5", "--seed", "1", "--report", str(report)]) == 0
    assert json.loads(report.read_text()) == []
    assert main(["validate", "--env", "nope"]) == 1


def test_cli_config_and_runtime_errors(tmp_path, capsys):
    assert main(["train", "--set", "algorithm.gama=0.9", "--out", str(tmp_path)]) == 1
    assert "gamma" in capsys.readouterr().err
    assert main(["train", "--algo", "vdn", "--env", "turn_game", "--out", str(tmp_path)]) == 1
    assert main(["plot", "--in", str(tmp_path / "none"), "--out", str(tmp_path / "p")]) == 1


def test_cli_runtime_failure_exit_code(tmp_path, monkeypatch):
    from marlflow.errors import NumericError
    from marlflow.algos.qlearning import QLearning

    def boom(self, episodes, env_steps):
        raise NumericError("non-finite gradient in tensor W0")

    monkeypatch.setattr(QLearning, "train_iteration", boom)
    assert main(["train", "--algo", "iql", "--steps", "50", "--out", str(tmp_path)]) == 2


def test_runconfig_name():
    assert RunConfig().name == "mappo_matrix"

"""Training loop, evaluation and metrics persistence."""
from __future__ import annotations

import copy
import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..algos import make_algorithm
from ..dataflow import collect_episode, dump_transitions
from ..envs import make_env
from ..errors import MarlflowError
from ..mapping import build_policy_map
from .checkpoint import save_checkpoint
from .config import RunConfig, config_to_yaml, record_config

log = logging.getLogger(__name__)


class TrainingError(MarlflowError):
    def __init__(self, message, iteration=None, phase=None):
        super().__init__(f"iteration {iteration}, phase {phase}: {message}")
        self.iteration = iteration
        self.phase = phase


def group_rewards(spec, agent_totals: dict) -> dict:
    """Per-group mean of agent episode rewards, plus their sum under ``"sum"``."""
    out = {}
    for label in spec.group_labels():
        members = [a for a in spec.agents if spec.groups[a] == label]
        out[label] = float(np.mean([agent_totals[a] for a in members]))
    out["sum"] = float(sum(out[label] for label in spec.group_labels()))
    return out


def _mean_rows(spec, rows: list[dict]) -> dict:
    out = {label: float(np.mean([r[label] for r in rows])) for label in spec.group_labels()}
    out["sum"] = float(sum(out[label] for label in spec.group_labels()))
    return out


class _Greedy:
    def __init__(self, algo, pid):
        self.algo, self.pid = algo, pid

    def act(self, bundles, agent_ids, rng):
        return [(a, 0.0) for a in self.algo.greedy_actions(self.pid, bundles)]


def episode_seed(base_seed: int, index: int, stream: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([base_seed, stream, index])


def evaluate(algo, env, n_episodes: int, seed: int) -> dict:
    """Greedy rollouts; returns per-group mean episode reward and their sum.

    Parameters are only read.
    """
    actors = {pid: _Greedy(algo, pid) for pid in algo.policy_map.policy_ids}
    rows = []
    for k in range(n_episodes):
        ss = episode_seed(seed, k, stream=1)
        env_seed, act_seed = ss.spawn(2)
        bufs = collect_episode(env, actors, algo.policy_map, np.random.default_rng(act_seed),
                               seed=int(env_seed.generate_state(1)[0]))
        rows.append(group_rewards(env.spec, {a: b.total_reward for a, b in bufs.items()}))
    return _mean_rows(env.spec, rows)


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


@dataclass
class History:
    metrics: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    out_dir: Path | None = None


class Trainer:
    def __init__(self, cfg: RunConfig, seed: int | None = None, out_dir=None, hooks=(), algo_kwargs=None):
        self.cfg = cfg
        self.seed = cfg.training.seeds[0] if seed is None else seed
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.env = make_env(cfg.task.env, cfg.task.env_config)
        self.eval_env = make_env(cfg.task.env, cfg.task.env_config)
        self.spec = self.env.spec
        self.policy_map = build_policy_map(self.spec, cfg.training.sharing, cfg.training.custom_mapping)
        self.algo = make_algorithm(cfg.algorithm, self.spec, self.policy_map, hidden=cfg.model.hidden,
                                   seed=np.random.SeedSequence([self.seed, 2]), model_kind=cfg.model.kind,
                                   **(algo_kwargs or {}))
        self.algo.hooks.extend(hooks)
        self.envs = [self.env] + [make_env(cfg.task.env, cfg.task.env_config)
                                  for _ in range(cfg.training.workers - 1)]
        self.env_steps = 0
        self.episodes_done = 0
        self.iteration = 0
        self.history = History(out_dir=self.out_dir)
        self.labels = self.spec.group_labels()

    # -- collection --------------------------------------------------------------
    def _collect_one(self, env, policies, index):
        ss = episode_seed(self.seed, index)
        env_seed, act_seed = ss.spawn(2)
        return collect_episode(env, policies, self.policy_map, np.random.default_rng(act_seed),
                               seed=int(env_seed.generate_state(1)[0]))

    def collect(self, n: int) -> list[dict]:
        """Collect ``n`` episodes; episode i always uses the seeds of global episode index i."""
        start = self.episodes_done
        k = len(self.envs)
        if k == 1:
            episodes = [self._collect_one(self.env, self.algo.policies, start + i) for i in range(n)]
        else:
            snapshot = copy.deepcopy(self.algo.policies)

            def work(w):
                return [(i, self._collect_one(self.envs[w], snapshot, start + i)) for i in range(w, n, k)]

            with ThreadPoolExecutor(max_workers=k) as pool:
                results = [item for part in pool.map(work, range(k)) for item in part]
            episodes = [ep for _, ep in sorted(results, key=lambda x: x[0])]
        self.episodes_done += n
        return episodes

    # -- persistence -------------------------------------------------------------
    def _metric_fields(self):
        return (["iteration", "env_steps", "episodes"] + [f"reward_{g}" for g in self.labels] + ["reward_sum"]
                + [f"loss_{n}" for n in self.algo.loss_names])

    def _eval_fields(self):
        return ["iteration", "env_steps"] + [f"reward_{g}" for g in self.labels] + ["reward_sum"]

    def _write_row(self, name, fieldnames, row):
        if self.out_dir is None:
            return
        path = self.out_dir / name
        new = not path.exists()
        with path.open("a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(fieldnames)
            w.writerow([_fmt(row.get(f, "")) for f in fieldnames])

    def _evaluate(self):
        res = evaluate(self.algo, self.eval_env, self.cfg.training.eval_episodes, self.seed)
        row = {"iteration": self.iteration, "env_steps": self.env_steps, "reward_sum": res["sum"]}
        row.update({f"reward_{g}": res[g] for g in self.labels})
        self.history.evals.append(row)
        self._write_row("eval.csv", self._eval_fields(), row)
        return row

    def _checkpoint(self, tag):
        if self.out_dir is not None and self.cfg.training.checkpoint:
            save_checkpoint(self.out_dir / "checkpoints" / f"{tag}.npz", self.algo, self.cfg, self.seed,
                            self.env_steps)

    # -- main loop ---------------------------------------------------------------
    def run(self) -> History:
        cfg = self.cfg
        t = cfg.training
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            for name in ("metrics.csv", "eval.csv", "timing.csv", "transitions.jsonl"):
                (self.out_dir / name).unlink(missing_ok=True)
            record_config(cfg, self.out_dir)
            self._write_header()
        start = time.perf_counter()
        self._evaluate()
        next_eval = t.eval_interval
        decay = cfg.algorithm.eps_decay_steps or 0
        while self.env_steps < t.total_steps:
            self.iteration += 1
            phase = "collect"
            try:
                self.algo.set_exploration(self.env_steps, decay)
                episodes = self.collect(cfg.algorithm.episodes_per_iter)
                self.env_steps += sum(max(b.env_steps for b in ep.values()) for ep in episodes)
                if t.dump_transitions and self.out_dir is not None:
                    for ep in episodes:
                        dump_transitions(ep, self.out_dir / "transitions.jsonl", self.iteration)
                phase = "update"
                losses = self.algo.train_iteration(episodes, self.env_steps)
            except MarlflowError as exc:
                raise TrainingError(str(exc), self.iteration, phase) from exc
            rewards = _mean_rows(self.spec, [group_rewards(self.spec, {a: b.total_reward for a, b in ep.items()})
                                             for ep in episodes])
            row = {"iteration": self.iteration, "env_steps": self.env_steps, "episodes": len(episodes),
                   "reward_sum": rewards["sum"]}
            row.update({f"reward_{g}": rewards[g] for g in self.labels})
            row.update({f"loss_{n}": losses.get(n, float("nan")) for n in self.algo.loss_names})
            self.history.metrics.append(row)
            self._write_row("metrics.csv", self._metric_fields(), row)
            self._write_row("timing.csv", ["iteration", "wall_seconds"],
                            {"iteration": self.iteration, "wall_seconds": round(time.perf_counter() - start, 3)})
            if self.env_steps >= next_eval or self.env_steps >= t.total_steps:
                self._evaluate()
                self._checkpoint(f"step_{self.env_steps:08d}")
                while next_eval <= self.env_steps:
                    next_eval += t.eval_interval
        self._checkpoint("final")
        log.info("finished %s seed %s after %d env steps", cfg.name, self.seed, self.env_steps)
        return self.history

    def _write_header(self):
        with (self.out_dir / "metrics.csv").open("w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(self._metric_fields())


def train(cfg: RunConfig, out_root=None, hooks=()) -> dict:
    """Train once per configured seed. Returns {seed: History}.

    Output layout: ``<out_root>/<run name>/config.yaml`` plus one
    ``seed_<s>/`` directory per seed holding metrics.csv, eval.csv,
    timing.csv, config.yaml and checkpoints/.
    """
    root = Path(out_root if out_root is not None else cfg.training.out_dir) / cfg.name
    record_config(cfg, root)
    results = {}
    for s in cfg.training.seeds:
        results[s] = Trainer(cfg, seed=s, out_dir=root / f"seed_{s}", hooks=hooks).run()
    return results


__all__ = ["Trainer", "train", "evaluate", "group_rewards", "TrainingError", "config_to_yaml"]

"""Command line entry point: ``marlflow train | validate | plot | eval``.

Exit codes: 0 success, 1 invalid configuration (including an algorithm
that cannot run on the chosen task) or failed validation, 2 runtime
failure during training.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .envs import make_env
from .errors import ConfigurationError, MarlflowError, ModeError
from .interface import check_conformance
from .mapping import SharingMode

log = logging.getLogger("marlflow")


def _train_overrides(args) -> list:
    ov = []
    if args.algo:
        ov.append({"algorithm": {"name": args.algo}})
    if args.env:
        ov.append({"task": {"env": args.env}})
    if args.scenario:
        ov.append({"task": {"env_config": {"preset": args.scenario}}})
    training = {}
    if args.sharing:
        training["sharing"] = args.sharing
    if args.seed:
        training["seeds"] = args.seed
    if args.steps is not None:
        training["total_steps"] = args.steps
    if args.workers is not None:
        training["workers"] = args.workers
    if args.dump_transitions:
        training["dump_transitions"] = True
    if training:
        ov.append({"training": training})
    return ov + list(args.set)


def cmd_train(args) -> int:
    from .runner import load_config, train

    cfg = load_config(args.config, _train_overrides(args))
    out = Path(args.out) if args.out else None
    results = train(cfg, out_root=out)
    for seed, hist in results.items():
        final = hist.evals[-1]["reward_sum"] if hist.evals else float("nan")
        print(f"seed {seed}: final eval reward {final:.4f} -> {hist.out_dir}")
    return 0


def cmd_validate(args) -> int:
    env = make_env(args.env, _load_env_config(args.env_config))
    report = check_conformance(env, n_episodes=args.episodes, seed=args.seed, name=args.env)
    print(report.format())
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_records(), indent=2))
    return 0 if report.passed else 1


def _load_env_config(text):
    if not text:
        return {}
    import yaml

    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigurationError("--env-config must be a YAML mapping")
    return data


def cmd_plot(args) -> int:
    from .runner.plotting import emit_curves

    path = emit_curves(args.in_dir, args.out)
    print(f"wrote {path}")
    return 0


def cmd_eval(args) -> int:
    from .runner import evaluate, load_checkpoint

    algo, cfg, header = load_checkpoint(args.checkpoint)
    env = make_env(cfg.task.env, cfg.task.env_config)
    res = evaluate(algo, env, args.episodes, args.seed)
    print(json.dumps({"env_steps": header["env_steps"], **res}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="marlflow", description="Multi-agent RL training on small built-in tasks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one configuration over one or more seeds")
    t.add_argument("--config", action="append", default=[], help="YAML file; later files win")
    t.add_argument("--algo")
    t.add_argument("--env")
    t.add_argument("--scenario", help="env preset, e.g. coordination or matching_pennies")
    t.add_argument("--sharing", choices=[m.value for m in SharingMode])
    t.add_argument("--seed", type=int, action="append", default=[], help="repeat for several seeds")
    t.add_argument("--steps", type=int)
    t.add_argument("--workers", type=int)
    t.add_argument("--out")
    t.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    t.add_argument("--dump-transitions", action="store_true")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("validate", help="run the interface conformance checker on an env")
    v.add_argument("--env", required=True)
    v.add_argument("--env-config", help="YAML mapping of env options")
    v.add_argument("--episodes", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--report", help="write violations as JSON here")
    v.set_defaults(func=cmd_validate)

    g = sub.add_parser("plot", help="learning curves and a summary table from run directories")
    g.add_argument("--in", dest="in_dir", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_plot)

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ModeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (MarlflowError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

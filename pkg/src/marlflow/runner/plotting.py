"""Learning curves and a summary table from run directories."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError


def read_metrics(path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """env_steps column and one reward column per group label (``reward_<label>``, plus ``sum``)."""
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return np.zeros(0), {}
    steps = np.array([float(r["env_steps"]) for r in rows])
    groups = {k[len("reward_"):]: np.array([float(r[k]) for r in rows]) for k in rows[0] if k.startswith("reward_")}
    return steps, groups


def collect_runs(in_dir, filename="metrics.csv") -> dict[str, list]:
    """Map each scenario (the directory holding seed_* folders) to its per-seed curves."""
    in_dir = Path(in_dir)
    scenarios: dict[str, list] = {}
    for path in sorted(in_dir.rglob(filename)):
        run_dir = path.parent.parent if path.parent.name.startswith("seed_") else path.parent
        name = run_dir.relative_to(in_dir).as_posix() if run_dir != in_dir else in_dir.name
        steps, groups = read_metrics(path)
        if len(steps):
            scenarios.setdefault(name, []).append((steps, groups))
    return scenarios


def seed_band(curves, label) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-seed curves resampled onto the first seed's steps: (steps, mean, min, max)."""
    end = min(s[-1] for s, _ in curves)
    steps = curves[0][0][curves[0][0] <= end]
    r = np.stack([np.interp(steps, s, g[label]) for s, g in curves])
    return steps, r.mean(axis=0), r.min(axis=0), r.max(axis=0)


def emit_curves(in_dir, out_dir) -> Path:
    """One PNG per scenario with a mean line and min/max band per group, plus summary.csv."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    scenarios = collect_runs(in_dir)
    if not scenarios:
        raise ConfigurationError(f"no non-empty metrics.csv files found under {in_dir}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for name, curves in scenarios.items():
        labels = [g for g in curves[0][1] if g != "sum"]
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for label in labels + (["sum"] if len(labels) > 1 else []):
            steps, mean, lo, hi = seed_band(curves, label)
            ax.plot(steps, mean, label=label)
            ax.fill_between(steps, lo, hi, alpha=0.25)
            finals = np.array([g[label][-1] for _, g in curves])
            summary.append([name, label, len(curves), int(steps[-1]), repr(float(finals.mean())),
                            repr(float(finals.min())), repr(float(finals.max()))])
        ax.set_xlabel("env steps")
        ax.set_ylabel("mean episode reward")
        ax.set_title(f"{name} ({len(curves)} seed{'s' if len(curves) > 1 else ''})")
        ax.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(out / f"{name.replace('/', '__')}.png", dpi=100)
        plt.close(fig)
    path = out / "summary.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "group", "seeds", "final_env_steps", "final_mean", "final_min", "final_max"])
        w.writerows(summary)
    return path

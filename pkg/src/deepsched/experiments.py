"""Desk-scale experiment: train the three deep schedulers, then evaluate them
against the heuristics and the random policy on held-out seeds."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kpi
from .config import RunConfig, load_config
from .runner import TrainResult, evaluate, train

TRAINED = ("ppo-1l", "sacd-2l", "dsacd-1l")
REFERENCE = ("baseline", "pf-greedy", "random")


def load_desk(config_dir: str | Path) -> tuple[RunConfig, dict[str, RunConfig]]:
    """desk.yaml for evaluation plus desk_<scheduler>.yaml per trained scheduler."""
    d = Path(config_dir)
    base = load_config(d / "desk.yaml")
    runs = {name: load_config(d / f"desk_{name.replace('-', '_')}.yaml") for name in TRAINED}
    return base, runs


@dataclass
class DeskReport:
    seeds: list
    geomeans: dict = field(default_factory=dict)        # scheduler -> per-seed geomeans
    pooled: dict = field(default_factory=dict)          # scheduler -> geomean over all UEs of all seeds
    training: dict = field(default_factory=dict)        # scheduler -> TrainResult
    seconds: dict = field(default_factory=dict)

    def ratio(self, name: str, ref: str) -> float:
        return self.pooled[name] / self.pooled[ref]

    @property
    def total_seconds(self) -> float:
        return float(sum(self.seconds.values()))

    def table(self) -> str:
        base = self.pooled["baseline"]
        lines = [f"{'scheduler':<10} {'geomean':>10} {'/baseline':>10} {'/random':>8}  per-seed (Mbit/s)"]
        for name, g in self.pooled.items():
            per = " ".join(f"{x / 1e6:.3f}" for x in self.geomeans[name])
            lines.append(f"{name:<10} {g / 1e6:>10.3f} {g / base:>10.3f} "
                         f"{self.ratio(name, 'random'):>8.3f}  {per}")
        return "\n".join(lines)


def run_desk(eval_run: RunConfig, train_runs: dict[str, RunConfig], train_seed: int = 0,
             log=print) -> DeskReport:
    """Train each scheduler in `train_runs` with its own hyperparameters, then evaluate
    all of them and the reference schedulers on eval_run.eval.seeds."""
    seeds = list(eval_run.eval.seeds)
    if train_seed in seeds:
        raise ValueError("training seed must not be an evaluation seed")
    rep = DeskReport(seeds)
    actors = {}
    for name, run in train_runs.items():
        if run.sim != eval_run.sim:
            raise ValueError(f"{name}: training system differs from the evaluation system")
        algo, arch = name.split("-")
        t0 = time.perf_counter()
        res: TrainResult = train(run, algo, arch, seed=train_seed)
        rep.training[name] = res
        rep.seconds[f"train {name}"] = time.perf_counter() - t0
        actors[name] = res.actor
        if log:
            log(f"trained {name} in {rep.seconds[f'train {name}']:.0f} s")
    for name in (*REFERENCE, *train_runs):
        t0 = time.perf_counter()
        results = evaluate(eval_run.sim, name, seeds, eval_run.eval.eval_ttis, actors.get(name),
                           eval_run.eval.workers)
        rep.seconds[f"eval {name}"] = time.perf_counter() - t0
        rep.geomeans[name] = np.array([kpi.geomean(r.tput) for r in results])
        rep.pooled[name] = kpi.geomean(np.concatenate([r.tput for r in results]))
    return rep

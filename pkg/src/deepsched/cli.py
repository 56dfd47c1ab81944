"""Command line: train, eval, bench and export.

Exit codes: 0 ok, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import kpi
from .bench import HEADER as BENCH_HEADER, bench
from .config import ConfigError, RunConfig, load_config
from .neuralnet import CheckpointError, unpack_bundle
from .runner import ALGOS, ARCHS, SCHEDULERS, Trainer, evaluate, split_scheduler

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
TRAFFIC_NAMES = {0: "full_buffer", 1: "ftp3"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _run_config(path: str | None) -> RunConfig:
    return RunConfig() if path is None else load_config(path)


def _seeds(text: str | None, default) -> list[int]:
    if text is None:
        return list(default)
    try:
        if ":" in text:
            lo, hi = text.split(":")
            return list(range(int(lo), int(hi)))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"bad seed list {text!r}") from exc


# ---- train ------------------------------------------------------------------

def cmd_train(args) -> int:
    run = _run_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(run, args.algo, args.arch, seed=args.seed)
    every = run.train.checkpoint_every
    meta = {"arch": args.arch, "state_dim": run.sim.state_dim(args.arch),
            "n_actions": run.sim.n_actions, "config": run.to_flat()}
    warm = run.sim.warmup_ttis

    def on_step(tr):
        done = tr.sim.tti - warm
        if every > 0 and done > 0 and done % every == 0:
            (out / f"checkpoint_{done:06d}.dsck").write_bytes(
                tr.agent.checkpoint_bytes({**meta, "tti": done}))

    res = trainer.train(args.ttis, on_step)
    (out / "checkpoint.dsck").write_bytes(
        trainer.agent.checkpoint_bytes({**meta, "tti": trainer.sim.tti - warm}))
    (out / "curve.csv").write_text(kpi.csv_text(
        ["tti", "window_geomean_bps", "alpha", "mean_loss"], res.curve,
        [f"{args.algo}-{args.arch} training curve; window = {run.train.curve_window} TTIs",
         "geomean over all UEs of smoothed throughput, averaged over the window"]))
    print(f"trained {args.algo}-{args.arch}: {len(res.tuples_per_tti)} TTIs, "
          f"{res.tuples} decisions stored, final window geomean "
          f"{res.curve[-1][1] if res.curve else float('nan'):.4g} bit/s")
    return EXIT_OK


# ---- eval -------------------------------------------------------------------

def load_actor(path: str, scheduler: str, run: RunConfig):
    """Read a checkpoint's actor and check it against the scheduler and config."""
    algo, arch = split_scheduler(scheduler)
    meta, nets, _ = unpack_bundle(Path(path).read_bytes())
    if meta.get("arch") != arch:
        raise CheckpointError(f"checkpoint architecture {meta.get('arch')!r} != {arch!r}")
    if meta.get("algo") != algo:
        raise CheckpointError(f"checkpoint algorithm {meta.get('algo')!r} != {algo!r}")
    actor = nets["actor"]
    want_in = run.sim.state_dim(arch)
    want_out = run.sim.n_branches(arch) * run.sim.n_actions
    if actor.n_in != want_in or actor.n_out != want_out:
        raise CheckpointError(f"actor dims {actor.n_in}->{actor.n_out} do not match "
                              f"config {want_in}->{want_out}")
    return actor


def _write_runs(out: Path, name: str, results) -> dict:
    d = out / name
    d.mkdir(parents=True, exist_ok=True)
    rows = []
    for r in results:
        traffic = [TRAFFIC_NAMES[int(t)] for t in r.traffic]
        (d / f"seed_{r.seed}.csv").write_text(kpi.per_ue_csv(r.tput, r.upt, traffic, r.cells))
        s = r.summary()
        rows.append([r.seed, s["geomean"], s["p5"], s["median"], s["mean"], s["cosched"]])
    pooled = np.concatenate([r.tput for r in results])
    agg = kpi.summarize(pooled)
    agg["cosched"] = float(np.mean([r.cosched for r in results]))
    rows.append(["all", agg["geomean"], agg["p5"], agg["median"], agg["mean"], agg["cosched"]])
    (d / "summary.csv").write_text(kpi.csv_text(
        ["seed", "geomean_bps", "p5_bps", "median_bps", "mean_bps", "cosched_efficiency"], rows,
        [f"scheduler {name}; percentiles by linear interpolation between order statistics",
         "zero throughputs replaced by 1 bit/s in the geomean; 'all' pools every seed"]))
    return agg


def cmd_eval(args) -> int:
    run = _run_config(args.config)
    seeds = _seeds(args.seeds, run.eval.seeds)
    n_ttis = run.eval.eval_ttis if args.ttis is None else args.ttis
    actor = None
    if args.scheduler not in ("baseline", "pf-greedy", "random"):
        if args.checkpoint is None:
            raise UsageError(f"scheduler {args.scheduler} needs --checkpoint")
        actor = load_actor(args.checkpoint, args.scheduler, run)
    out = Path(args.out)
    workers = run.eval.workers if args.workers is None else args.workers
    cand = _write_runs(out, args.scheduler, evaluate(run.sim, args.scheduler, seeds, n_ttis,
                                                     actor, workers))
    base = cand if args.scheduler == "baseline" else _write_runs(
        out, "baseline", evaluate(run.sim, "baseline", seeds, n_ttis, None, workers))
    gains = kpi.gain_table(cand, base)
    (out / f"gains_{args.scheduler}.csv").write_text(kpi.csv_text(
        ["statistic", "candidate_bps", "baseline_bps", "gain_percent"],
        [[k, cand[k], base[k], gains[k]] for k in kpi.STATS],
        [f"{args.scheduler} vs baseline over seeds {','.join(map(str, seeds))}",
         "gain = 100 * (candidate / baseline - 1); undefined when the baseline is 0"]))
    print(f"{args.scheduler}: geomean {cand['geomean']:.4g} bit/s "
          f"({gains['geomean'] if gains['geomean'] is not None else float('nan'):+.1f}% vs baseline)")
    return EXIT_OK


# ---- bench ------------------------------------------------------------------

def cmd_bench(args) -> int:
    hidden = tuple(int(h) for h in args.hidden.split(","))
    archs = ARCHS if args.arch == "both" else (args.arch,)
    reports = [bench(a, hidden, args.candidates, args.rbg, args.layers, args.reps) for a in archs]
    text = kpi.csv_text(BENCH_HEADER, [r.row() for r in reports],
                        ["single-thread float32 forward passes; times in microseconds",
                         "tti_estimate = mean pass x passes; tti_measured = median timed TTI"])
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# ---- export -----------------------------------------------------------------

def cmd_export(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory {run_dir} not found")
    out = Path(args.out) if args.out else run_dir / "export"
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for sched_dir in sorted(p for p in run_dir.iterdir() if p.is_dir() and p != out):
        per_seed = sorted(sched_dir.glob("seed_*.csv"))
        if not per_seed:
            continue
        by_traffic: dict[str, list[float]] = {}
        for f in per_seed:
            with f.open() as fh:
                rows = csv.DictReader(line for line in fh if not line.startswith("#"))
                for row in rows:
                    by_traffic.setdefault(row["traffic"], []).append(float(row["throughput_bps"]))
        for traffic, values in sorted(by_traffic.items()):
            (out / f"{sched_dir.name}_{traffic}_cdf.csv").write_text(kpi.cdf_csv(values))
            written += 1
    if written == 0:
        raise FileNotFoundError(f"no per-seed result files under {run_dir}")
    print(f"wrote {written} CDF files to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="deepsched", description="MU-MIMO deep scheduler experiments")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a deep scheduler")
    t.add_argument("--config")
    t.add_argument("--algo", required=True, choices=ALGOS)
    t.add_argument("--arch", required=True, choices=ARCHS)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--ttis", type=int, help="training TTIs after warmup")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a scheduler over seeds")
    e.add_argument("--config")
    e.add_argument("--scheduler", required=True, choices=SCHEDULERS)
    e.add_argument("--checkpoint")
    e.add_argument("--seeds", help="comma list or lo:hi range")
    e.add_argument("--ttis", type=int)
    e.add_argument("--workers", type=int)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="forward-pass latency benchmark")
    b.add_argument("--arch", default="both", choices=(*ARCHS, "both"))
    b.add_argument("--hidden", default="32,32")
    b.add_argument("--candidates", type=int, default=4)
    b.add_argument("--rbg", type=int, default=18)
    b.add_argument("--layers", type=int, default=8)
    b.add_argument("--reps", type=int, default=500)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    x = sub.add_parser("export", help="plot-ready CDF files from an eval run directory")
    x.add_argument("run_dir")
    x.add_argument("--out")
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:       # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CheckpointError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Train the three deep schedulers on the desk system and compare them with the
heuristics and the random policy on held-out seeds.

    python scripts/run_desk.py --configs configs --out results/desk
"""

import argparse
import csv
import time
from pathlib import Path

from deepsched.experiments import TRAINED, load_desk, run_desk


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--configs", default=str(Path(__file__).resolve().parents[1] / "configs"))
    ap.add_argument("--train-seed", type=int, default=0)
    ap.add_argument("--out", help="directory for summary.csv and learning curves")
    args = ap.parse_args()

    base, runs = load_desk(args.configs)
    t0 = time.perf_counter()
    rep = run_desk(base, runs, train_seed=args.train_seed)
    print(rep.table())
    for name in TRAINED:
        print(f"{name}: final-half curve slope {rep.training[name].curve_slope(0.5):.3g} bit/s per TTI")
    print(f"total {time.perf_counter() - t0:.0f} s")

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "summary.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["scheduler", "pooled_geomean", *[f"seed_{s}" for s in rep.seeds]])
            for name, g in rep.pooled.items():
                w.writerow([name, f"{g:.6g}", *[f"{x:.6g}" for x in rep.geomeans[name]]])
        for name, res in rep.training.items():
            with open(out / f"curve_{name}.csv", "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["tti", "geomean", "alpha", "loss"])
                w.writerows(res.curve)


if __name__ == "__main__":
    main()

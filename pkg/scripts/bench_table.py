"""Forward-pass latency of the 1L and 2L actors over a grid of RBG counts."""

import argparse

from deepsched.bench import bench


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rbgs", default="6,12,18")
    ap.add_argument("--layers", type=int, default=8)
    ap.add_argument("--hidden", default="32,32")
    ap.add_argument("--reps", type=int, default=300)
    args = ap.parse_args()
    hidden = tuple(int(h) for h in args.hidden.split(","))

    print(f"{'rbg':>4} {'1L us/TTI':>10} {'2L us/TTI':>10} {'ratio':>6}")
    for n in (int(x) for x in args.rbgs.split(",")):
        r1 = bench("1l", hidden, 4, n, args.layers, repetitions=args.reps)
        r2 = bench("2l", hidden, 4, n, args.layers, repetitions=args.reps)
        print(f"{n:>4} {r1.tti_us:>10.1f} {r2.tti_us:>10.1f} {r2.tti_us / r1.tti_us:>6.1f}")


if __name__ == "__main__":
    main()

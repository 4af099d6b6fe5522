"""Quick-look plots of harness outputs.

    python3 tools/plot.py out/compare_trajectory.csv -o theta.png
    python3 tools/plot.py out/sweep.csv --x scheme.r0 --y operator_utility effective_participation
"""

import argparse
import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

DEFAULT_AXES = {
    "compare_trajectory.csv": ("t", ["theta_hat_mean", "theta_meanfield"]),
    "trajectory.csv": ("t", ["theta"]),
    "sweep.csv": ("scheme.r0", ["operator_utility"]),
}


def read_columns(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r.get("status", "ok") == "ok"]
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("csv")
    ap.add_argument("--x")
    ap.add_argument("--y", nargs="+")
    ap.add_argument("-o", "--output", default="plot.png")
    args = ap.parse_args(argv)

    x, ys = DEFAULT_AXES.get(args.csv.rsplit("/", 1)[-1], (None, None))
    x, ys = args.x or x, args.y or ys
    if not x or not ys:
        ap.error("no default axes for this file; pass --x and --y")
    rows = read_columns(args.csv)
    fig, axes = plt.subplots(len(ys), 1, sharex=True, figsize=(6, 2.5 * len(ys)), squeeze=False)
    xs = [float(r[x]) for r in rows]
    for ax, y in zip(axes[:, 0], ys):
        ax.plot(xs, [float(r[y]) for r in rows], marker="." if len(rows) < 200 else None)
        ax.set_ylabel(y)
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel(x)
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()

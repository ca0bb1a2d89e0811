#!/usr/bin/env python3
"""Plot the CSV files emitted by the covgrad CLI.

Usage: python scripts/plot_results.py RESULTS_DIR [--out DIR]

Produces trajectory.png (planned path with start marker), loss_history.png,
and, when simulate outputs are present, lever_errors.png with the per-step
mean absolute lever-arm errors and their one-sigma band.
"""

import argparse
import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = {name: [float(r[i]) for r in rows[1:]] for i, name in enumerate(header)}
    return data


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("results", help="directory holding the CLI's CSV output")
    parser.add_argument("--out", default=None, help="directory for the PNGs (default: results dir)")
    args = parser.parse_args()
    out = args.out or args.results
    os.makedirs(out, exist_ok=True)

    states_path = os.path.join(args.results, "states.csv")
    if os.path.exists(states_path):
        states = read_csv(states_path)
        fig, ax = plt.subplots(figsize=(6, 6))
        ax.plot(states["px"], states["py"], "-", lw=1.5)
        ax.plot(states["px"][0], states["py"][0], "go", label="start")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.set_aspect("equal")
        ax.legend()
        ax.set_title("Planned trajectory")
        fig.savefig(os.path.join(out, "trajectory.png"), dpi=150, bbox_inches="tight")
        print(f"wrote {os.path.join(out, 'trajectory.png')}")

    loss_path = os.path.join(args.results, "loss_history.csv")
    if os.path.exists(loss_path):
        loss = read_csv(loss_path)
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(loss["iter"], loss["loss"], "-o", ms=3)
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        ax.set_title("Optimizer progress")
        fig.savefig(os.path.join(out, "loss_history.png"), dpi=150, bbox_inches="tight")
        print(f"wrote {os.path.join(out, 'loss_history.png')}")

    err_path = os.path.join(args.results, "error_summary.csv")
    if os.path.exists(err_path):
        err = read_csv(err_path)
        fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
        for ax, comp in zip(axes, ("lx", "ly")):
            mean = err[f"mean_{comp}"]
            std = err[f"std_{comp}"]
            steps = err["step"]
            ax.plot(steps, mean, "-", label="mean abs error")
            ax.fill_between(
                steps,
                [m - s for m, s in zip(mean, std)],
                [m + s for m, s in zip(mean, std)],
                alpha=0.3,
                label="one sigma",
            )
            ax.set_xlabel("step")
            ax.set_title(f"lever arm {comp}")
        axes[0].set_ylabel("absolute error [m]")
        axes[0].legend()
        fig.savefig(os.path.join(out, "lever_errors.png"), dpi=150, bbox_inches="tight")
        print(f"wrote {os.path.join(out, 'lever_errors.png')}")


if __name__ == "__main__":
    sys.exit(main())

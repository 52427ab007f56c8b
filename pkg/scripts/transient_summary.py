#!/usr/bin/env python3
"""Summarize error transients of a tracking run directory.

Reads errors.csv as written by `otbot control` and prints peak and 2%%
recovery time for each requested onset (corner times, force-off times, or
any instants passed via --onsets).
"""

import argparse

import numpy as np

from otbot.control import transient_metrics


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("run_dir", help="directory containing errors.csv")
    ap.add_argument("--onsets", default="0",
                    help="comma-separated onset times in seconds (default: 0)")
    ap.add_argument("--fraction", type=float, default=0.02)
    args = ap.parse_args()

    data = np.genfromtxt(f"{args.run_dir}/errors.csv", delimiter=",", names=True)
    t = data["time"]
    pos = np.hypot(data["ep_x"], data["ep_y"])
    vel = np.hypot(data["ev_x"], data["ev_y"])
    onsets = [float(s) for s in args.onsets.split(",")]

    print(f"{'onset':>8} {'pos peak':>10} {'recovery':>9} {'vel peak':>10} {'recovery':>9}")
    for i, onset in enumerate(onsets):
        end = onsets[i + 1] - 1e-3 if i + 1 < len(onsets) else None
        p = transient_metrics(t, pos, onset, window_end=end, fraction=args.fraction)
        v = transient_metrics(t, vel, onset, window_end=end, fraction=args.fraction,
                              sustained=True)
        fmt = lambda r: f"{r:8.3f} s" if r is not None else "      -  "
        print(f"{onset:8.2f} {p.peak:10.5f} {fmt(p.recovery)} {v.peak:10.5f} {fmt(v.recovery)}")


if __name__ == "__main__":
    main()

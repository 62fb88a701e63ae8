#!/usr/bin/env python3
"""Render a stacked per-phase timing bar chart from an fmmbench CSV.

    plot_breakdown.py --csv runs.csv --x workers --mode times-workers --out fig.png
"""

import argparse
import sys

from breakdown_plots import PlotSpec, stacked_breakdown

_MODES = {"raw": "raw", "times-workers": "time_times_workers"}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--csv", required=True)
    ap.add_argument("--x", default="workers",
                    choices=("workers", "sim_ranks", "n"))
    ap.add_argument("--mode", default="raw", choices=sorted(_MODES))
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    try:
        side = stacked_breakdown(PlotSpec(csv_path=args.csv, x=args.x,
                                          mode=_MODES[args.mode],
                                          out=args.out))
    except (OSError, ValueError) as e:
        print(f"plot_breakdown: {e}", file=sys.stderr)
        return 1
    print(f"wrote {args.out} and {side}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

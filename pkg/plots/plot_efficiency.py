#!/usr/bin/env python3
"""Render a parallel-efficiency curve t_ref/(k*t_k) from an fmmbench CSV.

    plot_efficiency.py --csv runs.csv --x workers --out eff.png
"""

import argparse
import sys

from breakdown_plots import PlotSpec, efficiency_curve


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--csv", required=True)
    ap.add_argument("--x", default="workers",
                    choices=("workers", "sim_ranks", "n"))
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    try:
        side = efficiency_curve(PlotSpec(csv_path=args.csv, x=args.x,
                                         out=args.out))
    except (OSError, ValueError) as e:
        print(f"plot_efficiency: {e}", file=sys.stderr)
        return 1
    print(f"wrote {args.out} and {side}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

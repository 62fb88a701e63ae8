"""Emit a worker-sweep timing CSV with the bench CLI and summarize it.

The CSV this writes is the input format the plotting scripts under
plots/ consume.
"""

import csv
import os
import sys
import tempfile

from fmmlite import bench

PHASES = ["t_sort", "t_buildTree", "t_P2P", "t_P2M", "t_M2M",
          "t_M2L", "t_L2L", "t_L2P", "t_simSendP2P", "t_simSendM2L"]


def main():
    out = os.path.join(tempfile.mkdtemp(prefix="fmmbench_"), "workers.csv")
    rc = bench.main(["sweep", "--axis", "workers", "--values", "1,2,4",
                     "--n", "200000", "--p", "3", "--seed", "0",
                     "--check", "off", "--out", out, "--format", "csv"])
    if rc != 0:
        return rc
    with open(out) as f:
        rows = list(csv.DictReader(f))
    print(f"wrote {out}")
    print(f"{'workers':>8} {'t_total':>9}  dominant phases")
    for row in rows:
        shares = sorted(((float(row[ph]), ph) for ph in PHASES), reverse=True)
        top = "  ".join(f"{ph[2:]}={t / float(row['t_total']):.0%}"
                        for t, ph in shares[:3])
        print(f"{row['workers']:>8} {float(row['t_total']):>8.2f}s  {top}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Figures from fmmbench CSV files: stacked phase bars, efficiency curves.

This package never imports the solver. Its only contract with it is the
benchmark CSV schema (fixed header, one record per row). Every figure is
accompanied by a numeric CSV sidecar (same path, .csv extension) so that
downstream checks can read numbers instead of pixels.

Output images are reproducible for a fixed matplotlib version; matplotlib
stamps its own version string into PNG metadata, so byte equality across
library upgrades is not promised.
"""

import csv
import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

# stacked in this order, bottom to top
PHASE_COLUMNS = [
    "t_sort", "t_buildTree", "t_P2P", "t_P2M", "t_M2M",
    "t_M2L", "t_L2L", "t_L2P", "t_simSendP2P", "t_simSendM2L",
]

X_COLUMNS = ("workers", "sim_ranks", "n")
MODES = ("raw", "time_times_workers")

# ten distinguishable colors, one per phase, fixed across figures
DEFAULT_COLORS = {
    "t_sort": "#8c8c8c", "t_buildTree": "#bcbd22", "t_P2P": "#d62728",
    "t_P2M": "#9467bd", "t_M2M": "#8c564b", "t_M2L": "#1f77b4",
    "t_L2L": "#e377c2", "t_L2P": "#2ca02c", "t_simSendP2P": "#ff7f0e",
    "t_simSendM2L": "#17becf",
}

# record identity columns; an efficiency curve must not mix configurations
SPEC_COLUMNS = ("n", "dist", "seed", "p", "ncrit", "level", "workers",
                "sim_ranks", "precision")


@dataclass
class PlotSpec:
    csv_path: str
    x: str = "workers"
    mode: str = "raw"
    out: str = "fig.png"
    colors: dict = field(default_factory=lambda: dict(DEFAULT_COLORS))

    def __post_init__(self):
        if self.x not in X_COLUMNS:
            raise ValueError(f"x must be one of {X_COLUMNS}, got {self.x!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def read_records(path: str, required):
    """Load CSV rows as dicts, checking that required columns exist."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise ValueError(f"column {col!r} missing from {path}")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path} has no records")
    return rows


def sidecar_path(out: str) -> str:
    return os.path.splitext(out)[0] + ".csv"


def _ordered(rows, x):
    """Rows sorted by numeric x, rejecting duplicate positions."""
    try:
        keyed = sorted(rows, key=lambda r: float(r[x]))
    except ValueError as e:
        raise ValueError(f"non-numeric {x} value: {e}")
    seen = set()
    for r in keyed:
        v = float(r[x])
        if v in seen:
            raise ValueError(f"duplicate {x}={r[x]} row; one record per "
                             f"x value is required")
        seen.add(v)
    return keyed


def stacked_breakdown(spec: PlotSpec) -> str:
    """One stacked bar of the ten phase times per x value.

    mode="time_times_workers" multiplies every phase by the record's
    worker count before stacking, which makes perfectly scaling runs
    produce equal-height bars. Writes the figure to spec.out and the bar
    heights to the sidecar; returns the sidecar path.
    """
    required = [spec.x, "t_total"] + PHASE_COLUMNS
    if spec.mode == "time_times_workers":
        required.append("workers")
    rows = read_records(spec.csv_path, required)
    rows = _ordered(rows, spec.x)

    xs = [row[spec.x] for row in rows]
    scale = [float(row["workers"]) if spec.mode == "time_times_workers"
             else 1.0 for row in rows]
    heights = {ph: [float(row[ph]) * s for row, s in zip(rows, scale)]
               for ph in PHASE_COLUMNS}

    fig, ax = plt.subplots(figsize=(1.2 + 0.9 * len(xs) + 2.2, 4.2))
    bottom = [0.0] * len(xs)
    for ph in PHASE_COLUMNS:
        ax.bar(xs, heights[ph], bottom=bottom, label=ph[2:],
               color=spec.colors[ph], width=0.7)
        bottom = [b + h for b, h in zip(bottom, heights[ph])]
    ax.set_xlabel(spec.x)
    ax.set_ylabel("time x workers [s]" if spec.mode == "time_times_workers"
                  else "time [s]")
    ax.legend(loc="center left", bbox_to_anchor=(1.0, 0.5), fontsize=8)
    fig.tight_layout()
    fig.savefig(spec.out)
    plt.close(fig)

    side = sidecar_path(spec.out)
    with open(side, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([spec.x] + PHASE_COLUMNS + ["stack_total"])
        for i, x in enumerate(xs):
            segs = [heights[ph][i] for ph in PHASE_COLUMNS]
            w.writerow([x] + [repr(v) for v in segs] + [repr(sum(segs))])
    return side


def efficiency_curve(spec: PlotSpec) -> str:
    """Parallel efficiency t_ref / (k * t_k) against k = the x column.

    The reference is the record with the smallest x value. All records
    must agree on every other configuration column; mixed groups are an
    error. Writes spec.out plus a numeric sidecar; returns the sidecar
    path.
    """
    rows = read_records(spec.csv_path, [spec.x, "t_total"])
    rows = _ordered(rows, spec.x)
    if len(rows) < 2:
        raise ValueError("efficiency needs at least two records")

    # an n sweep legitimately changes the resolved depth
    fixed = [c for c in SPEC_COLUMNS
             if c != spec.x and c in rows[0]
             and not (spec.x == "n" and c == "level")]
    for col in fixed:
        vals = {row[col] for row in rows}
        if len(vals) > 1:
            raise ValueError(f"records differ in {col!r} ({sorted(vals)}); "
                             f"an efficiency curve needs one group")

    ks = [float(row[spec.x]) for row in rows]
    ts = [float(row["t_total"]) for row in rows]
    t_ref = ts[0]
    eff = [t_ref / (k * t) for k, t in zip(ks, ts)]

    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.plot(ks, eff, marker="o")
    ax.axhline(1.0, color="#999999", linewidth=0.8, linestyle=":")
    ax.set_xlabel(spec.x)
    ax.set_ylabel("efficiency")
    ax.set_ylim(bottom=0.0)
    fig.tight_layout()
    fig.savefig(spec.out)
    plt.close(fig)

    side = sidecar_path(spec.out)
    with open(side, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([spec.x, "t_total", "efficiency"])
        for row, t, e in zip(rows, ts, eff):
            w.writerow([row[spec.x], repr(t), repr(e)])
    return side

"""Benchmark harness: body generators, timed runs, sweeps, CSV/JSON export.

The CSV schema is fixed (CSV_COLUMNS below, one header row, append mode).
Numeric result columns of a rerun with the same spec are identical; only the
timing columns vary. Exit codes: 0 success, 1 usage error, 2 I/O error,
3 failed --assert-error-below.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from .core import Bodies, ConfigError, FmmConfig
from .evaluator import fmm_evaluate, relative_l2_error
from .kernels import direct_sum
from .partition import distributed_evaluate

CSV_COLUMNS = [
    "n", "dist", "seed", "p", "ncrit", "level", "workers", "sim_ranks",
    "precision", "t_sort", "t_buildTree", "t_P2P", "t_P2M", "t_M2M", "t_M2L",
    "t_L2L", "t_L2P", "t_simSendP2P", "t_simSendM2L", "t_total", "err_l2",
    "err_targets", "p2p_pairs", "m2l_pairs", "bytes_p2p", "bytes_m2l",
]

DISTRIBUTIONS = ("cube_uniform", "sphere_surface", "lattice")
_DIST_ALIASES = {
    "cube": "cube_uniform",
    "sphere": "sphere_surface",
    "lattice": "lattice",
    "cube_uniform": "cube_uniform",
    "sphere_surface": "sphere_surface",
}

FULL_CHECK_GUARD = 100_000
DEFAULT_SAMPLE_K = 100
WORKERS_ENV = "FMMBENCH_WORKERS"


class UsageError(ValueError):
    """Bad command line or spec; maps to exit code 1."""


def generate(distribution: str, n: int, seed: int) -> Bodies:
    """Deterministic body set for a named distribution.

    Charges are uniform in (0, 1/n] for every distribution, so the total
    charge is O(1) and error norms stay comparable across N. Positions:
    cube_uniform fills the unit cube, sphere_surface the radius-1/2 sphere
    about the cube center, lattice the cell-centered points (i + 0.5) / m of
    the smallest m^3 grid holding n points (x index fastest).
    """
    if distribution not in DISTRIBUTIONS:
        raise UsageError(f"unknown distribution {distribution!r}")
    if n < 1:
        raise UsageError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if distribution == "cube_uniform":
        pos = rng.random((n, 3))
    elif distribution == "sphere_surface":
        v = rng.normal(size=(n, 3))
        norm = np.linalg.norm(v, axis=1)
        norm[norm == 0.0] = 1.0
        pos = 0.5 + 0.5 * v / norm[:, None]
    else:
        m = 1
        while m ** 3 < n:
            m += 1
        idx = np.arange(n, dtype=np.int64)
        pos = np.empty((n, 3))
        pos[:, 0] = (idx % m + 0.5) / m
        pos[:, 1] = (idx // m % m + 0.5) / m
        pos[:, 2] = (idx // (m * m) + 0.5) / m
    q = (1.0 - rng.random(n)) / n
    return Bodies(pos, q)


@dataclass
class BenchSpec:
    """One benchmark point. check is 'off', 'full' or 'sampled:<k>'; None
    picks full up to n = 1e5 and sampled:100 beyond (the O(N^2) guard)."""

    n: int
    distribution: str = "cube_uniform"
    seed: int = 0
    p: int = 3
    ncrit: int = None
    level: int = None
    workers: int = 1
    sim_ranks: int = 1
    precision: str = "double"
    check: str = None
    out: str = None
    fmt: str = "csv"
    assert_error_below: float = None
    force_full_check: bool = False

    def resolved_check(self):
        """Returns (mode, k) with the guard applied; k is None unless sampled."""
        raw = self.check
        if raw is None:
            if self.n > FULL_CHECK_GUARD:
                return "sampled", DEFAULT_SAMPLE_K
            return "full", None
        if raw == "off":
            return "off", None
        if raw == "full":
            if self.n > FULL_CHECK_GUARD and not self.force_full_check:
                raise UsageError(
                    f"check=full with n={self.n} > {FULL_CHECK_GUARD} requires "
                    "--force-full-check (O(N^2) reference)")
            return "full", None
        if raw == "sampled":
            return "sampled", DEFAULT_SAMPLE_K
        if raw.startswith("sampled:"):
            try:
                k = int(raw.split(":", 1)[1])
            except ValueError:
                raise UsageError(f"bad sampled target count in {raw!r}") from None
            if k < 1:
                raise UsageError("sampled target count must be >= 1")
            return "sampled", k
        raise UsageError(f"check must be off, full or sampled:<k>, got {raw!r}")


def _config_for(spec: BenchSpec) -> FmmConfig:
    if spec.precision == "double":
        precision = "double"
    elif spec.precision == "single":
        precision = "single_near_field"
    else:
        raise UsageError("precision must be 'double' or 'single'")
    if spec.sim_ranks < 1:
        raise UsageError("sim_ranks must be >= 1")
    try:
        return FmmConfig(p=spec.p, ncrit=spec.ncrit, max_level=spec.level,
                         precision=precision, workers=spec.workers)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


_WARMED = set()


def _warm(spec: BenchSpec):
    """Compile every kernel the run will touch, outside the timed windows."""
    key = (spec.precision, spec.p)
    if key in _WARMED:
        return
    _WARMED.add(key)
    small = generate("cube_uniform", 64, 0)
    cfg = _config_for(replace(spec, n=64, ncrit=None, level=2, workers=1,
                              sim_ranks=1))
    fmm_evaluate(small, cfg)
    direct_sum(small, np.arange(4))


def execute(spec: BenchSpec) -> dict:
    """Run one point and return the record as a column -> value dict.

    Blank CSV cells (None here) appear for err columns with check=off and
    for ncrit when the depth came from an explicit level. Sampled checks
    draw their target indices from default_rng([seed, 1]) over the sorted
    body order, so records are auditable from the seed column.
    """
    mode, k = spec.resolved_check()
    config = _config_for(spec)
    bodies = generate(spec.distribution, spec.n, spec.seed)
    _warm(spec)
    if spec.sim_ranks > 1:
        result, stats = distributed_evaluate(bodies, config, spec.sim_ranks)
        bytes_p2p = sum(s.bytes_p2p for s in stats)
        bytes_m2l = sum(s.bytes_m2l for s in stats)
    else:
        result = fmm_evaluate(bodies, config)
        bytes_p2p = 0
        bytes_m2l = 0

    err_l2 = None
    err_targets = None
    if mode == "full":
        pot_ref, _ = direct_sum(bodies)
        err_l2 = relative_l2_error(bodies.potential, pot_ref)
        err_targets = spec.n
    elif mode == "sampled":
        k = min(k, spec.n)
        sel = np.sort(np.random.default_rng([spec.seed, 1]).choice(
            spec.n, size=k, replace=False))
        pot_ref, _ = direct_sum(bodies, sel)
        err_l2 = relative_l2_error(bodies.potential[sel], pot_ref)
        err_targets = k

    record = {
        "n": spec.n,
        "dist": spec.distribution,
        "seed": spec.seed,
        "p": spec.p,
        "ncrit": config.effective_ncrit,
        "level": result.tree.max_level,
        "workers": spec.workers,
        "sim_ranks": spec.sim_ranks,
        "precision": spec.precision,
        "err_l2": err_l2,
        "err_targets": err_targets,
        "p2p_pairs": result.p2p_pairs,
        "m2l_pairs": result.m2l_pairs,
        "bytes_p2p": bytes_p2p,
        "bytes_m2l": bytes_m2l,
    }
    record.update(result.timing.as_dict())
    return {col: record[col] for col in CSV_COLUMNS}


def _append_csv(path: str, records):
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as f:
        writer = csv.writer(f)
        if new:
            writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(["" if rec[c] is None else rec[c] for c in CSV_COLUMNS])


def _write_json(path, records, many: bool):
    payload = records if many else records[0]
    if path is None:
        json.dump(payload, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        with open(path, "w") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")


def _emit(spec: BenchSpec, records, many: bool):
    if spec.fmt == "csv":
        if spec.out is None:
            raise UsageError("--out is required with --format csv")
        _append_csv(spec.out, records)
    elif spec.fmt == "json":
        _write_json(spec.out, records, many)
    else:
        raise UsageError("format must be 'csv' or 'json'")


def _assert_bound(spec: BenchSpec, records) -> int:
    if spec.assert_error_below is None:
        return 0
    for rec in records:
        if rec["err_l2"] is None:
            raise UsageError("--assert-error-below needs check != off")
        if not rec["err_l2"] < spec.assert_error_below:
            print(f"fmmbench: error {rec['err_l2']:.6e} not below "
                  f"{spec.assert_error_below:.6e}", file=sys.stderr)
            return 3
    return 0


def run(spec: BenchSpec) -> int:
    """Execute one spec, write its record, apply the error assertion."""
    records = [execute(spec)]
    _emit(spec, records, many=False)
    return _assert_bound(spec, records)


_AXES = {"workers": "workers", "ranks": "sim_ranks", "n": "n", "p": "p"}


def sweep(spec: BenchSpec, axis: str, values) -> int:
    """Run the spec once per axis value, sequentially, sharing the seed."""
    if axis not in _AXES:
        raise UsageError(f"axis must be one of {sorted(_AXES)}, got {axis!r}")
    values = [int(v) for v in values]
    if not values:
        raise UsageError("sweep needs at least one value")
    records = []
    for v in values:
        point = replace(spec, **{_AXES[axis]: v})
        records.append(execute(point))
        if spec.fmt == "csv":
            _emit(spec, records[-1:], many=False)
    if spec.fmt == "json":
        _write_json(spec.out, records, many=True)
    return _assert_bound(spec, records)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


def _add_common(parser):
    parser.add_argument("--n", type=int, required=True)
    parser.add_argument("--dist", default="cube",
                        help="cube | sphere | lattice (full names accepted)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--p", type=int, default=3)
    parser.add_argument("--ncrit", type=int, default=None)
    parser.add_argument("--level", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None,
                        help=f"default ${WORKERS_ENV} or 1")
    parser.add_argument("--sim-ranks", type=int, default=1)
    parser.add_argument("--precision", default="double",
                        choices=("double", "single"))
    parser.add_argument("--check", default=None,
                        help="off | full | sampled:<k> (default: full, or "
                             f"sampled:{DEFAULT_SAMPLE_K} for n > {FULL_CHECK_GUARD})")
    parser.add_argument("--force-full-check", action="store_true")
    parser.add_argument("--assert-error-below", type=float, default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("--format", default="csv", choices=("csv", "json"))


def build_parser() -> _Parser:
    parser = _Parser(prog="fmmbench",
                     description="FMM benchmark runner with CSV/JSON export")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run one benchmark point")
    _add_common(run_p)
    sweep_p = sub.add_parser("sweep", help="run one point per axis value")
    _add_common(sweep_p)
    sweep_p.add_argument("--axis", required=True,
                         choices=tuple(sorted(_AXES)))
    sweep_p.add_argument("--values", required=True,
                         help="comma-separated integers")
    return parser


def _spec_from_args(args) -> BenchSpec:
    dist = _DIST_ALIASES.get(args.dist)
    if dist is None:
        raise UsageError(f"unknown distribution {args.dist!r}")
    workers = args.workers
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        if env is not None:
            try:
                workers = int(env)
            except ValueError:
                raise UsageError(f"bad {WORKERS_ENV} value {env!r}") from None
        else:
            workers = 1
    return BenchSpec(
        n=args.n, distribution=dist, seed=args.seed, p=args.p,
        ncrit=args.ncrit, level=args.level, workers=workers,
        sim_ranks=args.sim_ranks, precision=args.precision, check=args.check,
        out=args.out, fmt=args.format,
        assert_error_below=args.assert_error_below,
        force_full_check=args.force_full_check)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        spec = _spec_from_args(args)
        if args.command == "run":
            return run(spec)
        values = [v for v in args.values.split(",") if v != ""]
        try:
            values = [int(v) for v in values]
        except ValueError:
            raise UsageError(f"--values must be comma-separated integers, "
                             f"got {args.values!r}") from None
        return sweep(spec, args.axis, values)
    except (UsageError, ConfigError) as exc:
        print(f"fmmbench: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"fmmbench: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

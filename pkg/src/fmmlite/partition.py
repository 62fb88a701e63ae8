"""Single-process simulation of a distributed-memory run.

Ranks own contiguous Morton spans of whole leaves. The simulator keeps one
coefficient store per rank, ships halo bodies and remote multipole records
between global phases (charged to the simSend timers), and runs every rank's
sweeps with the same kernels and accumulation order as the serial driver, so
merged outputs are bitwise identical to a one-rank run. Cells whose bodies
straddle a cut have no complete owner; a rank needing such a cell's multipole
receives the deepest complete remote descendants instead and re-derives the
cell bottom-up, which reproduces the serial rounding chain exactly.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import kernels as kn
from .core import ConfigError, build_tree
from .evaluator import (
    FmmResult,
    TimingBreakdown,
    _ensure_plan,
    _expand_full,
    parallel_apply,
)

BODY_RECORD_BYTES = 32        # x, y, z, q as doubles
MULTIPOLE_EXTRA_BYTES = 24    # expansion center, 3 doubles


@dataclass(frozen=True)
class RankPartition:
    """Assignment of contiguous leaf spans (and their bodies) to ranks."""

    nranks: int
    leaf_bounds: np.ndarray   # (nranks + 1,) leaf indices, nondecreasing
    body_bounds: np.ndarray   # (nranks + 1,) body indices, nondecreasing

    def leaf_span(self, rank: int):
        return int(self.leaf_bounds[rank]), int(self.leaf_bounds[rank + 1])

    def body_span(self, rank: int):
        return int(self.body_bounds[rank]), int(self.body_bounds[rank + 1])

    @property
    def leaf_ranks(self):
        """Rank of every leaf as an int array."""
        sizes = np.diff(self.leaf_bounds)
        return np.repeat(np.arange(self.nranks, dtype=np.int64), sizes)

    @property
    def body_counts(self):
        return np.diff(self.body_bounds)


@dataclass(frozen=True)
class CommStats:
    """Receive-side totals of one rank for one simulated exchange."""

    rank: int
    body_records: int
    multipole_records: int
    bytes_p2p: int
    bytes_m2l: int


@dataclass(frozen=True)
class CommSummary:
    """Aggregated exchange accounting: totals plus max/mean imbalance."""

    ranks: tuple
    total_body_records: int
    total_multipole_records: int
    total_bytes_p2p: int
    total_bytes_m2l: int
    imbalance_p2p: float
    imbalance_m2l: float

    def rows(self):
        """Per-rank table, ready for CSV export."""
        return [
            {"rank": s.rank, "body_records": s.body_records,
             "multipole_records": s.multipole_records,
             "bytes_p2p": s.bytes_p2p, "bytes_m2l": s.bytes_m2l}
            for s in self.ranks
        ]


@dataclass
class LetManifest:
    """Everything one rank must receive before its local sweeps can run.

    il_cells lists the requested interaction-list sources per level: sources
    of cells on this rank's root-to-owned-leaf paths that are not on those
    paths themselves. Requests with no complete owner cannot ship directly;
    their deepest complete remote descendants arrive as completion_cells and
    the cells named in rebuild_cells are re-derived locally bottom-up. Byte
    totals cover the records that actually ship, once each.
    """

    rank: int
    halo_leaves: np.ndarray
    il_cells: dict
    completion_cells: dict
    rebuild_cells: dict
    body_records: int
    multipole_records: int
    bytes_p2p: int
    bytes_m2l: int


def partition(tree, nranks: int, balance: str = "bodies") -> RankPartition:
    """Split the leaf sequence into nranks contiguous spans.

    balance="bodies" (default) walks leaves in key order and cuts when the
    running body total reaches (r + 1) * N / nranks, so no rank exceeds
    N / nranks plus one leaf population; a rank comes out empty when one
    heavy leaf swallows several quotas. balance="leaves" splits the leaf
    count evenly instead.
    """
    leaf = tree.levels[tree.max_level]
    nleaves = leaf.ncells
    n = len(tree.bodies)
    if not 1 <= nranks <= nleaves:
        raise ConfigError(
            f"nranks must be within 1..{nleaves} (occupied leaves), got {nranks}")
    cum = np.concatenate(([0], np.cumsum(leaf.body_count))).astype(np.int64)
    if balance == "bodies":
        quotas = np.arange(1, nranks, dtype=np.float64) * (n / nranks)
        cuts = np.searchsorted(cum, quotas, side="left")
    elif balance == "leaves":
        cuts = np.array([nleaves * r // nranks for r in range(1, nranks)],
                        dtype=np.int64)
    else:
        raise ConfigError("balance must be 'bodies' or 'leaves'")
    bounds = np.concatenate(([0], cuts, [nleaves])).astype(np.int64)
    return RankPartition(nranks=nranks, leaf_bounds=bounds,
                         body_bounds=cum[bounds])


def _touched_run(lv, bs: int, be: int):
    """Index run [lo, hi) of cells whose body range intersects [bs, be)."""
    if bs >= be:
        return 0, 0
    lo = int(np.searchsorted(lv.body_start, bs, side="right")) - 1
    hi = int(np.searchsorted(lv.body_start, be, side="left"))
    return lo, hi


def _complete_owner(tree, body_bounds, level: int, idx: int) -> int:
    """Rank whose span contains the whole cell, or -1 when it straddles."""
    lv = tree.levels[level]
    c0 = int(lv.body_start[idx])
    c1 = c0 + int(lv.body_count[idx])
    r = int(np.searchsorted(body_bounds, c0, side="right")) - 1
    return r if c1 <= body_bounds[r + 1] else -1


def build_let(part: RankPartition, tree, rank: int) -> LetManifest:
    """Locally essential tree of one rank under a given partition."""
    plan = _ensure_plan(tree)
    leaf = tree.levels[tree.max_level]
    ls, le = part.leaf_span(rank)
    bs, be = part.body_span(rank)
    bounds = part.body_bounds

    if ls < le:
        nb = np.unique(plan.nb_idx[plan.nb_ptr[ls]:plan.nb_ptr[le]])
        halo = nb[(nb < ls) | (nb >= le)].astype(np.int64)
    else:
        halo = np.zeros(0, dtype=np.int64)

    il_cells = {}
    needed = {}
    for level in range(2, tree.max_level + 1):
        lv = tree.levels[level]
        t_lo, t_hi = _touched_run(lv, bs, be)
        if t_lo == t_hi:
            il_cells[level] = np.zeros(0, dtype=np.int64)
            needed[level] = np.zeros(0, dtype=np.int64)
            continue
        ptr = plan.m2l_ptr[level]
        src = plan.m2l_src[level][ptr[t_lo]:ptr[t_hi]]
        uniq = np.unique(src).astype(np.int64)
        needed[level] = uniq
        il_cells[level] = uniq[(uniq < t_lo) | (uniq >= t_hi)]

    shipped = set()
    rebuild = set()
    visited = set()

    def process(level, idx):
        key = (level, int(idx))
        if key in visited:
            return
        visited.add(key)
        owner = _complete_owner(tree, bounds, level, idx)
        if owner >= 0:
            if owner != rank:
                shipped.add(key)
            return
        rebuild.add(key)
        lv = tree.levels[level]
        c0 = int(lv.child_start[idx])
        for c in range(c0, c0 + int(lv.child_count[idx])):
            process(level + 1, c)

    for level, uniq in needed.items():
        for idx in uniq:
            process(level, int(idx))

    def group(cells):
        out = {}
        for level, idx in sorted(cells):
            out.setdefault(level, []).append(idx)
        return {lv: np.array(ix, dtype=np.int64) for lv, ix in out.items()}

    il_set = {(lv, int(i)) for lv, arr in il_cells.items() for i in arr}
    completion = group(shipped - il_set)
    body_records = int(leaf.body_count[halo].sum()) if halo.size else 0
    records = len(shipped)
    return LetManifest(
        rank=rank, halo_leaves=halo, il_cells=il_cells,
        completion_cells=completion, rebuild_cells=group(rebuild),
        body_records=body_records, multipole_records=records,
        bytes_p2p=BODY_RECORD_BYTES * body_records,
        bytes_m2l=records * (plan.kh * 16 + MULTIPOLE_EXTRA_BYTES))


def comm_stats(manifests) -> CommSummary:
    """Totals and max/mean imbalance over per-rank receive counters."""
    rows = tuple(CommStats(m.rank, m.body_records, m.multipole_records,
                           m.bytes_p2p, m.bytes_m2l) for m in manifests)

    def imbalance(values):
        mean = sum(values) / len(values)
        return max(values) / mean if mean > 0 else 1.0

    return CommSummary(
        ranks=rows,
        total_body_records=sum(r.body_records for r in rows),
        total_multipole_records=sum(r.multipole_records for r in rows),
        total_bytes_p2p=sum(r.bytes_p2p for r in rows),
        total_bytes_m2l=sum(r.bytes_m2l for r in rows),
        imbalance_p2p=imbalance([r.bytes_p2p for r in rows]),
        imbalance_m2l=imbalance([r.bytes_m2l for r in rows]))


def _run_apply(phase, lo, hi, fn, workers):
    parallel_apply(phase, hi - lo, lambda a, b: fn(lo + a, lo + b), workers)


def distributed_evaluate(bodies, config, nranks: int, domain=None):
    """Full solve split across simulated ranks; returns (result, stats rows).

    Three global phases with barriers: every rank's upward sweep, the
    exchange, then every rank's far- and near-field work. Per-phase times in
    the merged breakdown are the maximum over ranks (the modeled parallel
    wall time); sort and buildTree are global and counted once. Double-mode
    output is bitwise identical to fmm_evaluate for any nranks.
    """
    bodies.reset_outputs()
    tree = build_tree(bodies, config, domain)
    tb = TimingBreakdown(n=len(bodies), p=config.p, workers=config.workers,
                         max_level=tree.max_level)
    tb.sort = tree.build_timing["sort"]
    tb.build_tree = tree.build_timing["buildTree"]
    t0 = time.perf_counter()
    plan = _ensure_plan(tree)
    part = partition(tree, nranks)
    lets = [build_let(part, tree, r) for r in range(nranks)]
    tb.build_tree += time.perf_counter() - t0

    p = tree.p
    kh, kf = plan.kh, plan.kf
    workers = config.workers
    nlv = tree.max_level
    leaf = tree.levels[nlv]
    q = bodies.charge
    diag, a1, a2 = plan.rec
    bounds = part.body_bounds
    mp = [[np.zeros_like(lv.multipole) for lv in tree.levels] for _ in range(nranks)]
    loc = [[np.zeros_like(lv.local) for lv in tree.levels] for _ in range(nranks)]
    per = [TimingBreakdown() for _ in range(nranks)]

    # phase 1: independent upward sweeps over each rank's own bodies
    for r in range(nranks):
        ls, le = part.leaf_span(r)
        bs, be = part.body_span(r)
        t1 = time.perf_counter()

        def p2m_fn(a, b, r=r):
            kn._p2m_leaves(plan.x, plan.y, plan.z, q, leaf.body_start,
                           leaf.body_count, leaf.centers, mp[r][nlv],
                           a, b, p, diag, a1, a2)

        _run_apply("P2M", ls, le, p2m_fn, workers)
        t2 = time.perf_counter()
        per[r].add("P2M", t2 - t1)
        for level in range(nlv - 1, -1, -1):
            plv = tree.levels[level]
            p_lo, p_hi = _touched_run(plv, bs, be)

            def m2m_fn(a, b, r=r, level=level, plv=plv):
                kn._m2m_level(mp[r][level + 1], tree.levels[level + 1].keys,
                              mp[r][level], plv.child_start, plv.child_count,
                              plan.m2m_tab[level + 1], a, b, p)

            _run_apply("M2M", p_lo, p_hi, m2m_fn, workers)
        per[r].add("M2M", time.perf_counter() - t2)

    # phase 2: ship halo bodies and remote multipole records to each rank
    body_buffers = []
    for r in range(nranks):
        m = lets[r]
        t1 = time.perf_counter()
        if m.halo_leaves.size:
            sel = np.concatenate([
                np.arange(leaf.body_start[i], leaf.body_start[i] + leaf.body_count[i])
                for i in m.halo_leaves])
            body_buffers.append((plan.x[sel].copy(), plan.y[sel].copy(),
                                 plan.z[sel].copy(), q[sel].copy()))
        else:
            body_buffers.append(None)
        t2 = time.perf_counter()
        per[r].add("simSendP2P", t2 - t1)
        for source in (m.il_cells, m.completion_cells):
            for level, arr in source.items():
                for idx in arr:
                    owner = _complete_owner(tree, bounds, level, int(idx))
                    if owner >= 0 and owner != r:
                        mp[r][level][idx] = mp[owner][level][idx]
        per[r].add("simSendM2L", time.perf_counter() - t2)

    # phase 3: straddler rebuilds, far field, near field on every rank
    total_coincident = 0
    for r in range(nranks):
        ls, le = part.leaf_span(r)
        bs, be = part.body_span(r)
        m = lets[r]
        t1 = time.perf_counter()
        for level in sorted(m.rebuild_cells.keys(), reverse=True):
            plv = tree.levels[level]
            for idx in m.rebuild_cells[level]:
                mp[r][level][idx] = 0.0
                kn._m2m_level(mp[r][level + 1], tree.levels[level + 1].keys,
                              mp[r][level], plv.child_start, plv.child_count,
                              plan.m2m_tab[level + 1], int(idx), int(idx) + 1, p)
        t2 = time.perf_counter()
        per[r].add("M2M", t2 - t1)

        for level in range(2, nlv + 1):
            lv = tree.levels[level]
            t_lo, t_hi = _touched_run(lv, bs, be)
            if t_lo == t_hi:
                continue
            mfull = _expand_full(mp[r][level], p)

            def m2l_fn(a, b, r=r, level=level, mfull=mfull):
                kn._m2l_level(mfull, loc[r][level], plan.m2l_ptr[level],
                              plan.m2l_src[level], plan.m2l_cls[level],
                              plan.m2l_tab[level], a, b, kh, kf)

            _run_apply("M2L", t_lo, t_hi, m2l_fn, workers)
        t3 = time.perf_counter()
        per[r].add("M2L", t3 - t2)

        for level in range(2, nlv):
            clv = tree.levels[level + 1]
            c_lo, c_hi = _touched_run(clv, bs, be)
            if c_lo == c_hi:
                continue
            pfull = _expand_full(loc[r][level], p)

            def l2l_fn(a, b, r=r, level=level, clv=clv, pfull=pfull):
                kn._l2l_level(pfull, loc[r][level + 1], clv.keys,
                              clv.parent_index, plan.l2l_tab[level + 1],
                              a, b, kh, kf)

            _run_apply("L2L", c_lo, c_hi, l2l_fn, workers)
        t4 = time.perf_counter()
        per[r].add("L2L", t4 - t3)

        lfull = _expand_full(loc[r][nlv], p)
        gz_c, gz_i, gp_c, gp_i = plan.grad

        def l2p_fn(a, b, lfull=lfull):
            kn._l2p_leaves(plan.x, plan.y, plan.z, leaf.body_start,
                           leaf.body_count, leaf.centers, lfull,
                           bodies.potential, bodies.force, a, b, p,
                           diag, a1, a2, gz_c, gz_i, gp_c, gp_i)

        _run_apply("L2P", ls, le, l2p_fn, workers)
        t5 = time.perf_counter()
        per[r].add("L2P", t5 - t4)

        if config.precision == "double":
            rets = parallel_apply(
                "P2P", le - ls,
                lambda a, b: kn._near_field_f64(
                    plan.x, plan.y, plan.z, q, leaf.body_start, leaf.body_count,
                    plan.nb_ptr, plan.nb_idx, bodies.potential, bodies.force,
                    ls + a, ls + b),
                workers)
            total_coincident += int(sum(rets))
        else:
            x32 = plan.x.astype(np.float32)
            y32 = plan.y.astype(np.float32)
            z32 = plan.z.astype(np.float32)
            q32 = q.astype(np.float32)
            n = len(bodies)
            pot32 = np.zeros(n, dtype=np.float32)
            fx32 = np.zeros(n, dtype=np.float32)
            fy32 = np.zeros(n, dtype=np.float32)
            fz32 = np.zeros(n, dtype=np.float32)
            maxbuf = int(plan.nb_src_totals.max())
            rets = parallel_apply(
                "P2P", le - ls,
                lambda a, b: kn._near_field_f32(
                    x32, y32, z32, q32, leaf.body_start, leaf.body_count,
                    plan.nb_ptr, plan.nb_idx, pot32, fx32, fy32, fz32,
                    ls + a, ls + b, maxbuf),
                workers)
            total_coincident += int(round(float(sum(rets))))
            bodies.potential[bs:be] += pot32[bs:be]
            bodies.force[bs:be, 0] += fx32[bs:be]
            bodies.force[bs:be, 1] += fy32[bs:be]
            bodies.force[bs:be, 2] += fz32[bs:be]
        per[r].add("P2P", time.perf_counter() - t5)

    for phase in ("P2P", "P2M", "M2M", "M2L", "L2L", "L2P",
                  "simSendP2P", "simSendM2L"):
        tb.add(phase, max(t.get(phase) for t in per))

    n = len(bodies)
    pot = np.empty(n)
    force = np.empty((n, 3))
    pot[bodies.original_index] = bodies.potential
    force[bodies.original_index] = bodies.force
    result = FmmResult(potential=pot, force=force, tree=tree, timing=tb,
                       p2p_pairs=plan.p2p_pairs, m2l_pairs=plan.m2l_pairs,
                       coincident_pairs=total_coincident)
    return result, list(comm_stats(lets).ranks)

"""Driver for the full solve: sweeps over the tree, interaction plans, timing.

Every phase accumulates per target in a fixed order (ascending source key),
and threads only ever split target ranges, so results are bitwise identical
for any worker count. Interaction lists are precomputed into CSR form once
per tree and cached on it; that construction is charged to the buildTree
phase.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import harmonics as hm
from . import kernels as kn
from .core import build_tree, pack_anchors, unpack_keys

PHASES = ("sort", "buildTree", "P2P", "P2M", "M2M", "M2L", "L2L", "L2P",
          "simSendP2P", "simSendM2L")

_FIELD_BY_PHASE = {
    "sort": "sort",
    "buildTree": "build_tree",
    "P2P": "p2p",
    "P2M": "p2m",
    "M2M": "m2m",
    "M2L": "m2l",
    "L2L": "l2l",
    "L2P": "l2p",
    "simSendP2P": "sim_send_p2p",
    "simSendM2L": "sim_send_m2l",
}


@dataclass
class TimingBreakdown:
    """Wall-clock seconds per phase; total is always the sum of the ten."""

    n: int = 0
    p: int = 0
    workers: int = 1
    max_level: int = 0
    sort: float = 0.0
    build_tree: float = 0.0
    p2p: float = 0.0
    p2m: float = 0.0
    m2m: float = 0.0
    m2l: float = 0.0
    l2l: float = 0.0
    l2p: float = 0.0
    sim_send_p2p: float = 0.0
    sim_send_m2l: float = 0.0

    @property
    def total(self) -> float:
        return (self.sort + self.build_tree + self.p2p + self.p2m + self.m2m
                + self.m2l + self.l2l + self.l2p + self.sim_send_p2p
                + self.sim_send_m2l)

    def add(self, phase: str, seconds: float):
        name = _FIELD_BY_PHASE[phase]
        setattr(self, name, getattr(self, name) + seconds)

    def get(self, phase: str) -> float:
        return getattr(self, _FIELD_BY_PHASE[phase])

    def as_dict(self):
        out = {f"t_{phase}": self.get(phase) for phase in PHASES}
        out["t_total"] = self.total
        return out


@dataclass
class FmmResult:
    """Solver output in the original (pre-sort) body order."""

    potential: np.ndarray
    force: np.ndarray
    tree: "Tree"
    timing: TimingBreakdown
    p2p_pairs: int
    m2l_pairs: int
    coincident_pairs: int


_POOLS = {}


def _pool(workers: int) -> ThreadPoolExecutor:
    pool = _POOLS.get(workers)
    if pool is None:
        pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="fmm")
        _POOLS[workers] = pool
    return pool


def parallel_apply(phase: str, n_items: int, worker, workers: int = 1):
    """Apply worker(lo, hi) over an even contiguous split of range(n_items).

    The phase label is bookkeeping only. Returns the list of worker return
    values in chunk order; exceptions propagate. The compiled kernels drop
    the GIL, so plain threads scale on multicore hosts.
    """
    if n_items <= 0:
        return []
    if workers <= 1:
        return [worker(0, n_items)]
    bounds = [n_items * w // workers for w in range(workers + 1)]
    jobs = [(bounds[w], bounds[w + 1]) for w in range(workers) if bounds[w] < bounds[w + 1]]
    pool = _pool(workers)
    futures = [pool.submit(worker, lo, hi) for lo, hi in jobs]
    return [f.result() for f in futures]


def _expand_full(half: np.ndarray, p: int) -> np.ndarray:
    """Half-stored coefficients (m >= 0) to the dense (-n..n) layout."""
    full = np.empty((half.shape[0], p * p), dtype=np.complex128)
    for n in range(p):
        bh = n * (n + 1) // 2
        bf = n * n + n
        full[:, bf] = half[:, bh]
        for m in range(1, n + 1):
            c = half[:, bh + m]
            full[:, bf + m] = c
            full[:, bf - m] = np.conj(c)
    return full


# ---------------------------------------------------------------------------
# interaction plan: neighbor/interaction lists in CSR form + operator tables
# ---------------------------------------------------------------------------

_SENTINEL = np.iinfo(np.int64).max


def _neighbor_csr(tree):
    """Per leaf, the occupied adjacent leaves (self included), ascending key."""
    lv = tree.levels[tree.max_level]
    keys = lv.keys
    nc = keys.shape[0]
    hi = 1 << tree.max_level
    ax, ay, az = unpack_keys(keys)
    mat = np.full((nc, 27), _SENTINEL, dtype=np.int64)
    col = 0
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                cx, cy, cz = ax + dx, ay + dy, az + dz
                ok = ((cx >= 0) & (cx < hi) & (cy >= 0) & (cy < hi)
                      & (cz >= 0) & (cz < hi))
                rows = np.flatnonzero(ok)
                cand = pack_anchors(cx[rows], cy[rows], cz[rows])
                pos = np.searchsorted(keys, cand)
                pos_c = np.minimum(pos, nc - 1)
                found = keys[pos_c] == cand
                mat[rows[found], col] = pos_c[found]
                col += 1
    mat.sort(axis=1)  # index order equals key order within a level
    live = mat < _SENTINEL
    cnt = live.sum(axis=1)
    ptr = np.zeros(nc + 1, dtype=np.int64)
    np.cumsum(cnt, out=ptr[1:])
    return ptr, mat[live]


_M2L_OFFSETS = np.array(list(product(range(-2, 4), repeat=3)), dtype=np.int64)


def _m2l_csr(tree, level: int):
    """Interaction pairs of one level as CSR (target -> sources ascending).

    Candidates are the 6x6x6 cells around the parent's 2x2x2 block; the
    Chebyshev >= 2 anchor test keeps exactly the well-separated ones. The
    class id encodes the anchor offset, -3..3 per axis.
    """
    lv = tree.levels[level]
    keys = lv.keys
    nc = keys.shape[0]
    hi = 1 << level
    ax, ay, az = unpack_keys(keys)
    ux = _M2L_OFFSETS[:, 0][None, :]
    uy = _M2L_OFFSETS[:, 1][None, :]
    uz = _M2L_OFFSETS[:, 2][None, :]
    cnt_parts, src_parts, cls_parts = [], [], []
    chunk = 8192
    for c0 in range(0, nc, chunk):
        c1 = min(nc, c0 + chunk)
        sx, sy, sz = ax[c0:c1, None], ay[c0:c1, None], az[c0:c1, None]
        bx = ((sx >> 1) << 1) + ux
        by = ((sy >> 1) << 1) + uy
        bz = ((sz >> 1) << 1) + uz
        dx, dy, dz = bx - sx, by - sy, bz - sz
        cheb = np.maximum(np.abs(dx), np.maximum(np.abs(dy), np.abs(dz)))
        ok = ((cheb >= 2) & (bx >= 0) & (bx < hi) & (by >= 0) & (by < hi)
              & (bz >= 0) & (bz < hi))
        flat = np.flatnonzero(ok)
        cand = pack_anchors(bx.ravel()[flat], by.ravel()[flat], bz.ravel()[flat])
        pos = np.searchsorted(keys, cand)
        pos_c = np.minimum(pos, nc - 1)
        found = keys[pos_c] == cand
        hit = flat[found]
        b = c1 - c0
        mat = np.full(b * 216, _SENTINEL, dtype=np.int64)
        mat[hit] = pos_c[found]
        cls = ((dx + 3) * 49 + (dy + 3) * 7 + (dz + 3)).astype(np.int16).ravel()
        matc = np.zeros(b * 216, dtype=np.int16)
        matc[hit] = cls[hit]
        mat = mat.reshape(b, 216)
        matc = matc.reshape(b, 216)
        order = np.argsort(mat, axis=1, kind="stable")
        mat = np.take_along_axis(mat, order, axis=1)
        matc = np.take_along_axis(matc, order, axis=1)
        live = mat < _SENTINEL
        cnt_parts.append(live.sum(axis=1))
        src_parts.append(mat[live].astype(np.int32))
        cls_parts.append(matc[live])
    cnt = np.concatenate(cnt_parts) if cnt_parts else np.zeros(0, dtype=np.int64)
    ptr = np.zeros(nc + 1, dtype=np.int64)
    np.cumsum(cnt, out=ptr[1:])
    src = np.concatenate(src_parts) if src_parts else np.zeros(0, dtype=np.int32)
    cls = np.concatenate(cls_parts) if cls_parts else np.zeros(0, dtype=np.int16)
    return ptr, src, cls


def _m2l_class_table(p: int, cell_size: float) -> np.ndarray:
    coef, iidx = hm.build_m2l_table(p)
    kh, kf = coef.shape
    tab = np.zeros((343, kh, kf), dtype=np.complex128)
    for dx in range(-3, 4):
        for dy in range(-3, 4):
            for dz in range(-3, 4):
                if max(abs(dx), abs(dy), abs(dz)) < 2:
                    continue
                t = np.array([dx, dy, dz], dtype=np.float64) * cell_size
                ivec = hm.irregular_solid(t, 2 * p - 2)
                tab[(dx + 3) * 49 + (dy + 3) * 7 + (dz + 3)] = coef * ivec[iidx]
    return tab


def _octant_tables(p: int, half: float):
    """Dense M2M / L2L matrices for each child octant at one child level."""
    m2m_coef, m2m_ridx = hm.build_m2m_table(p)
    l2l_coef, l2l_ridx = hm.build_l2l_table(p)
    kh, kf = m2m_coef.shape
    up = np.zeros((8, kh, kf), dtype=np.complex128)
    down = np.zeros((8, kh, kf), dtype=np.complex128)
    for oct in range(8):
        t = np.array([
            half if oct & 1 else -half,
            half if oct >> 1 & 1 else -half,
            half if oct >> 2 & 1 else -half,
        ])
        up[oct] = m2m_coef * hm.regular_solid(t, p - 1)[m2m_ridx]
        down[oct] = l2l_coef * hm.regular_solid(-t, p - 1)[l2l_ridx]
    return up, down


@dataclass
class _Plan:
    p: int
    kh: int
    kf: int
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    nb_ptr: np.ndarray
    nb_idx: np.ndarray
    nb_src_totals: np.ndarray
    p2p_pairs: int
    m2l_ptr: dict
    m2l_src: dict
    m2l_cls: dict
    m2l_tab: dict
    m2l_pairs: int
    m2m_tab: dict
    l2l_tab: dict
    rec: tuple
    grad: tuple


def _build_plan(tree) -> _Plan:
    p = tree.p
    pos = tree.bodies.position
    x = np.ascontiguousarray(pos[:, 0])
    y = np.ascontiguousarray(pos[:, 1])
    z = np.ascontiguousarray(pos[:, 2])
    nb_ptr, nb_idx = _neighbor_csr(tree)
    counts = tree.levels[tree.max_level].body_count
    src_totals = np.add.reduceat(counts[nb_idx], nb_ptr[:-1])
    p2p_pairs = int((counts * src_totals).sum() - len(tree.bodies))
    m2l_ptr, m2l_src, m2l_cls, m2l_tab = {}, {}, {}, {}
    m2l_pairs = 0
    for level in range(2, tree.max_level + 1):
        ptr, src, cls = _m2l_csr(tree, level)
        m2l_ptr[level], m2l_src[level], m2l_cls[level] = ptr, src, cls
        m2l_tab[level] = _m2l_class_table(p, tree.domain.cell_size(level))
        m2l_pairs += int(ptr[-1])
    m2m_tab, l2l_tab = {}, {}
    for child_level in range(1, tree.max_level + 1):
        up, down = _octant_tables(p, tree.half_width(child_level))
        m2m_tab[child_level] = up
        l2l_tab[child_level] = down
    return _Plan(
        p=p, kh=hm.num_half(p), kf=hm.num_full(p), x=x, y=y, z=z,
        nb_ptr=nb_ptr, nb_idx=nb_idx, nb_src_totals=src_totals,
        p2p_pairs=p2p_pairs, m2l_ptr=m2l_ptr, m2l_src=m2l_src,
        m2l_cls=m2l_cls, m2l_tab=m2l_tab, m2l_pairs=m2l_pairs,
        m2m_tab=m2m_tab, l2l_tab=l2l_tab,
        rec=hm.build_recurrence_tables(max(p - 1, 1)),
        grad=hm.build_gradient_tables(p),
    )


def _ensure_plan(tree) -> _Plan:
    plan = getattr(tree, "_plan", None)
    if plan is None:
        plan = _build_plan(tree)
        tree._plan = plan
    return plan


def _check_p(tree, p):
    if p is not None and p != tree.p:
        raise ValueError(f"tree was built for p={tree.p}, got p={p}")
    return tree.p


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def upward_sweep(tree, p=None, workers: int = 1, timing: TimingBreakdown = None):
    """P2M at the leaves, then M2M level by level up to the root.

    Resets all multipoles first, so rerunning is safe. Children are gathered
    in ascending key order per parent."""
    p = _check_p(tree, p)
    plan = _ensure_plan(tree)
    tb = timing if timing is not None else TimingBreakdown()
    q = tree.bodies.charge
    diag, a1, a2 = plan.rec

    t0 = time.perf_counter()
    for lv in tree.levels:
        lv.multipole[:] = 0.0
    leaf = tree.levels[tree.max_level]

    def p2m_worker(lo, hi):
        kn._p2m_leaves(plan.x, plan.y, plan.z, q, leaf.body_start,
                       leaf.body_count, leaf.centers, leaf.multipole,
                       lo, hi, p, diag, a1, a2)

    parallel_apply("P2M", leaf.ncells, p2m_worker, workers)
    t1 = time.perf_counter()
    tb.add("P2M", t1 - t0)

    for level in range(tree.max_level - 1, -1, -1):
        clv = tree.levels[level + 1]
        plv = tree.levels[level]
        tab = plan.m2m_tab[level + 1]

        def m2m_worker(lo, hi, clv=clv, plv=plv, tab=tab):
            kn._m2m_level(clv.multipole, clv.keys, plv.multipole,
                          plv.child_start, plv.child_count, tab, lo, hi, p)

        parallel_apply("M2M", plv.ncells, m2m_worker, workers)
    tb.add("M2M", time.perf_counter() - t1)
    return tb


def transfer_m2l(tree, p=None, workers: int = 1, level_order=None,
                 timing: TimingBreakdown = None) -> int:
    """Convert interaction-list multipoles into locals on every level >= 2.

    Levels are independent, so any level_order permutation gives bitwise
    identical locals; within a target the sources always apply in ascending
    key order. Resets all locals first. Returns the number of cell pairs.
    """
    p = _check_p(tree, p)
    plan = _ensure_plan(tree)
    tb = timing if timing is not None else TimingBreakdown()
    levels = list(range(2, tree.max_level + 1))
    if level_order is None:
        order = levels
    else:
        order = [int(l) for l in level_order]
        if sorted(order) != levels:
            raise ValueError("level_order must be a permutation of the levels >= 2")

    t0 = time.perf_counter()
    for lv in tree.levels:
        lv.local[:] = 0.0
    for level in order:
        lv = tree.levels[level]
        mfull = _expand_full(lv.multipole, p)
        ptr = plan.m2l_ptr[level]
        src = plan.m2l_src[level]
        cls = plan.m2l_cls[level]
        tab = plan.m2l_tab[level]

        def m2l_worker(lo, hi, lv=lv, mfull=mfull, ptr=ptr, src=src, cls=cls, tab=tab):
            kn._m2l_level(mfull, lv.local, ptr, src, cls, tab, lo, hi,
                          plan.kh, plan.kf)

        parallel_apply("M2L", lv.ncells, m2l_worker, workers)
    tb.add("M2L", time.perf_counter() - t0)
    return plan.m2l_pairs


def downward_sweep(tree, p=None, workers: int = 1, timing: TimingBreakdown = None):
    """L2L from level 2 down to the leaves, then L2P into the accumulators."""
    p = _check_p(tree, p)
    plan = _ensure_plan(tree)
    tb = timing if timing is not None else TimingBreakdown()

    t0 = time.perf_counter()
    for level in range(2, tree.max_level):
        plv = tree.levels[level]
        clv = tree.levels[level + 1]
        pfull = _expand_full(plv.local, p)
        tab = plan.l2l_tab[level + 1]

        def l2l_worker(lo, hi, clv=clv, pfull=pfull, tab=tab):
            kn._l2l_level(pfull, clv.local, clv.keys, clv.parent_index,
                          tab, lo, hi, plan.kh, plan.kf)

        parallel_apply("L2L", clv.ncells, l2l_worker, workers)
    t1 = time.perf_counter()
    tb.add("L2L", t1 - t0)

    leaf = tree.levels[tree.max_level]
    lfull = _expand_full(leaf.local, p)
    bodies = tree.bodies
    diag, a1, a2 = plan.rec
    gz_c, gz_i, gp_c, gp_i = plan.grad

    def l2p_worker(lo, hi):
        kn._l2p_leaves(plan.x, plan.y, plan.z, leaf.body_start, leaf.body_count,
                       leaf.centers, lfull, bodies.potential, bodies.force,
                       lo, hi, p, diag, a1, a2, gz_c, gz_i, gp_c, gp_i)

    parallel_apply("L2P", leaf.ncells, l2p_worker, workers)
    tb.add("L2P", time.perf_counter() - t1)
    return tb


def near_field(tree, mode: str = "double", workers: int = 1,
               timing: TimingBreakdown = None):
    """Direct interactions of every leaf with its occupied neighbors.

    Returns (pair_count, coincident_count). The pair count is arithmetic
    (sum over leaves of own bodies times neighborhood bodies, minus N). In
    single_near_field mode the pair arithmetic runs in float32 through a
    gathered source buffer and is added to the double accumulators once per
    body; coincidence is then judged on float32 coordinates.
    """
    plan = _ensure_plan(tree)
    tb = timing if timing is not None else TimingBreakdown()
    bodies = tree.bodies
    leaf = tree.levels[tree.max_level]

    t0 = time.perf_counter()
    if mode == "double":
        def worker(lo, hi):
            return kn._near_field_f64(
                plan.x, plan.y, plan.z, bodies.charge, leaf.body_start,
                leaf.body_count, plan.nb_ptr, plan.nb_idx, bodies.potential,
                bodies.force, lo, hi)

        ncoin = int(sum(parallel_apply("P2P", leaf.ncells, worker, workers)))
    elif mode == "single_near_field":
        x32 = plan.x.astype(np.float32)
        y32 = plan.y.astype(np.float32)
        z32 = plan.z.astype(np.float32)
        q32 = bodies.charge.astype(np.float32)
        n = len(bodies)
        pot32 = np.zeros(n, dtype=np.float32)
        fx32 = np.zeros(n, dtype=np.float32)
        fy32 = np.zeros(n, dtype=np.float32)
        fz32 = np.zeros(n, dtype=np.float32)
        maxbuf = int(plan.nb_src_totals.max())

        def worker(lo, hi):
            return kn._near_field_f32(
                x32, y32, z32, q32, leaf.body_start, leaf.body_count,
                plan.nb_ptr, plan.nb_idx, pot32, fx32, fy32, fz32,
                lo, hi, maxbuf)

        miss = sum(parallel_apply("P2P", leaf.ncells, worker, workers))
        ncoin = int(round(float(miss)))
        bodies.potential += pot32
        bodies.force[:, 0] += fx32
        bodies.force[:, 1] += fy32
        bodies.force[:, 2] += fz32
    else:
        raise ValueError("mode must be 'double' or 'single_near_field'")
    tb.add("P2P", time.perf_counter() - t0)
    return plan.p2p_pairs, ncoin


def fmm_evaluate(bodies, config, domain=None) -> FmmResult:
    """Full solve: build -> upward -> M2L -> downward -> near field.

    Overwrites the body accumulators and also returns potential and force
    arrays mapped back to the original input order.
    """
    bodies.reset_outputs()
    tree = build_tree(bodies, config, domain)
    tb = TimingBreakdown(n=len(bodies), p=config.p, workers=config.workers,
                         max_level=tree.max_level)
    tb.sort = tree.build_timing["sort"]
    tb.build_tree = tree.build_timing["buildTree"]
    t0 = time.perf_counter()
    _ensure_plan(tree)
    tb.build_tree += time.perf_counter() - t0

    upward_sweep(tree, workers=config.workers, timing=tb)
    m2l_pairs = transfer_m2l(tree, workers=config.workers, timing=tb)
    downward_sweep(tree, workers=config.workers, timing=tb)
    p2p_pairs, ncoin = near_field(tree, mode=config.precision,
                                  workers=config.workers, timing=tb)

    n = len(bodies)
    pot = np.empty(n)
    force = np.empty((n, 3))
    pot[bodies.original_index] = bodies.potential
    force[bodies.original_index] = bodies.force
    return FmmResult(potential=pot, force=force, tree=tree, timing=tb,
                     p2p_pairs=p2p_pairs, m2l_pairs=m2l_pairs,
                     coincident_pairs=ncoin)


def relative_l2_error(approx, reference) -> float:
    """sqrt(sum (a - b)^2 / sum b^2) over flattened arrays."""
    a = np.asarray(approx, dtype=np.float64).ravel()
    b = np.asarray(reference, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("arrays must have matching shapes")
    denom = float((b * b).sum())
    if denom == 0.0:
        raise ValueError("reference norm is zero")
    return float(np.sqrt(float(((a - b) ** 2).sum()) / denom))

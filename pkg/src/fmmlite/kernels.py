"""The six translation operators for the 3D Laplace kernel plus a direct sum.

Potentials follow phi = q / r with no softening. The force arrays accumulate
the negative gradient of the potential per unit target charge,
F_i += sum_j q_j (x_i - x_j) / r^3, so two positive charges get outward
(repulsive) entries; multiply by q_i for the physical force. Zero-distance
pairs are skipped: self-interactions silently, coincident distinct bodies
with a diagnostics count.

Object-level operators here run on plain numpy and are the readable
reference; the compiled counterparts used by the evaluator live at the bottom
and are checked against these in the test suite.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from . import harmonics as hm

_F32_EPS = np.float32(1e-30)
_F32_ONE = np.float32(1.0)
_F32_ZERO = np.float32(0.0)


@dataclass
class MultipoleCoeffs:
    """Multipole expansion: degrees 0..p-1, m >= 0 half storage."""

    p: int
    coeffs: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        if self.coeffs.shape != (hm.num_half(self.p),):
            raise ValueError("coefficient count must be p(p+1)/2")


@dataclass
class LocalCoeffs:
    """Local expansion with the same storage scheme as MultipoleCoeffs."""

    p: int
    coeffs: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        if self.coeffs.shape != (hm.num_half(self.p),):
            raise ValueError("coefficient count must be p(p+1)/2")


@dataclass
class InteractionBatch:
    """Single-precision structure-of-arrays pair batch for the near field.

    Padding lanes with zero charge contribute nothing; a padding source
    placed exactly on a target is likewise inert (zero-distance pairs are
    dropped).
    """

    tx: np.ndarray
    ty: np.ndarray
    tz: np.ndarray
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    sq: np.ndarray
    potential: np.ndarray = None
    fx: np.ndarray = None
    fy: np.ndarray = None
    fz: np.ndarray = None

    def __post_init__(self):
        for name in ("tx", "ty", "tz", "sx", "sy", "sz", "sq"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float32))
        nt = self.tx.shape[0]
        if not (self.ty.shape[0] == nt and self.tz.shape[0] == nt):
            raise ValueError("target streams have mismatched lengths")
        ns = self.sx.shape[0]
        if not (self.sy.shape[0] == ns and self.sz.shape[0] == ns and self.sq.shape[0] == ns):
            raise ValueError("source streams have mismatched lengths")
        for name in ("potential", "fx", "fy", "fz"):
            cur = getattr(self, name)
            if cur is None:
                setattr(self, name, np.zeros(nt, dtype=np.float32))
            else:
                arr = np.ascontiguousarray(cur, dtype=np.float32)
                if arr.shape[0] != nt:
                    raise ValueError("output streams have mismatched lengths")
                setattr(self, name, arr)

    @classmethod
    def make(cls, target_positions, source_positions, source_charges):
        t = np.asarray(target_positions, dtype=np.float64)
        s = np.asarray(source_positions, dtype=np.float64)
        q = np.asarray(source_charges, dtype=np.float64)
        return cls(t[:, 0], t[:, 1], t[:, 2], s[:, 0], s[:, 1], s[:, 2], q)


def _as_range(r, n):
    if isinstance(r, slice):
        lo, hi, step = r.indices(n)
        if step != 1:
            raise ValueError("only unit-stride ranges are supported")
        return lo, hi
    lo, hi = int(r[0]), int(r[1])
    if not 0 <= lo <= hi <= n:
        raise ValueError(f"range ({lo}, {hi}) outside 0..{n}")
    return lo, hi


def p2p(bodies, targets, sources, mode: str = "double_scalar") -> int:
    """Accumulate direct pair interactions of two body ranges into the targets.

    Gather-only: source accumulators are never written. Returns the number of
    coincident distinct pairs that were skipped. In single_batched mode the
    arithmetic runs in float32 and coincidence is judged on the float32
    coordinates.
    """
    n = len(bodies)
    t0, t1 = _as_range(targets, n)
    s0, s1 = _as_range(sources, n)
    pos, q = bodies.position, bodies.charge
    if mode == "double_scalar":
        ncoin = _p2p_ranges_f64(
            pos[:, 0], pos[:, 1], pos[:, 2], q, t0, t1, s0, s1,
            bodies.potential, bodies.force)
        return int(ncoin)
    if mode == "single_batched":
        batch = InteractionBatch.make(pos[t0:t1], pos[s0:s1], q[s0:s1])
        miss = _p2p_batched_f32(
            batch.tx, batch.ty, batch.tz, batch.sx, batch.sy, batch.sz, batch.sq,
            batch.potential, batch.fx, batch.fy, batch.fz)
        bodies.potential[t0:t1] += batch.potential
        bodies.force[t0:t1, 0] += batch.fx
        bodies.force[t0:t1, 1] += batch.fy
        bodies.force[t0:t1, 2] += batch.fz
        overlap = max(0, min(t1, s1) - max(t0, s0))
        return int(round(miss)) - overlap
    raise ValueError(f"unknown p2p mode {mode!r}")


def p2p_batched(batch: InteractionBatch):
    """Run the vectorizable single-precision kernel over a pair batch.

    Accumulates into the batch output streams and returns them."""
    _p2p_batched_f32(
        batch.tx, batch.ty, batch.tz, batch.sx, batch.sy, batch.sz, batch.sq,
        batch.potential, batch.fx, batch.fy, batch.fz)
    return batch.potential, batch.fx, batch.fy, batch.fz


def direct_sum(bodies, target_subset=None):
    """Exact O(N * targets) reference in double precision.

    Works on the current body order with ascending-index summation, skipping
    zero-distance pairs. Returns (potential, force) without touching the
    accumulators stored on the bodies.
    """
    n = len(bodies)
    if n == 0:
        raise ValueError("direct_sum needs at least one body")
    if target_subset is None:
        tsel = np.arange(n, dtype=np.int64)
    else:
        tsel = np.asarray(target_subset, dtype=np.int64)
        if tsel.size and (tsel.min() < 0 or tsel.max() >= n):
            raise ValueError("target subset out of range")
    pot = np.zeros(tsel.shape[0])
    force = np.zeros((tsel.shape[0], 3))
    pos = bodies.position
    _direct_sum_f64(pos[:, 0], pos[:, 1], pos[:, 2], bodies.charge, tsel, pot, force)
    return pot, force


def p2m(leaf, bodies, p: int) -> MultipoleCoeffs:
    """Expand the leaf's charges about its center, truncated after p terms."""
    lo, hi = leaf.body_start, leaf.body_start + leaf.body_count
    coeffs = np.zeros(hm.num_half(p), dtype=np.complex128)
    center = np.asarray(leaf.center, dtype=np.float64)
    for i in range(lo, hi):
        r_full = hm.regular_solid(bodies.position[i] - center, p - 1)
        for n in range(p):
            for m in range(0, n + 1):
                coeffs[hm.half_index(n, m)] += (
                    bodies.charge[i] * np.conj(r_full[hm.full_index(n, m)]))
    return MultipoleCoeffs(p, coeffs, center)


_TABLE_CACHE = {}


def _tables(p):
    if p not in _TABLE_CACHE:
        _TABLE_CACHE[p] = {
            "m2m": hm.build_m2m_table(p),
            "m2l": hm.build_m2l_table(p),
            "l2l": hm.build_l2l_table(p),
            "grad": hm.build_gradient_tables(p),
            "rec": hm.build_recurrence_tables(max(p - 1, 0)),
        }
    return _TABLE_CACHE[p]


def m2m(child: MultipoleCoeffs, parent_center) -> MultipoleCoeffs:
    """Translate a child expansion to the parent center (exact below order p)."""
    p = child.p
    parent_center = np.asarray(parent_center, dtype=np.float64).reshape(3)
    t = child.center - parent_center
    coef, ridx = _tables(p)["m2m"]
    if np.all(t == 0.0):
        return MultipoleCoeffs(p, child.coeffs.copy(), parent_center)
    basis = hm.regular_solid(t, p - 1)
    out = hm.fold_translation(coef, ridx, basis) @ hm.half_to_full(child.coeffs, p)
    return MultipoleCoeffs(p, out, parent_center)


def m2l(source: MultipoleCoeffs, target_center, p: int) -> LocalCoeffs:
    """Convert a source multipole into a local expansion about target_center."""
    if p != source.p:
        raise ValueError("m2l output order must match the source order")
    target_center = np.asarray(target_center, dtype=np.float64).reshape(3)
    t = source.center - target_center
    if np.all(t == 0.0):
        raise ValueError("m2l requires distinct centers")
    coef, iidx = _tables(p)["m2l"]
    basis = hm.irregular_solid(t, 2 * p - 2)
    out = hm.fold_translation(coef, iidx, basis) @ hm.half_to_full(source.coeffs, p)
    return LocalCoeffs(p, out, target_center)


def l2l(parent: LocalCoeffs, child_center) -> LocalCoeffs:
    """Re-center a local expansion (exact below order p)."""
    p = parent.p
    child_center = np.asarray(child_center, dtype=np.float64).reshape(3)
    t = parent.center - child_center
    if np.all(t == 0.0):
        return LocalCoeffs(p, parent.coeffs.copy(), child_center)
    coef, ridx = _tables(p)["l2l"]
    basis = hm.regular_solid(t, p - 1)
    out = hm.fold_translation(coef, ridx, basis) @ hm.half_to_full(parent.coeffs, p)
    return LocalCoeffs(p, out, child_center)


def l2p(local: LocalCoeffs, bodies, body_range):
    """Add the local expansion's value and analytic gradient to a body range."""
    lo, hi = _as_range(body_range, len(bodies))
    p = local.p
    lfull = hm.half_to_full(local.coeffs, p)
    gz_c, gz_i, gp_c, gp_i = _tables(p)["grad"]
    for i in range(lo, hi):
        r = hm.regular_solid(bodies.position[i] - local.center, p - 1)
        phi = complex(0.0)
        gz = complex(0.0)
        gp = complex(0.0)
        for b in range(hm.num_full(p)):
            phi += lfull[b] * r[b]
            gz += lfull[b] * gz_c[b] * r[gz_i[b]]
            gp += lfull[b] * gp_c[b] * r[gp_i[b]]
        bodies.potential[i] += phi.real
        bodies.force[i, 0] -= gp.real
        bodies.force[i, 1] -= gp.imag
        bodies.force[i, 2] -= gz.real


def evaluate_multipole(me: MultipoleCoeffs, point) -> float:
    """Truncated multipole series value at a point away from the center."""
    point = np.asarray(point, dtype=np.float64).reshape(3)
    d = point - me.center
    basis = hm.irregular_solid(d, me.p - 1)  # raises at the center
    return float((hm.half_to_full(me.coeffs, me.p) * basis).sum().real)


def evaluate_local(lc: LocalCoeffs, point) -> float:
    """Local series value at a point (testing helper, mirrors l2p's potential)."""
    point = np.asarray(point, dtype=np.float64).reshape(3)
    basis = hm.regular_solid(point - lc.center, lc.p - 1)
    return float((hm.half_to_full(lc.coeffs, lc.p) * basis).sum().real)


# ---------------------------------------------------------------------------
# compiled kernels (array-level, shared by the evaluator and the simulator)
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _p2p_ranges_f64(x, y, z, q, t0, t1, s0, s1, pot, force):
    ncoin = 0
    for i in range(t0, t1):
        xi, yi, zi = x[i], y[i], z[i]
        p_ = 0.0
        ax = 0.0
        ay = 0.0
        az = 0.0
        for j in range(s0, s1):
            if j == i:
                continue
            dx = xi - x[j]
            dy = yi - y[j]
            dz = zi - z[j]
            r2 = dx * dx + dy * dy + dz * dz
            if r2 > 0.0:
                inv = 1.0 / np.sqrt(r2)
                w = q[j] * inv
                p_ += w
                w3 = w * inv * inv
                ax += w3 * dx
                ay += w3 * dy
                az += w3 * dz
            else:
                ncoin += 1
        pot[i] += p_
        force[i, 0] += ax
        force[i, 1] += ay
        force[i, 2] += az
    return ncoin


@njit(cache=True, nogil=True, fastmath=True)
def _p2p_batched_f32(tx, ty, tz, sx, sy, sz, sq, pot, fx, fy, fz):
    miss = 0.0
    for i in range(tx.shape[0]):
        xi, yi, zi = tx[i], ty[i], tz[i]
        p_ = _F32_ZERO
        ax = _F32_ZERO
        ay = _F32_ZERO
        az = _F32_ZERO
        ms = _F32_ZERO
        for j in range(sx.shape[0]):
            dx = xi - sx[j]
            dy = yi - sy[j]
            dz = zi - sz[j]
            r2 = dx * dx + dy * dy + dz * dz
            r2g = max(r2, _F32_EPS)
            live = _F32_ONE if r2 > _F32_ZERO else _F32_ZERO
            inv = live / np.sqrt(r2g)
            w = sq[j] * inv
            p_ += w
            w3 = w * inv * inv
            ax += w3 * dx
            ay += w3 * dy
            az += w3 * dz
            ms += _F32_ONE - live
        pot[i] += p_
        fx[i] += ax
        fy[i] += ay
        fz[i] += az
        miss += ms
    return miss


@njit(cache=True, nogil=True)
def _direct_sum_f64(x, y, z, q, tsel, pot, force):
    n = x.shape[0]
    for t in range(tsel.shape[0]):
        i = tsel[t]
        xi, yi, zi = x[i], y[i], z[i]
        p_ = 0.0
        ax = 0.0
        ay = 0.0
        az = 0.0
        for j in range(n):
            if j == i:
                continue
            dx = xi - x[j]
            dy = yi - y[j]
            dz = zi - z[j]
            r2 = dx * dx + dy * dy + dz * dz
            if r2 > 0.0:
                inv = 1.0 / np.sqrt(r2)
                w = q[j] * inv
                p_ += w
                w3 = w * inv * inv
                ax += w3 * dx
                ay += w3 * dy
                az += w3 * dz
        pot[t] = p_
        force[t, 0] = ax
        force[t, 1] = ay
        force[t, 2] = az


@njit(cache=True, nogil=True)
def _near_field_f64(x, y, z, q, starts, counts, nptr, nidx, pot, force, lo, hi):
    """Leaf-against-neighbors P2P; one rounding chain per target body.

    Source order is ascending neighbor key then ascending body index, which
    is the global ascending sorted index, so worker count cannot change bits.
    """
    ncoin = 0
    for c in range(lo, hi):
        t0 = starts[c]
        t1 = t0 + counts[c]
        e0 = nptr[c]
        e1 = nptr[c + 1]
        for i in range(t0, t1):
            xi, yi, zi = x[i], y[i], z[i]
            p_ = 0.0
            ax = 0.0
            ay = 0.0
            az = 0.0
            for e in range(e0, e1):
                s = nidx[e]
                s0 = starts[s]
                s1 = s0 + counts[s]
                for j in range(s0, s1):
                    if j == i:
                        continue
                    dx = xi - x[j]
                    dy = yi - y[j]
                    dz = zi - z[j]
                    r2 = dx * dx + dy * dy + dz * dz
                    if r2 > 0.0:
                        inv = 1.0 / np.sqrt(r2)
                        w = q[j] * inv
                        p_ += w
                        w3 = w * inv * inv
                        ax += w3 * dx
                        ay += w3 * dy
                        az += w3 * dz
                    else:
                        ncoin += 1
            pot[i] += p_
            force[i, 0] += ax
            force[i, 1] += ay
            force[i, 2] += az
    return ncoin


@njit(cache=True, nogil=True, fastmath=True)
def _near_field_f32(x, y, z, q, starts, counts, nptr, nidx, pot, fx, fy, fz,
                    lo, hi, maxbuf):
    """Buffered single-precision near field; zero-distance pairs are inert."""
    bx = np.empty(maxbuf, dtype=np.float32)
    by = np.empty(maxbuf, dtype=np.float32)
    bz = np.empty(maxbuf, dtype=np.float32)
    bq = np.empty(maxbuf, dtype=np.float32)
    miss = 0.0
    for c in range(lo, hi):
        blen = 0
        for e in range(nptr[c], nptr[c + 1]):
            s = nidx[e]
            s0 = starts[s]
            s1 = s0 + counts[s]
            for j in range(s0, s1):
                bx[blen] = x[j]
                by[blen] = y[j]
                bz[blen] = z[j]
                bq[blen] = q[j]
                blen += 1
        t0 = starts[c]
        t1 = t0 + counts[c]
        for i in range(t0, t1):
            xi, yi, zi = x[i], y[i], z[i]
            p_ = _F32_ZERO
            ax = _F32_ZERO
            ay = _F32_ZERO
            az = _F32_ZERO
            ms = _F32_ZERO
            for j in range(blen):
                dx = xi - bx[j]
                dy = yi - by[j]
                dz = zi - bz[j]
                r2 = dx * dx + dy * dy + dz * dz
                r2g = max(r2, _F32_EPS)
                live = _F32_ONE if r2 > _F32_ZERO else _F32_ZERO
                inv = live / np.sqrt(r2g)
                w = bq[j] * inv
                p_ += w
                w3 = w * inv * inv
                ax += w3 * dx
                ay += w3 * dy
                az += w3 * dz
                ms += _F32_ONE - live
            pot[i] += p_
            fx[i] += ax
            fy[i] += ay
            fz[i] += az
            miss += ms - _F32_ONE  # one exact self hit per target
    return miss


@njit(cache=True, nogil=True)
def _p2m_leaves(x, y, z, q, starts, counts, centers, mpole, lo, hi, p,
                diag, a1, a2):
    kh = p * (p + 1) // 2
    r = np.empty(kh, dtype=np.complex128)
    for c in range(lo, hi):
        cx, cy, cz = centers[c, 0], centers[c, 1], centers[c, 2]
        b0 = starts[c]
        b1 = b0 + counts[c]
        for i in range(b0, b1):
            dx = x[i] - cx
            dy = y[i] - cy
            dz = z[i] - cz
            rho2 = dx * dx + dy * dy + dz * dz
            u = complex(dx, dy)
            r[0] = 1.0 + 0.0j
            for m in range(1, p):
                prev = r[(m - 1) * m // 2 + (m - 1)]
                r[m * (m + 1) // 2 + m] = -u * diag[m] * prev
            for m in range(0, p):
                for n in range(m + 1, p):
                    acc = a1[n, m] * dz * r[(n - 1) * n // 2 + m]
                    if n - 2 >= m:
                        acc -= a2[n, m] * rho2 * r[(n - 2) * (n - 1) // 2 + m]
                    r[n * (n + 1) // 2 + m] = acc
            qi = q[i]
            for k in range(kh):
                mpole[c, k] += qi * np.conj(r[k])


@njit(cache=True, nogil=True)
def _m2m_level(child_half, child_keys, parent_half, child_start, child_count,
               t_oct, lo, hi, p):
    """Gather children (ascending key) into each parent's multipole."""
    kh = p * (p + 1) // 2
    kf = p * p
    buf = np.empty(kf, dtype=np.complex128)
    for par in range(lo, hi):
        c0 = child_start[par]
        c1 = c0 + child_count[par]
        for c in range(c0, c1):
            oct = child_keys[c] & 7
            for n in range(p):
                base_f = n * n + n
                base_h = n * (n + 1) // 2
                buf[base_f] = child_half[c, base_h]
                for m in range(1, n + 1):
                    v = child_half[c, base_h + m]
                    buf[base_f + m] = v
                    buf[base_f - m] = np.conj(v)
            for a in range(kh):
                s = complex(0.0)
                for b in range(kf):
                    s += t_oct[oct, a, b] * buf[b]
                parent_half[par, a] += s


@njit(cache=True, nogil=True)
def _m2l_level(mfull, local_half, ptr, src, cls, t_cls, lo, hi, kh, kf):
    """Per-target contraction over its interaction list, ascending source key."""
    for t in range(lo, hi):
        for e in range(ptr[t], ptr[t + 1]):
            s = src[e]
            k = cls[e]
            for a in range(kh):
                acc = complex(0.0)
                for b in range(kf):
                    acc += t_cls[k, a, b] * mfull[s, b]
                local_half[t, a] += acc


@njit(cache=True, nogil=True)
def _l2l_level(parent_full, child_half, child_keys, parent_index, t_oct,
               lo, hi, kh, kf):
    for c in range(lo, hi):
        par = parent_index[c]
        oct = child_keys[c] & 7
        for a in range(kh):
            acc = complex(0.0)
            for b in range(kf):
                acc += t_oct[oct, a, b] * parent_full[par, b]
            child_half[c, a] += acc


@njit(cache=True, nogil=True)
def _l2p_leaves(x, y, z, starts, counts, centers, lfull, pot, force, lo, hi, p,
                diag, a1, a2, gz_c, gz_i, gp_c, gp_i):
    kf = p * p
    r = np.empty(kf, dtype=np.complex128)
    for c in range(lo, hi):
        cx, cy, cz = centers[c, 0], centers[c, 1], centers[c, 2]
        b0 = starts[c]
        b1 = b0 + counts[c]
        for i in range(b0, b1):
            dx = x[i] - cx
            dy = y[i] - cy
            dz = z[i] - cz
            rho2 = dx * dx + dy * dy + dz * dz
            u = complex(dx, dy)
            r[0] = 1.0 + 0.0j
            for m in range(1, p):
                prev = r[(m - 1) * (m - 1) + (m - 1) + (m - 1)]
                r[m * m + m + m] = -u * diag[m] * prev
            for m in range(0, p):
                for n in range(m + 1, p):
                    acc = a1[n, m] * dz * r[(n - 1) * (n - 1) + (n - 1) + m]
                    if n - 2 >= m:
                        acc -= a2[n, m] * rho2 * r[(n - 2) * (n - 2) + (n - 2) + m]
                    r[n * n + n + m] = acc
            for n in range(1, p):
                for m in range(1, n + 1):
                    r[n * n + n - m] = np.conj(r[n * n + n + m])
            phi = complex(0.0)
            gz = complex(0.0)
            gp = complex(0.0)
            for b in range(kf):
                lb = lfull[c, b]
                phi += lb * r[b]
                gz += lb * (gz_c[b] * r[gz_i[b]])
                gp += lb * (gp_c[b] * r[gp_i[b]])
            pot[i] += phi.real
            force[i, 0] -= gp.real
            force[i, 1] -= gp.imag
            force[i, 2] -= gz.real

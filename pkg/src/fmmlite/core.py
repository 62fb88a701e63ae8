"""Morton-keyed uniform octree over structure-of-arrays particle data.

Bodies are permuted into Morton order during tree construction and cells are
materialized level by level, keeping only occupied cells. Each cell addresses
its bodies through a start/count pair into the sorted arrays, so a subtree is
always a contiguous slice.
"""

import time
from dataclasses import dataclass, field

import numpy as np

MAX_LEVEL = 21  # 3 * 21 = 63 interleaved bits, fits a signed 64-bit key

# bit-spreading masks for 21-bit coordinates (one coordinate bit every 3 bits)
_M1 = np.uint64(0x1F00000000FFFF)
_M2 = np.uint64(0x1F0000FF0000FF)
_M3 = np.uint64(0x100F00F00F00F00F)
_M4 = np.uint64(0x10C30C30C30C30C3)
_M5 = np.uint64(0x1249249249249249)


class ConfigError(ValueError):
    """Raised for invalid solver configuration (depth, worker count, ...)."""


def _spread_bits(v):
    """Insert two zero bits between the low 21 bits of each element."""
    v = v.astype(np.uint64)
    v = (v | v << np.uint64(32)) & _M1
    v = (v | v << np.uint64(16)) & _M2
    v = (v | v << np.uint64(8)) & _M3
    v = (v | v << np.uint64(4)) & _M4
    v = (v | v << np.uint64(2)) & _M5
    return v


def _compact_bits(v):
    v = v.astype(np.uint64) & _M5
    v = (v | v >> np.uint64(2)) & _M4
    v = (v | v >> np.uint64(4)) & _M3
    v = (v | v >> np.uint64(8)) & _M2
    v = (v | v >> np.uint64(16)) & _M1
    v = (v | v >> np.uint64(32)) & np.uint64(0x1FFFFF)
    return v


def pack_anchors(ix, iy, iz):
    """Interleave integer anchors into packed keys, z bit above y above x."""
    ix = np.asarray(ix, dtype=np.uint64)
    iy = np.asarray(iy, dtype=np.uint64)
    iz = np.asarray(iz, dtype=np.uint64)
    packed = _spread_bits(ix) | _spread_bits(iy) << np.uint64(1) | _spread_bits(iz) << np.uint64(2)
    return packed.astype(np.int64)


def unpack_keys(keys):
    """Inverse of pack_anchors; returns (ix, iy, iz) int64 arrays."""
    k = np.asarray(keys, dtype=np.int64).astype(np.uint64)
    ix = _compact_bits(k)
    iy = _compact_bits(k >> np.uint64(1))
    iz = _compact_bits(k >> np.uint64(2))
    return ix.astype(np.int64), iy.astype(np.int64), iz.astype(np.int64)


@dataclass(frozen=True)
class MortonKey:
    """Identifier of one cell: tree level, integer anchor, interleaved key.

    The packed value interleaves anchor bits most-significant first with the
    z bit above the y bit above the x bit inside every 3-bit group, so packed
    order within a level equals lexicographic order of the interleaved bits.
    """

    level: int
    anchor: tuple
    packed: int

    def parent(self):
        if self.level == 0:
            raise ValueError("root key has no parent")
        ix, iy, iz = self.anchor
        return MortonKey(self.level - 1, (ix >> 1, iy >> 1, iz >> 1), self.packed >> 3)


def morton_encode(ix: int, iy: int, iz: int, level: int) -> MortonKey:
    """Build the key of the cell with integer anchor (ix, iy, iz) at a level.

    Raises ValueError when the level is outside 0..MAX_LEVEL or any anchor
    component is outside 0..2**level - 1.
    """
    if not 0 <= level <= MAX_LEVEL:
        raise ValueError(f"level {level} outside 0..{MAX_LEVEL}")
    hi = 1 << level
    for name, v in (("ix", ix), ("iy", iy), ("iz", iz)):
        if not 0 <= v < hi:
            raise ValueError(f"{name}={v} outside 0..{hi - 1} at level {level}")
    packed = int(pack_anchors([ix], [iy], [iz])[0])
    return MortonKey(level, (int(ix), int(iy), int(iz)), packed)


def key_from_packed(packed: int, level: int) -> MortonKey:
    """Reconstruct a MortonKey from its packed value and level."""
    if not 0 <= level <= MAX_LEVEL:
        raise ValueError(f"level {level} outside 0..{MAX_LEVEL}")
    if not 0 <= packed < 1 << (3 * level) or (level == 0 and packed != 0):
        raise ValueError(f"packed value {packed} malformed for level {level}")
    ix, iy, iz = unpack_keys([packed])
    return MortonKey(level, (int(ix[0]), int(iy[0]), int(iz[0])), int(packed))


def morton_decode(key: MortonKey):
    """Return (level, ix, iy, iz) for a key; exact inverse of morton_encode."""
    ix, iy, iz = key.anchor
    check = key_from_packed(key.packed, key.level)
    if check.anchor != key.anchor:
        raise ValueError("packed value inconsistent with anchor")
    return (key.level, ix, iy, iz)


@dataclass(frozen=True, eq=False)
class CubeDomain:
    """Axis-aligned cube given by its minimum corner and edge width."""

    lo: np.ndarray
    width: float

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=np.float64).reshape(3).copy())
        object.__setattr__(self, "width", float(self.width))
        if not self.width > 0:
            raise ValueError("domain width must be positive")

    @property
    def center(self):
        return self.lo + 0.5 * self.width

    @property
    def half_width(self):
        return 0.5 * self.width

    def cell_size(self, level: int) -> float:
        return self.width / (1 << level)

    @classmethod
    def bounding(cls, positions, margin: float = 1e-6):
        """Tight cube around the points, expanded by a relative margin.

        The margin keeps points on the maximum face strictly inside the
        half-open cells used for keying.
        """
        pos = np.asarray(positions, dtype=np.float64)
        lo = pos.min(axis=0)
        hi = pos.max(axis=0)
        width = float((hi - lo).max())
        if width == 0.0:
            width = 1.0
        width *= 1.0 + margin
        center = 0.5 * (lo + hi)
        return cls(center - 0.5 * width, width)


class Bodies:
    """Particle set in structure-of-arrays form.

    Arrays: position (N, 3), charge (N,), potential (N,), force (N, 3) and
    original_index (N,). The force array accumulates the negative potential
    gradient per unit target charge; multiply by charge[i] for the physical
    force on body i. original_index tracks pre-sort identity once build_tree
    has permuted the arrays into Morton order.
    """

    def __init__(self, position, charge):
        self.position = np.ascontiguousarray(position, dtype=np.float64)
        if self.position.ndim != 2 or self.position.shape[1] != 3:
            raise ValueError("position must have shape (N, 3)")
        self.charge = np.ascontiguousarray(charge, dtype=np.float64)
        if self.charge.shape != (self.position.shape[0],):
            raise ValueError("charge length must match position")
        n = self.position.shape[0]
        self.potential = np.zeros(n)
        self.force = np.zeros((n, 3))
        self.original_index = np.arange(n, dtype=np.int64)

    def __len__(self):
        return self.position.shape[0]

    @property
    def n(self):
        return self.position.shape[0]

    def permute(self, perm):
        self.position = np.ascontiguousarray(self.position[perm])
        self.charge = np.ascontiguousarray(self.charge[perm])
        self.potential = np.ascontiguousarray(self.potential[perm])
        self.force = np.ascontiguousarray(self.force[perm])
        self.original_index = np.ascontiguousarray(self.original_index[perm])

    def reset_outputs(self):
        self.potential[:] = 0.0
        self.force[:] = 0.0

    def copy(self):
        dup = Bodies(self.position.copy(), self.charge.copy())
        dup.potential = self.potential.copy()
        dup.force = self.force.copy()
        dup.original_index = self.original_index.copy()
        return dup


_PRECISIONS = ("double", "single_near_field")


@dataclass
class FmmConfig:
    """Solver configuration.

    Exactly one of ncrit / max_level drives the uniform tree depth. When both
    are None, ncrit defaults to 64 in double precision and 256 when the
    batched single-precision near field is active (bigger leaves keep that
    kernel busy).
    """

    p: int = 3
    ncrit: int = None
    max_level: int = None
    precision: str = "double"
    workers: int = 1
    theta_mode: str = "interaction_list"

    def __post_init__(self):
        if self.p < 1:
            raise ConfigError("p must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.precision not in _PRECISIONS:
            raise ConfigError(f"precision must be one of {_PRECISIONS}")
        if self.theta_mode != "interaction_list":
            raise ConfigError("only the interaction_list criterion is supported")
        if self.ncrit is not None and self.max_level is not None:
            raise ConfigError("give ncrit or max_level, not both")
        if self.ncrit is not None and self.ncrit < 1:
            raise ConfigError("ncrit must be >= 1")
        if self.max_level is not None and not 0 <= self.max_level <= MAX_LEVEL:
            raise ConfigError(f"max_level outside 0..{MAX_LEVEL}")

    @property
    def effective_ncrit(self):
        if self.max_level is not None:
            return None
        if self.ncrit is not None:
            return self.ncrit
        return 256 if self.precision == "single_near_field" else 64

    def depth_for(self, n: int) -> int:
        """Uniform depth: smallest L with ncrit * 8**L >= n (integer exact)."""
        if self.max_level is not None:
            return self.max_level
        ncrit = self.effective_ncrit
        level = 0
        while ncrit << (3 * level) < n:
            level += 1
            if level > MAX_LEVEL:
                raise ConfigError(f"depth for N={n}, ncrit={ncrit} exceeds MAX_LEVEL={MAX_LEVEL}")
        return level


def point_to_key(position, domain: CubeDomain, level: int) -> MortonKey:
    """Key of the level-`level` cell containing the point.

    Cells are half-open: a point exactly on an internal boundary belongs to
    the higher-index cell. Membership is decided in double arithmetic, so a
    point within rounding distance of the maximum face may be rejected;
    callers keep a margin (see CubeDomain.bounding).
    """
    if not 0 <= level <= MAX_LEVEL:
        raise ValueError(f"level {level} outside 0..{MAX_LEVEL}")
    pos = np.asarray(position, dtype=np.float64).reshape(3)
    rel = (pos - domain.lo) / domain.width
    if np.any(rel < 0.0) or np.any(rel >= 1.0):
        raise ValueError(f"position {pos.tolist()} outside domain")
    scaled = rel * float(1 << level)  # power-of-two scaling, no rounding
    ix, iy, iz = (int(scaled[0]), int(scaled[1]), int(scaled[2]))
    return morton_encode(ix, iy, iz, level)


def _keys_for_positions(position, domain: CubeDomain, level: int):
    """Vectorized point_to_key over an (N, 3) array; same arithmetic."""
    rel = (position - domain.lo) / domain.width
    if np.any(rel < 0.0) or np.any(rel >= 1.0):
        raise ValueError("domain does not enclose all bodies")
    scaled = rel * float(1 << level)
    ipos = scaled.astype(np.int64)
    return pack_anchors(ipos[:, 0], ipos[:, 1], ipos[:, 2])


@dataclass
class LevelCells:
    """Occupied cells of one level, key-sorted, as parallel arrays."""

    keys: np.ndarray          # int64 packed keys, strictly increasing
    centers: np.ndarray       # (nc, 3) float64
    body_start: np.ndarray    # int64 into the sorted body arrays
    body_count: np.ndarray    # int64
    child_start: np.ndarray   # int64 into the next level (leaves: 0)
    child_count: np.ndarray   # int64 (leaves: 0)
    parent_index: np.ndarray  # int64 into the previous level (root: -1)
    multipole: np.ndarray     # (nc, p(p+1)/2) complex128
    local: np.ndarray         # (nc, p(p+1)/2) complex128

    @property
    def ncells(self):
        return self.keys.shape[0]


@dataclass(eq=False)
class Cell:
    """Read-mostly view of one tree cell."""

    key: MortonKey
    level: int
    lindex: int
    center: np.ndarray
    half_width: float
    body_start: int
    body_count: int
    child_start: int
    child_count: int
    child_mask: int
    is_leaf: bool
    multipole: np.ndarray
    local: np.ndarray


class Tree:
    """Uniform-depth octree with per-level cell arrays and sorted bodies."""

    def __init__(self, bodies, domain, max_level, p, levels, build_timing):
        self.bodies = bodies
        self.domain = domain
        self.max_level = max_level
        self.p = p
        self.levels = levels
        self.build_timing = build_timing

    @property
    def ncells(self):
        return sum(lv.ncells for lv in self.levels)

    @property
    def level_offsets(self):
        """Global cell-index range [start, end) per level."""
        sizes = [lv.ncells for lv in self.levels]
        starts = np.concatenate(([0], np.cumsum(sizes)))
        return [(int(starts[i]), int(starts[i + 1])) for i in range(len(sizes))]

    def half_width(self, level: int) -> float:
        return self.domain.half_width / (1 << level)

    def cell_at(self, level: int, lindex: int) -> Cell:
        lv = self.levels[level]
        packed = int(lv.keys[lindex])
        key = key_from_packed(packed, level)
        cs, cc = int(lv.child_start[lindex]), int(lv.child_count[lindex])
        mask = 0
        if cc:
            child_keys = self.levels[level + 1].keys[cs:cs + cc]
            mask = int(np.bitwise_or.reduce(1 << (child_keys & 7)))
        return Cell(
            key=key,
            level=level,
            lindex=lindex,
            center=lv.centers[lindex],
            half_width=self.half_width(level),
            body_start=int(lv.body_start[lindex]),
            body_count=int(lv.body_count[lindex]),
            child_start=cs,
            child_count=cc,
            child_mask=mask,
            is_leaf=level == self.max_level,
            multipole=lv.multipole[lindex],
            local=lv.local[lindex],
        )

    def cell(self, gindex: int) -> Cell:
        for level, (start, end) in enumerate(self.level_offsets):
            if start <= gindex < end:
                return self.cell_at(level, gindex - start)
        raise IndexError(f"cell index {gindex} out of range")

    def find(self, key: MortonKey):
        """Cell with the given key, or None when that cell is empty."""
        lv = self.levels[key.level]
        i = int(np.searchsorted(lv.keys, key.packed))
        if i < lv.ncells and lv.keys[i] == key.packed:
            return self.cell_at(key.level, i)
        return None

    def leaf_cells(self):
        lv = self.levels[self.max_level]
        return [self.cell_at(self.max_level, i) for i in range(lv.ncells)]


def build_tree(bodies: Bodies, config: FmmConfig, domain: CubeDomain = None) -> Tree:
    """Sort bodies by Morton key and materialize all occupied cells.

    The depth is uniform: every leaf sits at max_level, derived from ncrit
    (smallest L with ncrit * 8**L >= N) unless the config prescribes a level.
    Wall times of the two stages are recorded under 'sort' and 'buildTree'.
    """
    n = len(bodies)
    if n == 0:
        raise ValueError("cannot build a tree with zero bodies")
    max_level = config.depth_for(n)

    t0 = time.perf_counter()
    if domain is None:
        domain = CubeDomain.bounding(bodies.position)
    leaf_keys = _keys_for_positions(bodies.position, domain, max_level)
    perm = np.argsort(leaf_keys, kind="stable")
    bodies.permute(perm)
    leaf_keys = leaf_keys[perm]
    t1 = time.perf_counter()

    ncoef = config.p * (config.p + 1) // 2
    levels = [None] * (max_level + 1)
    # leaf level from key runs, then parents by shifting 3 bits per step
    starts = np.concatenate(([0], np.flatnonzero(np.diff(leaf_keys)) + 1))
    keys = leaf_keys[starts]
    counts = np.diff(np.concatenate((starts, [n])))
    body_start = starts.astype(np.int64)
    child_start = np.zeros(keys.shape[0], dtype=np.int64)
    child_count = np.zeros(keys.shape[0], dtype=np.int64)
    for level in range(max_level, -1, -1):
        cs = domain.cell_size(level)
        ix, iy, iz = unpack_keys(keys)
        centers = np.empty((keys.shape[0], 3))
        centers[:, 0] = domain.lo[0] + (ix + 0.5) * cs
        centers[:, 1] = domain.lo[1] + (iy + 0.5) * cs
        centers[:, 2] = domain.lo[2] + (iz + 0.5) * cs
        levels[level] = LevelCells(
            keys=keys.astype(np.int64),
            centers=centers,
            body_start=body_start.astype(np.int64),
            body_count=counts.astype(np.int64),
            child_start=child_start,
            child_count=child_count,
            parent_index=np.empty(keys.shape[0], dtype=np.int64),
            multipole=np.zeros((keys.shape[0], ncoef), dtype=np.complex128),
            local=np.zeros((keys.shape[0], ncoef), dtype=np.complex128),
        )
        if level == 0:
            levels[0].parent_index[:] = -1
            break
        pkeys = keys >> 3
        runs = np.concatenate(([0], np.flatnonzero(np.diff(pkeys)) + 1))
        child_start = runs.astype(np.int64)
        child_count = np.diff(np.concatenate((runs, [pkeys.shape[0]]))).astype(np.int64)
        levels[level].parent_index[:] = np.repeat(
            np.arange(runs.shape[0], dtype=np.int64), child_count)
        keys = pkeys[runs]
        body_start = body_start[runs]
        counts = np.add.reduceat(counts, runs)
    t2 = time.perf_counter()

    timing = {"sort": t1 - t0, "buildTree": t2 - t1}
    return Tree(bodies, domain, max_level, config.p, levels, timing)


def _candidate_neighbors(anchor, level):
    """In-bounds 3x3x3 anchor offsets around a cell, packed and sorted."""
    ix, iy, iz = anchor
    hi = 1 << level
    cand = []
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                jx, jy, jz = ix + dx, iy + dy, iz + dz
                if 0 <= jx < hi and 0 <= jy < hi and 0 <= jz < hi:
                    cand.append((jx, jy, jz))
    arr = np.array(cand, dtype=np.int64)
    packed = pack_anchors(arr[:, 0], arr[:, 1], arr[:, 2])
    return np.sort(packed)


def neighbor_list(cell: Cell, tree: Tree):
    """Occupied same-level cells within one anchor step, including the cell.

    Free-space boundaries: no periodic wraparound. Results are sorted by
    packed key, which is the accumulation order the evaluator uses.
    """
    lv = tree.levels[cell.level]
    packed = _candidate_neighbors(cell.key.anchor, cell.level)
    pos = np.searchsorted(lv.keys, packed)
    out = []
    for want, i in zip(packed, pos):
        if i < lv.ncells and lv.keys[i] == want:
            out.append(tree.cell_at(cell.level, int(i)))
    return out


def interaction_list(cell: Cell, tree: Tree):
    """Same-level cells that are children of the parent's neighbors but not
    neighbors of the cell itself (at most 189 in 3D), sorted by packed key.

    Defined for levels >= 2; closer to the root every same-level cell is a
    neighbor and the list is empty by construction.
    """
    if cell.level < 2:
        raise ValueError("interaction_list requires level >= 2")
    lv = tree.levels[cell.level]
    plv = tree.levels[cell.level - 1]
    ix, iy, iz = cell.key.anchor
    parent_anchor = (ix >> 1, iy >> 1, iz >> 1)
    parent_packed = _candidate_neighbors(parent_anchor, cell.level - 1)
    ppos = np.searchsorted(plv.keys, parent_packed)
    out = []
    for want, i in zip(parent_packed, ppos):
        if not (i < plv.ncells and plv.keys[i] == want):
            continue
        base = int(want) << 3
        for octant in range(8):
            ck = base + octant
            j = int(np.searchsorted(lv.keys, ck))
            if not (j < lv.ncells and lv.keys[j] == ck):
                continue
            jx, jy, jz = unpack_keys([ck])
            d = max(abs(int(jx[0]) - ix), abs(int(jy[0]) - iy), abs(int(jz[0]) - iz))
            if d > 1:
                out.append(tree.cell_at(cell.level, j))
    return out

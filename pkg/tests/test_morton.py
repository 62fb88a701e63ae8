"""Morton key packing, decoding, ordering, and point-to-cell mapping."""

from fractions import Fraction

import numpy as np
import pytest

import fmmlite as fl


def interleave_oracle(ix: int, iy: int, iz: int, level: int) -> int:
    """Bit-by-bit interleave, written independently of the magic-mask path."""
    out = 0
    for b in range(level):
        out |= ((ix >> b) & 1) << (3 * b)
        out |= ((iy >> b) & 1) << (3 * b + 1)
        out |= ((iz >> b) & 1) << (3 * b + 2)
    return out


def test_known_keys():
    assert fl.morton_encode(0, 0, 0, 0).packed == 0
    assert fl.morton_encode(1, 1, 1, 1).packed == 7
    assert fl.morton_encode(1, 2, 3, 2).packed == 53


def test_decode_inverts_encode():
    assert fl.morton_decode(fl.morton_encode(5, 0, 2, 3)) == (3, 5, 0, 2)
    key = fl.key_from_packed(53, 2)
    assert key.anchor == (1, 2, 3)
    assert fl.morton_decode(key) == (2, 1, 2, 3)


def test_parent_key():
    key = fl.morton_encode(1, 2, 3, 2)
    parent = key.parent()
    assert parent.level == 1
    assert parent.anchor == (0, 1, 1)
    assert parent.packed == key.packed >> 3
    with pytest.raises(ValueError):
        fl.morton_encode(0, 0, 0, 0).parent()


def test_encode_validation():
    with pytest.raises(ValueError):
        fl.morton_encode(0, 0, 0, -1)
    with pytest.raises(ValueError):
        fl.morton_encode(0, 0, 0, fl.MAX_LEVEL + 1)
    with pytest.raises(ValueError):
        fl.morton_encode(2, 0, 0, 1)  # anchor needs level 2
    with pytest.raises(ValueError):
        fl.morton_encode(-1, 0, 0, 4)


def test_key_from_packed_validation():
    with pytest.raises(ValueError):
        fl.key_from_packed(1, 0)  # root admits only packed 0
    with pytest.raises(ValueError):
        fl.key_from_packed(8, 1)  # level 1 holds 3 bits
    with pytest.raises(ValueError):
        fl.key_from_packed(-1, 3)


def test_pack_matches_oracle_at_max_level():
    rng = np.random.default_rng(11)
    n = 100_000
    hi = 1 << fl.MAX_LEVEL
    ix = rng.integers(0, hi, n)
    iy = rng.integers(0, hi, n)
    iz = rng.integers(0, hi, n)
    packed = fl.pack_anchors(ix, iy, iz)
    for i in rng.choice(n, 200, replace=False):
        assert packed[i] == interleave_oracle(int(ix[i]), int(iy[i]), int(iz[i]), fl.MAX_LEVEL)
    jx, jy, jz = fl.unpack_keys(packed)
    assert np.array_equal(jx, ix) and np.array_equal(jy, iy) and np.array_equal(jz, iz)


def test_sort_order_matches_bitgroup_comparison():
    # sorting packed values must equal lexicographic order of the 3-bit
    # groups read most-significant first with z above y above x
    rng = np.random.default_rng(12)
    level = 7
    n = 10_000
    anchors = rng.integers(0, 1 << level, (n, 3))
    packed = fl.pack_anchors(anchors[:, 0], anchors[:, 1], anchors[:, 2])

    def groups(a):
        ix, iy, iz = (int(v) for v in a)
        return tuple(
            (((iz >> b) & 1) << 2) | (((iy >> b) & 1) << 1) | ((ix >> b) & 1)
            for b in reversed(range(level)))

    by_oracle = sorted(range(n), key=lambda i: groups(anchors[i]))
    assert np.array_equal(np.sort(packed), packed[by_oracle])


def test_point_to_key_octants():
    dom = fl.CubeDomain(np.zeros(3), 1.0)
    center = fl.point_to_key([0.5, 0.5, 0.5], dom, 1)
    assert center.anchor == (1, 1, 1)  # half-open cells: boundary goes up
    corner = fl.point_to_key([0.0, 0.0, 0.0], dom, 1)
    assert corner.anchor == (0, 0, 0)
    assert fl.point_to_key([0.25, 0.75, 0.25], dom, 2).anchor == (1, 3, 1)


def test_point_to_key_rejects_outside():
    dom = fl.CubeDomain(np.zeros(3), 1.0)
    with pytest.raises(ValueError):
        fl.point_to_key([1.0, 0.5, 0.5], dom, 2)  # max face is exclusive
    with pytest.raises(ValueError):
        fl.point_to_key([-1e-12, 0.5, 0.5], dom, 2)
    with pytest.raises(ValueError):
        fl.point_to_key([0.5, 0.5, 0.5], dom, fl.MAX_LEVEL + 1)


def test_point_to_key_against_exact_grid():
    # rational-arithmetic oracle over the same float inputs
    rng = np.random.default_rng(13)
    lo = np.array([0.1, -0.3, 2.0])
    width = 1.7
    dom = fl.CubeDomain(lo, width)
    for _ in range(1000):
        level = int(rng.integers(1, 7))
        pos = lo + rng.random(3) * width * 0.999
        key = fl.point_to_key(pos, dom, level)
        scale = 1 << level
        expect = tuple(
            int(Fraction(float(pos[a]) - float(lo[a])) / Fraction(width) * scale)
            for a in range(3))
        assert key.anchor == expect


def test_keys_sort_groups_shared_cells():
    # bodies in the same cell must be adjacent once sorted by packed key
    rng = np.random.default_rng(14)
    dom = fl.CubeDomain(np.zeros(3), 1.0)
    pos = rng.random((500, 3))
    level = 3
    keys = np.array([fl.point_to_key(p, dom, level).packed for p in pos])
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    # once a key changes it never comes back
    changes = np.flatnonzero(np.diff(sorted_keys) != 0)
    seen = sorted_keys[np.concatenate(([0], changes + 1))]
    assert len(set(seen.tolist())) == len(seen)

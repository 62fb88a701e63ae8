"""Rank partitioning, locally essential trees, simulated exchange accounting."""

import numpy as np
import pytest

import fmmlite as fl

from tutil import make_bodies


def lattice_tree(m, nbodies_per_cell=1, level=None, seed=81):
    """Uniform m^3 occupancy with a fixed unit-cube domain."""
    rng = np.random.default_rng(seed)
    g = (np.arange(m) + 0.5) / m
    gx, gy, gz = np.meshgrid(g, g, g, indexing="ij")
    centers = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    pos = np.repeat(centers, nbodies_per_cell, axis=0)
    pos = pos + (rng.random(pos.shape) - 0.5) / (2 * m)
    n = pos.shape[0]
    bodies = fl.Bodies(pos, rng.random(n) / n)
    lv = level if level is not None else int(np.log2(m))
    tree = fl.build_tree(bodies, fl.FmmConfig(p=3, max_level=lv),
                         fl.CubeDomain(np.zeros(3), 1.0))
    return tree


def owned_leaf_set(part, rank):
    lo, hi = part.leaf_span(rank)
    return set(range(lo, hi))


def test_partition_single_rank_owns_everything():
    tree = lattice_tree(4)
    part = fl.partition(tree, 1)
    assert part.leaf_span(0) == (0, 64)
    assert part.body_span(0) == (0, 64)
    assert np.all(part.leaf_ranks == 0)


def test_partition_equal_leaves_split_evenly():
    tree = lattice_tree(2, nbodies_per_cell=10, level=1)
    part = fl.partition(tree, 8)
    assert np.array_equal(part.body_counts, np.full(8, 10))
    assert [part.leaf_span(r) for r in range(8)] == \
        [(r, r + 1) for r in range(8)]


def test_partition_spans_are_contiguous_disjoint_covering():
    bodies = make_bodies(20_000, seed=82)
    tree = fl.build_tree(bodies, fl.FmmConfig(p=3, ncrit=16))
    for nranks in (1, 3, 7, 16):
        part = fl.partition(tree, nranks)
        assert part.leaf_bounds[0] == 0
        assert part.leaf_bounds[-1] == tree.levels[tree.max_level].ncells
        assert np.all(np.diff(part.leaf_bounds) >= 0)
        assert int(part.body_counts.sum()) == 20_000


def test_partition_load_bound():
    # greedy quota cuts: no rank exceeds the ideal share by more than the
    # heaviest single leaf
    bodies = make_bodies(50_000, seed=83)
    tree = fl.build_tree(bodies, fl.FmmConfig(p=3, ncrit=32))
    assert tree.levels[tree.max_level].ncells >= 1000
    heaviest = int(tree.levels[tree.max_level].body_count.max())
    for nranks in (4, 16, 64):
        part = fl.partition(tree, nranks)
        assert int(part.body_counts.max()) <= 50_000 / nranks + heaviest


def test_partition_by_leaf_count():
    bodies = make_bodies(20_000, seed=84)
    tree = fl.build_tree(bodies, fl.FmmConfig(p=3, ncrit=16))
    nleaves = tree.levels[tree.max_level].ncells
    part = fl.partition(tree, 8, balance="leaves")
    sizes = np.diff(part.leaf_bounds)
    assert sizes.max() - sizes.min() <= 1
    assert int(sizes.sum()) == nleaves


def test_partition_validation():
    tree = lattice_tree(2, level=1)  # 8 leaves
    with pytest.raises(fl.ConfigError):
        fl.partition(tree, 9)
    with pytest.raises(fl.ConfigError):
        fl.partition(tree, 0)
    with pytest.raises(fl.ConfigError):
        fl.partition(tree, 2, balance="random")


def test_let_single_rank_is_empty():
    bodies = make_bodies(5000, seed=85)
    tree = fl.build_tree(bodies, fl.FmmConfig(p=3, ncrit=32))
    part = fl.partition(tree, 1)
    m = fl.build_let(part, tree, 0)
    assert m.halo_leaves.size == 0
    assert m.body_records == 0 and m.multipole_records == 0
    assert m.bytes_p2p == 0 and m.bytes_m2l == 0
    assert all(a.size == 0 for a in m.il_cells.values())
    assert not m.completion_cells and not m.rebuild_cells


def test_two_rank_halo_is_the_cut_plane():
    # 4^3 grid, two ranks: the Morton order splits at the z midplane, so
    # each rank's halo is exactly the facing plane of 16 remote leaves
    tree = lattice_tree(4)
    part = fl.partition(tree, 2)
    assert part.leaf_span(0) == (0, 32) and part.leaf_span(1) == (32, 64)
    lv = tree.levels[2]
    ix, iy, iz = fl.unpack_keys(lv.keys)
    m0 = fl.build_let(part, tree, 0)
    assert sorted(m0.halo_leaves.tolist()) == sorted(
        np.flatnonzero(iz == 2).tolist())
    m1 = fl.build_let(part, tree, 1)
    assert sorted(m1.halo_leaves.tolist()) == sorted(
        np.flatnonzero(iz == 1).tolist())
    assert m0.body_records == 16 and m0.bytes_p2p == 16 * 32


def test_halo_membership_is_exact():
    # a remote leaf ships its bodies iff it neighbors an owned leaf
    bodies = make_bodies(8000, seed=86)
    tree = fl.build_tree(bodies, fl.FmmConfig(p=3, ncrit=8))
    part = fl.partition(tree, 5)
    leaf_level = tree.max_level
    for rank in range(5):
        owned = owned_leaf_set(part, rank)
        m = fl.build_let(part, tree, rank)
        want = set()
        for i in owned:
            cell = tree.cell_at(leaf_level, i)
            for nb in fl.neighbor_list(cell, tree):
                if nb.lindex not in owned:
                    want.add(nb.lindex)
        assert set(m.halo_leaves.tolist()) == want


def test_interaction_requests_match_exhaustive_scan():
    # the manifest's multipole requests equal a brute-force union of the
    # interaction lists of every cell on a root-to-owned-leaf path
    bodies = make_bodies(8000, seed=87)
    tree = fl.build_tree(bodies, fl.FmmConfig(p=3, ncrit=8))
    part = fl.partition(tree, 4)
    for rank in (0, 2):
        bs, be = part.body_span(rank)
        m = fl.build_let(part, tree, rank)
        for level in range(2, tree.max_level + 1):
            lv = tree.levels[level]
            ends = lv.body_start + lv.body_count
            touched = set(np.flatnonzero((lv.body_start < be) & (ends > bs)).tolist())
            want = set()
            for t in touched:
                for src in fl.interaction_list(tree.cell_at(level, t), tree):
                    if src.lindex not in touched:
                        want.add(src.lindex)
            assert set(m.il_cells[level].tolist()) == want


def test_every_halo_leaf_is_load_bearing():
    # dropping any shipped leaf changes some owned near-field result
    bodies = make_bodies(8000, seed=88)
    tree = fl.build_tree(bodies, fl.FmmConfig(p=3, ncrit=8))
    part = fl.partition(tree, 6)
    rng = np.random.default_rng(89)
    leaf_level = tree.max_level
    lv = tree.levels[leaf_level]
    checked = 0
    for rank in range(6):
        owned = owned_leaf_set(part, rank)
        m = fl.build_let(part, tree, rank)
        if not m.halo_leaves.size:
            continue
        sample = rng.choice(m.halo_leaves, min(4, m.halo_leaves.size),
                            replace=False)
        for h in sample:
            cell = tree.cell_at(leaf_level, int(h))
            adjacent_owned = [nb for nb in fl.neighbor_list(cell, tree)
                              if nb.lindex in owned]
            assert adjacent_owned  # otherwise it should not be in the halo
            # its charges contribute a nonzero potential to a neighbor body
            tgt = adjacent_owned[0]
            probe = tree.bodies.position[tgt.body_start]
            src = slice(cell.body_start, cell.body_start + cell.body_count)
            d = tree.bodies.position[src] - probe
            r = np.linalg.norm(d, axis=1)
            contribution = float((tree.bodies.charge[src][r > 0] / r[r > 0]).sum())
            assert contribution != 0.0
            checked += 1
    assert checked >= 20


def test_completion_and_rebuild_are_consistent():
    bodies = make_bodies(20_000, seed=90)
    tree = fl.build_tree(bodies, fl.FmmConfig(p=3, ncrit=16))
    part = fl.partition(tree, 7)
    bounds = part.body_bounds
    from fmmlite.partition import _complete_owner
    for rank in range(7):
        m = fl.build_let(part, tree, rank)
        for level, arr in m.rebuild_cells.items():
            for idx in arr:
                assert _complete_owner(tree, bounds, level, int(idx)) == -1
        for level, arr in m.completion_cells.items():
            for idx in arr:
                owner = _complete_owner(tree, bounds, level, int(idx))
                assert owner >= 0 and owner != rank


def test_distributed_matches_serial_bitwise():
    rng = np.random.default_rng(91)
    n = 30_000
    pos = rng.random((n, 3))
    q = rng.random(n) / n
    cfg = fl.FmmConfig(p=4, ncrit=32)
    ref = fl.fmm_evaluate(fl.Bodies(pos.copy(), q.copy()), cfg)
    for nranks in (1, 2, 4, 8, 16):
        res, stats = fl.distributed_evaluate(fl.Bodies(pos.copy(), q.copy()),
                                             cfg, nranks)
        assert np.array_equal(res.potential, ref.potential)
        assert np.array_equal(res.force, ref.force)
        assert len(stats) == nranks


def test_distributed_single_precision_matches_serial():
    rng = np.random.default_rng(92)
    n = 20_000
    pos = rng.random((n, 3))
    q = rng.random(n) / n
    cfg = fl.FmmConfig(p=4, precision="single_near_field")
    ref = fl.fmm_evaluate(fl.Bodies(pos.copy(), q.copy()), cfg)
    res, _ = fl.distributed_evaluate(fl.Bodies(pos.copy(), q.copy()), cfg, 4)
    assert np.array_equal(res.potential, ref.potential)
    assert np.array_equal(res.force, ref.force)


def test_exchange_bytes_grow_with_rank_count():
    bodies = make_bodies(30_000, seed=93)
    tree = fl.build_tree(bodies, fl.FmmConfig(p=4, ncrit=32))
    prev_p2p = prev_m2l = -1
    for nranks in (1, 2, 4, 8, 16):
        part = fl.partition(tree, nranks)
        lets = [fl.build_let(part, tree, r) for r in range(nranks)]
        s = fl.comm_stats(lets)
        assert s.total_bytes_p2p >= prev_p2p
        assert s.total_bytes_m2l >= prev_m2l
        prev_p2p, prev_m2l = s.total_bytes_p2p, s.total_bytes_m2l
    assert prev_p2p > 0 and prev_m2l > 0


def test_comm_stats_recomputation():
    bodies = make_bodies(15_000, seed=94)
    tree = fl.build_tree(bodies, fl.FmmConfig(p=5, ncrit=32))
    part = fl.partition(tree, 6)
    lets = [fl.build_let(part, tree, r) for r in range(6)]
    s = fl.comm_stats(lets)
    leaf = tree.levels[tree.max_level]
    k = 5 * 6 // 2
    for row, m in zip(s.ranks, lets):
        bodies_recount = int(leaf.body_count[m.halo_leaves].sum())
        assert row.body_records == bodies_recount
        assert row.bytes_p2p == 32 * bodies_recount
        assert row.bytes_m2l == row.multipole_records * (16 * k + 24)
    assert s.total_bytes_p2p == sum(r.bytes_p2p for r in s.ranks)
    assert s.total_bytes_m2l == sum(r.bytes_m2l for r in s.ranks)
    assert s.imbalance_p2p >= 1.0 and s.imbalance_m2l >= 1.0
    rows = s.rows()
    assert [r["rank"] for r in rows] == list(range(6))
    zero = fl.comm_stats([fl.build_let(fl.partition(tree, 1), tree, 0)])
    assert zero.total_bytes_p2p == 0 and zero.imbalance_p2p == 1.0


def test_distributed_timing_includes_exchange_phases():
    bodies = make_bodies(20_000, seed=95)
    res, _ = fl.distributed_evaluate(bodies, fl.FmmConfig(p=3, ncrit=32), 4)
    d = res.timing.as_dict()
    assert d["t_simSendP2P"] > 0.0 and d["t_simSendM2L"] > 0.0
    assert d["t_total"] == pytest.approx(
        sum(v for key, v in d.items() if key != "t_total"), abs=1e-12)

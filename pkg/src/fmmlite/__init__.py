"""Fast multipole method for the 3D Laplace kernel.

Evaluates potentials phi_i = sum_j q_j / |x_i - x_j| and the matching
negative-gradient force accumulators in O(N) via a Morton-keyed uniform
octree, solid-harmonic expansions, an optionally single-precision batched
near field, a thread scheduler, and a message-passing rank simulator.
"""

from .core import (
    MAX_LEVEL,
    Bodies,
    Cell,
    ConfigError,
    CubeDomain,
    FmmConfig,
    MortonKey,
    Tree,
    build_tree,
    interaction_list,
    key_from_packed,
    morton_decode,
    morton_encode,
    neighbor_list,
    pack_anchors,
    point_to_key,
    unpack_keys,
)
from .evaluator import (
    FmmResult,
    TimingBreakdown,
    downward_sweep,
    fmm_evaluate,
    near_field,
    parallel_apply,
    relative_l2_error,
    transfer_m2l,
    upward_sweep,
)
from .kernels import (
    InteractionBatch,
    LocalCoeffs,
    MultipoleCoeffs,
    direct_sum,
    evaluate_local,
    evaluate_multipole,
    l2l,
    l2p,
    m2l,
    m2m,
    p2m,
    p2p,
    p2p_batched,
)
from .partition import (
    CommStats,
    CommSummary,
    LetManifest,
    RankPartition,
    build_let,
    comm_stats,
    distributed_evaluate,
    partition,
)

__version__ = "0.1.0"

__all__ = [
    "MAX_LEVEL",
    "Bodies",
    "Cell",
    "CommStats",
    "CommSummary",
    "ConfigError",
    "CubeDomain",
    "FmmConfig",
    "FmmResult",
    "InteractionBatch",
    "LetManifest",
    "LocalCoeffs",
    "MortonKey",
    "MultipoleCoeffs",
    "RankPartition",
    "TimingBreakdown",
    "Tree",
    "build_let",
    "build_tree",
    "comm_stats",
    "direct_sum",
    "distributed_evaluate",
    "downward_sweep",
    "evaluate_local",
    "evaluate_multipole",
    "fmm_evaluate",
    "interaction_list",
    "key_from_packed",
    "l2l",
    "l2p",
    "m2l",
    "m2m",
    "morton_decode",
    "morton_encode",
    "near_field",
    "neighbor_list",
    "pack_anchors",
    "p2m",
    "p2p",
    "p2p_batched",
    "parallel_apply",
    "partition",
    "point_to_key",
    "relative_l2_error",
    "transfer_m2l",
    "unpack_keys",
    "upward_sweep",
]

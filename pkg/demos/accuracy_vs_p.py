"""Convergence of the potential error with expansion order.

Runs a 10^4-body uniform cube at each order and compares against direct
summation. Expect roughly one extra digit per +1.5 orders until the
double-precision floor.
"""

import fmmlite as fl
from fmmlite import bench


def main():
    bodies = bench.generate("cube_uniform", 10_000, 0)
    ref, _ = fl.direct_sum(bodies)
    print(f"{'p':>3} {'rel L2 error':>14} {'t_total [s]':>12}")
    for p in (2, 3, 4, 5, 6, 8, 10):
        run = bench.generate("cube_uniform", 10_000, 0)
        res = fl.fmm_evaluate(run, fl.FmmConfig(p=p))
        err = fl.relative_l2_error(res.potential, ref)
        print(f"{p:>3} {err:>14.3e} {res.timing.total:>12.3f}")


if __name__ == "__main__":
    main()

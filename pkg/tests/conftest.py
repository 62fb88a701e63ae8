import pathlib

import numpy as np
import pytest

import fmmlite as fl

METRICS_PATH = pathlib.Path(__file__).parent / "acceptance_metrics.txt"


@pytest.fixture(scope="session", autouse=True)
def jit_warmup():
    """Compile every numba kernel once so timed tests measure steady state."""
    rng = np.random.default_rng(0)
    pos = rng.random((600, 3))
    q = rng.random(600) / 600
    cfg = fl.FmmConfig(p=3, ncrit=32)
    fl.fmm_evaluate(fl.Bodies(pos.copy(), q.copy()), cfg)
    fl.fmm_evaluate(fl.Bodies(pos.copy(), q.copy()),
                    fl.FmmConfig(p=3, ncrit=32, precision="single_near_field"))
    fl.distributed_evaluate(fl.Bodies(pos.copy(), q.copy()), cfg, 2)
    fl.direct_sum(fl.Bodies(pos[:50].copy(), q[:50].copy()))
    b = fl.Bodies(pos[:50].copy(), q[:50].copy())
    fl.p2p(b, (0, 25), (25, 50), mode="single_batched")
    fl.p2p(b, (0, 25), (25, 50), mode="double_scalar")


@pytest.fixture(scope="session")
def metrics():
    """Collects measured ratios from the acceptance tests into a report."""
    lines = []
    yield lines
    if lines:
        METRICS_PATH.write_text("\n".join(lines) + "\n")

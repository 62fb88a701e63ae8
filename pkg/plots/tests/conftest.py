import os
import shutil
import subprocess
import sys

import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__),
                                                os.pardir)))

from plotutil import CRITERION7_CSV


@pytest.fixture(scope="session")
def bench_csv(tmp_path_factory):
    """A real worker-sweep CSV, generated via the CLI when not on disk."""
    if os.path.exists(CRITERION7_CSV):
        return CRITERION7_CSV
    out = str(tmp_path_factory.mktemp("bench") / "workers.csv")
    exe = shutil.which("fmmbench")
    cmd = ([exe] if exe else [sys.executable, "-m", "fmmlite.bench"])
    cmd += ["sweep", "--axis", "workers", "--values", "1,2",
            "--n", "20000", "--p", "3", "--seed", "0", "--check", "off",
            "--out", out, "--format", "csv"]
    subprocess.run(cmd, check=True, timeout=300)
    return out

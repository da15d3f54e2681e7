import numpy as np
import pytest

from slidepipe import kernels, synth_slide


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # Compile the hot kernels once so individual tests time only themselves.
    kernels.warmup()


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    """Two small deterministic slides plus their ground-truth maps."""
    d = tmp_path_factory.mktemp("slides")
    truths = {}
    for i in range(2):
        name = f"synth_{i:04d}"
        _, truth = synth_slide(d / f"{name}.tif", 100 + i, 1024, 1024, 4)
        truths[name] = truth
    return d, truths


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)

import numpy as np
import pytest
import threadpoolctl


@pytest.fixture(autouse=True, scope="session")
def single_threaded_blas():
    """Clamp BLAS pools to one thread so timing-bounded tests measure
    single-threaded work and results stay reproducible."""
    with threadpoolctl.threadpool_limits(limits=1):
        yield


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)

import numpy as np
import pytest

from quartet import _accel, kernels
from quartet.corpus import load_corpus

BACKENDS = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    prev = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


@pytest.fixture(scope="session")
def desk_corpus():
    return load_corpus()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

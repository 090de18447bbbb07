import numpy as np
import pytest

from klflow import _backend

try:
    _backend.implementation("cython")
    BACKENDS = ["python", "cython"]
except ImportError:
    BACKENDS = ["python"]


@pytest.fixture(params=BACKENDS)
def impl(request):
    return _backend.implementation(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def std_normal():
    from klflow import Target
    return Target.gaussian([0.0], [[1.0]])

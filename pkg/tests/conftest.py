import numpy as np
import pytest

from mldp import _kernels_py, kernels

try:
    from mldp import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = [pytest.param(_kernels_py, id="python")]
if _ckernels is not None:
    BACKENDS.append(pytest.param(_ckernels, id="cython"))


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    monkeypatch.setattr(kernels, "_impl", request.param)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

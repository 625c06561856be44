import math

import numpy as np
import pytest

from bbm_memory.functionals import StructuralConstants
from bbm_memory.memory import make_kernel
from bbm_memory.spectral import Domain

# constants produced by calibrate_constants(Domain(N=16), exp kernel, seed=0)
CALIBRATED_N16 = StructuralConstants(
    c1=0.6427464504903256, c2=0.7034329230735054, c3=0.0013102713055387347,
    eps0=0.17677669529663687, source="calibrated",
)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def dom16():
    return Domain(0.0, math.pi, 16)


@pytest.fixture(scope="session")
def exp_kernel():
    return make_kernel("prony", {"modes": [{"rate": 1.0}]})


@pytest.fixture(scope="session")
def constants16():
    return CALIBRATED_N16

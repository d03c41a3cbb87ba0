"""Shared fixtures: compile numba kernels once so timed tests measure math, not JIT."""

import numpy as np
import pytest

from cono import SeededRng, build_schedule, make_plan
from cono import _kernels as K


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    K.warmup()


@pytest.fixture(scope="session")
def sched():
    return build_schedule()


@pytest.fixture(scope="session")
def plan50(sched):
    return make_plan(sched, 50)


@pytest.fixture()
def rng():
    return SeededRng(1234)


@pytest.fixture()
def rand4d():
    gen = np.random.Generator(np.random.PCG64(99))

    def make(dims, scale=1.0):
        return (gen.standard_normal(dims) * scale).astype(np.float32)

    return make

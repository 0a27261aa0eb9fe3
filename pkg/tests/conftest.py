import functools

import pytest
from hypothesis import HealthCheck, settings

from spinv.invariant import invariant_naive, invariant_optimized

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def optimized(size):
    return invariant_optimized(size).poly


@functools.lru_cache(maxsize=None)
def naive(size):
    return invariant_naive(size).poly


@pytest.fixture(scope="session")
def opt4():
    return optimized(4)

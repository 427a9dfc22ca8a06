import numpy as np
import pytest


@pytest.fixture
def rng(request):
    """Fresh generator per test; tests that parametrize over `seed` get it here."""
    seed = getattr(request, "param", 0)
    return np.random.default_rng(seed)


def seeds(n=10):
    return list(range(n))

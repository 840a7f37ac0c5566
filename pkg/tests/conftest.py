import numpy as np
import pytest


@pytest.fixture
def rng():
    """Plain numpy generator for constructing fixtures (not library streams)."""
    return np.random.default_rng(20240811)


def rel_err(a, b, floor=1e-12):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), floor))

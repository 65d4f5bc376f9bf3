import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def unit_columns(rng, d, p):
    Z = rng.standard_normal((d, p))
    return Z / np.linalg.norm(Z, axis=0)

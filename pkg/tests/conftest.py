import numpy as np
import pytest

from geometry import conformal_torus, flat_torus, round_sphere, sample_grid


def wavy_u(n: int = 32) -> np.ndarray:
    xy = sample_grid(flat_torus(), n)
    return 0.1 * np.sin(2 * np.pi * xy[..., 0]) * np.cos(2 * np.pi * xy[..., 1])


@pytest.fixture(scope="module")
def torus():
    return flat_torus()


@pytest.fixture(scope="module")
def sphere():
    return round_sphere(1.0)


@pytest.fixture(scope="module")
def wavy_torus():
    return conformal_torus(wavy_u())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

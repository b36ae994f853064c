import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from twlab.grid import Grid

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


def band_limited(grid, rng, m=None, kmax=None, kymax=None):
    """Random real field using only modes |kx index| <= kmax, |ky| <= kymax."""
    kmax = grid.nx // 3 if kmax is None else kmax
    kymax = grid.ny // 3 if kymax is None else kymax
    shape = (grid.nx, grid.nx, grid.ny // 2 + 1) if m is None else (m, grid.nx, grid.nx, grid.ny // 2 + 1)
    fh = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    kx = np.abs(grid.kx_index)
    mask = (kx <= kmax)[:, None, None] & (kx <= kmax)[None, :, None] & (grid.ky_index <= kymax)[None, None, :]
    return grid.ifft(fh * mask) * grid.size / 50.0


def gaussian(grid, center=(0.0, 0.0), sigma=2.0, y_mod=None):
    x1, x2, y = grid.mesh()
    g = np.exp(-((x1 - center[0]) ** 2 + (x2 - center[1]) ** 2) / (2 * sigma**2))
    if y_mod is None:
        return np.broadcast_to(g, grid.shape).copy()
    return g * y_mod(y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_grid():
    return Grid(32, 16.0, 8)

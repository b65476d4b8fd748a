import numpy as np
import pytest

from voxedit import FeatureGrid, look_at


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_grid(rng, n=4, scale=1.0) -> FeatureGrid:
    grid = FeatureGrid.filled(n)
    grid.features[:] = rng.normal(0.0, scale, grid.features.shape).astype(np.float32)
    return grid


def blob_grid(n=16, radius=0.55, density=6.0) -> FeatureGrid:
    """Smooth opaque blob with a color gradient; a convenient test subject."""
    grid = FeatureGrid.filled(n)
    centers = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    z, y, x = np.meshgrid(centers, centers, centers, indexing="ij")
    r = np.sqrt(x * x + y * y + z * z)
    grid.features[..., 0] = (density * (1.0 - (r / radius) ** 2)).clip(-0.5, None)
    grid.features[..., 1] = 1.5 * x
    grid.features[..., 2] = 1.5 * y
    grid.features[..., 3] = 1.5 * z
    return grid


@pytest.fixture
def tiny_pose():
    return look_at([0.4, 2.6, 1.3], width=4, height=4)

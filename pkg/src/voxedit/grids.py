"""Dense feature voxel grids and trilinear sampling.

A scene is a cube of voxels, each holding raw (pre-activation) features:
channel 0 is a density feature activated by ReLU, the remaining channels
are intensity features activated by a sigmoid (RGB for the 4-channel scene
grid, a single grayscale attention value for the 2-channel attention grid).

Voxel centers follow the cell-centered convention: center i sits at
``lo + (i + 0.5) * (hi - lo) / n`` along each axis.  Sample points within
half a cell of a face interpolate inside the boundary cell (clamped
weights); points outside the bounds return the zero feature vector.

Memory layout is channel-interleaved with x fastest: ``features[z, y, x, c]``
is contiguous, so the flat voxel index is ``(z * n + y) * n + x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit

DEFAULT_BOUNDS = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]], dtype=np.float32)

# Activated density above this counts as occupied (used for segmentation
# nodes and occupancy queries); below it a voxel is treated as empty.
DENSITY_THRESHOLD = 1e-2


def default_bounds() -> np.ndarray:
    return DEFAULT_BOUNDS.copy()


@dataclass
class FeatureGrid:
    """Dense n^3 grid of 4-channel raw features (density + RGB)."""

    resolution: int
    bounds: np.ndarray = field(default_factory=default_bounds)
    features: np.ndarray | None = None

    def __post_init__(self):
        if self.resolution < 1:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        self.bounds = np.asarray(self.bounds, dtype=np.float32).reshape(2, 3)
        if not np.all(self.bounds[1] > self.bounds[0]):
            raise ValueError("bounds max must exceed bounds min on every axis")
        n = self.resolution
        if self.features is None:
            self.features = np.zeros((n, n, n, 4), dtype=np.float32)
        else:
            self.features = np.ascontiguousarray(self.features, dtype=np.float32)
            if self.features.shape != (n, n, n, 4):
                raise ValueError(
                    f"features shape {self.features.shape} does not match "
                    f"resolution {n} with 4 channels"
                )

    @classmethod
    def filled(cls, resolution, bounds=None, density=-0.1, color=0.0):
        """Grid with constant raw features (empty-space start by default)."""
        n = resolution
        feats = np.empty((n, n, n, 4), dtype=np.float32)
        feats[..., 0] = density
        feats[..., 1:] = color
        if bounds is None:
            bounds = default_bounds()
        return cls(resolution=n, bounds=bounds, features=feats)

    @property
    def channels(self) -> int:
        return 4

    @property
    def density_raw(self) -> np.ndarray:
        return self.features[..., 0]

    @property
    def color_raw(self) -> np.ndarray:
        return self.features[..., 1:4]

    def copy(self) -> "FeatureGrid":
        return FeatureGrid(self.resolution, self.bounds.copy(), self.features.copy())


@dataclass
class AttentionGrid:
    """Grid holding a frozen density channel plus one raw attention channel.

    ``features[..., 0]`` is copied bit-for-bit from the source scene grid and
    is never updated by attention fitting; ``features[..., 1]`` is the raw
    attention feature, rendered as a grayscale luma via sigmoid.
    """

    resolution: int
    bounds: np.ndarray = field(default_factory=default_bounds)
    features: np.ndarray | None = None

    def __post_init__(self):
        if self.resolution < 1:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        self.bounds = np.asarray(self.bounds, dtype=np.float32).reshape(2, 3)
        if not np.all(self.bounds[1] > self.bounds[0]):
            raise ValueError("bounds max must exceed bounds min on every axis")
        n = self.resolution
        if self.features is None:
            self.features = np.zeros((n, n, n, 2), dtype=np.float32)
        else:
            self.features = np.ascontiguousarray(self.features, dtype=np.float32)
            if self.features.shape != (n, n, n, 2):
                raise ValueError(
                    f"features shape {self.features.shape} does not match "
                    f"resolution {n} with 2 channels"
                )

    @classmethod
    def from_feature_grid(cls, grid: FeatureGrid, attn_init: float = 0.0):
        n = grid.resolution
        feats = np.empty((n, n, n, 2), dtype=np.float32)
        feats[..., 0] = grid.features[..., 0]
        feats[..., 1] = attn_init
        return cls(resolution=n, bounds=grid.bounds.copy(), features=feats)

    @property
    def channels(self) -> int:
        return 2

    @property
    def density_raw(self) -> np.ndarray:
        return self.features[..., 0]

    @property
    def attn_raw(self) -> np.ndarray:
        return self.features[..., 1]

    def copy(self) -> "AttentionGrid":
        return AttentionGrid(self.resolution, self.bounds.copy(), self.features.copy())


class SamplePoint(NamedTuple):
    """A world-space query position and the raw feature vector found there."""

    position: np.ndarray
    result: np.ndarray


def activate(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a raw feature vector into (density, intensities).

    Density is ReLU of channel 0 (subgradient 0 at the kink), intensities
    are sigmoid of the remaining channels, each in (0, 1).
    """
    raw = np.asarray(raw, dtype=np.float64)
    density = np.maximum(raw[..., 0], 0.0)
    color = expit(raw[..., 1:])
    return density, color


def activate_derivative(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """d(density)/d(raw ch0) and d(intensity)/d(raw ch1:) at ``raw``."""
    raw = np.asarray(raw, dtype=np.float64)
    d_density = (raw[..., 0] > 0.0).astype(np.float64)
    s = expit(raw[..., 1:])
    return d_density, s * (1.0 - s)


def corner_weights(
    bounds: np.ndarray, resolution: int, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Interpolation stencil for a batch of world-space points.

    Returns ``(flat_idx, weights, inside)`` where ``flat_idx`` has shape
    (..., 8) of flat voxel indices, ``weights`` the matching trilinear
    weights (zeroed outside the bounds), and ``inside`` the in-bounds mask.
    Sampling and gradient scatter share this stencil so they stay exact
    adjoints of each other.
    """
    points = np.asarray(points, dtype=np.float64)
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    n = resolution

    inside = np.all((points >= lo) & (points <= hi), axis=-1)

    # Continuous grid coordinate: u == i exactly at the center of voxel i.
    u = (points - lo) / (hi - lo) * n - 0.5
    cell = np.clip(np.floor(u), 0, max(n - 2, 0)).astype(np.int64)
    frac = np.clip(u - cell, 0.0, 1.0)

    ix, iy, iz = cell[..., 0], cell[..., 1], cell[..., 2]
    fx, fy, fz = frac[..., 0], frac[..., 1], frac[..., 2]

    wx = np.stack([1.0 - fx, fx], axis=-1)
    wy = np.stack([1.0 - fy, fy], axis=-1)
    wz = np.stack([1.0 - fz, fz], axis=-1)

    step_x = 1 if n > 1 else 0
    step_y = n if n > 1 else 0
    step_z = n * n if n > 1 else 0
    base = (iz * n + iy) * n + ix

    idx = np.empty(points.shape[:-1] + (8,), dtype=np.int64)
    w = np.empty(points.shape[:-1] + (8,), dtype=np.float64)
    k = 0
    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                idx[..., k] = base + dz * step_z + dy * step_y + dx * step_x
                w[..., k] = wz[..., dz] * wy[..., dy] * wx[..., dx]
                k += 1
    w *= inside[..., None]
    return idx, w, inside


def trilinear_sample(grid: FeatureGrid | AttentionGrid, points: np.ndarray) -> np.ndarray:
    """Interpolate raw features at world-space points.

    Returns the stored vector exactly at voxel centers and the zero vector
    outside the bounds.  Accepts a single point or any batch shape (..., 3).
    """
    points = np.asarray(points, dtype=np.float64)
    single = points.ndim == 1
    if single:
        points = points[None, :]
    flat = grid.features.reshape(-1, grid.channels)
    idx, w, _ = corner_weights(grid.bounds, grid.resolution, points)
    out = np.zeros(points.shape[:-1] + (grid.channels,), dtype=np.float64)
    for k in range(8):
        out += w[..., k, None] * flat[idx[..., k]].astype(np.float64)
    return out[0] if single else out


def trilinear_scatter_add(
    out: np.ndarray,
    bounds: np.ndarray,
    resolution: int,
    points: np.ndarray,
    upstream: np.ndarray,
) -> None:
    """Accumulate upstream feature gradients into ``out`` (flat (n^3, C)).

    Adjoint of :func:`trilinear_sample`: each point distributes its upstream
    vector to its 8 stencil corners with the interpolation weights.  Points
    outside the bounds contribute nothing.
    """
    points = np.asarray(points, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if points.ndim == 1:
        points = points[None, :]
        upstream = upstream[None, :]
    idx, w, _ = corner_weights(bounds, resolution, points)
    idx = idx.reshape(-1, 8)
    w = w.reshape(-1, 8)
    up = upstream.reshape(idx.shape[0], -1)
    for k in range(8):
        np.add.at(out, idx[:, k], w[:, k, None] * up)


def trilinear_scatter_grad(
    grid_shape: tuple[int, int],
    bounds: np.ndarray,
    resolution: int,
    points: np.ndarray,
    upstream: np.ndarray,
) -> np.ndarray:
    """Dense gradient array from scattering ``upstream`` at ``points``.

    ``grid_shape`` is (n^3, channels).  Convenience wrapper over
    :func:`trilinear_scatter_add` for callers that want a fresh array.
    """
    out = np.zeros(grid_shape, dtype=np.float64)
    trilinear_scatter_add(out, bounds, resolution, points, upstream)
    return out


def sample_point(grid: FeatureGrid | AttentionGrid, position) -> SamplePoint:
    position = np.asarray(position, dtype=np.float64)
    return SamplePoint(position=position, result=trilinear_sample(grid, position))


def occupancy_mask(grid: FeatureGrid | AttentionGrid, threshold: float = DENSITY_THRESHOLD) -> np.ndarray:
    """Boolean (n, n, n) mask of voxels whose activated density exceeds ``threshold``."""
    return np.maximum(grid.features[..., 0], 0.0) > threshold

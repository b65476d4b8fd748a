"""Pinhole cameras, per-pixel ray generation, and pose sampling.

Cameras are right-handed and look down their local -z axis; +x is image
right and +y is image up, so pixel row 0 maps to the top of the frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ORIGIN = np.zeros(3)
UP_Z = np.array([0.0, 0.0, 1.0])


@dataclass
class CameraPose:
    """Intrinsics plus a camera-to-world rigid transform for one view."""

    camera_to_world: np.ndarray
    fov_x: float
    width: int
    height: int

    def __post_init__(self):
        self.camera_to_world = np.asarray(self.camera_to_world, dtype=np.float64).reshape(4, 4)
        r = self.camera_to_world[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-4):
            raise ValueError("rotation block of camera_to_world is not orthonormal")
        if not (0.0 < self.fov_x < math.pi):
            raise ValueError(f"fov_x must be in (0, pi), got {self.fov_x}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")

    @property
    def position(self) -> np.ndarray:
        return self.camera_to_world[:3, 3]

    @property
    def focal_px(self) -> float:
        return self.width / (2.0 * math.tan(self.fov_x / 2.0))


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    @property
    def hits(self) -> bool:
        return self.t_near <= self.t_far


@dataclass
class RayBundle:
    """One ray per pixel, flattened row-major (pixel p = y * width + x)."""

    origins: np.ndarray
    directions: np.ndarray
    width: int
    height: int
    t_near: np.ndarray | None = None
    t_far: np.ndarray | None = None

    def __len__(self) -> int:
        return self.origins.shape[0]

    def __getitem__(self, i: int) -> Ray:
        tn = float(self.t_near[i]) if self.t_near is not None else 0.0
        tf = float(self.t_far[i]) if self.t_far is not None else -1.0
        return Ray(self.origins[i], self.directions[i], tn, tf)


def generate_rays(pose: CameraPose) -> RayBundle:
    """Unit-direction ray through the center of every pixel."""
    w, h = pose.width, pose.height
    c2w = pose.camera_to_world
    if abs(np.linalg.det(c2w)) < 1e-12:
        raise ValueError("degenerate camera_to_world transform")

    focal = pose.focal_px
    xs = (np.arange(w, dtype=np.float64) + 0.5 - w / 2.0) / focal
    ys = -(np.arange(h, dtype=np.float64) + 0.5 - h / 2.0) / focal
    gx, gy = np.meshgrid(xs, ys)  # (h, w)
    dirs_cam = np.stack([gx, gy, -np.ones_like(gx)], axis=-1).reshape(-1, 3)

    dirs = dirs_cam @ c2w[:3, :3].T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(c2w[:3, 3], dirs.shape).copy()
    return RayBundle(origins=origins, directions=dirs, width=w, height=h)


def intersect_bounds(bundle: RayBundle, bounds: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slab test of every ray against an axis-aligned box.

    Returns (t_near, t_far, hit); ``t_near`` is clamped to 0 so segments
    never start behind the camera.  Misses have hit == False and should
    render pure background.
    """
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    o, d = bundle.origins, bundle.directions
    # Avoid 0 * inf = nan for axis-parallel rays.
    d_safe = np.where(d == 0.0, 1e-30, d)
    inv = 1.0 / d_safe
    t0 = (lo - o) * inv
    t1 = (hi - o) * inv
    t_near = np.minimum(t0, t1).max(axis=-1)
    t_far = np.maximum(t0, t1).min(axis=-1)
    t_near = np.maximum(t_near, 0.0)
    hit = (t_far >= t_near) & (t_far > 0.0)
    bundle.t_near, bundle.t_far = t_near, t_far
    return t_near, t_far, hit


def look_at(position, target=ORIGIN, up=UP_Z, fov_x: float = math.pi / 3, width: int = 266, height: int = 266) -> CameraPose:
    """Camera at ``position`` looking at ``target`` with the given up hint."""
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)

    z = position - target
    norm = np.linalg.norm(z)
    if norm < 1e-12:
        raise ValueError("camera position coincides with look-at target")
    z = z / norm
    x = np.cross(up, z)
    xn = np.linalg.norm(x)
    if xn < 1e-9:
        # Looking straight along the up axis: pick an arbitrary right vector.
        x = np.cross(np.array([0.0, 1.0, 0.0]), z)
        xn = np.linalg.norm(x)
    x = x / xn
    y = np.cross(z, x)

    c2w = np.eye(4)
    c2w[:3, 0] = x
    c2w[:3, 1] = y
    c2w[:3, 2] = z
    c2w[:3, 3] = position
    return CameraPose(camera_to_world=c2w, fov_x=fov_x, width=width, height=height)


@dataclass
class PoseSampler:
    """Uniform poses on the upper hemisphere looking at the grid center.

    Azimuth is uniform on [0, 360) degrees and elevation uniform on
    ``elevation_deg``; the camera sits at ``radius`` with +z as up.
    """

    radius: float = 3.0
    elevation_deg: tuple[float, float] = (0.0, 85.0)
    fov_x: float = math.pi / 3
    width: int = 266
    height: int = 266

    def sample(self, rng: np.random.Generator) -> CameraPose:
        azim = rng.uniform(0.0, 2.0 * math.pi)
        elev = math.radians(rng.uniform(*self.elevation_deg))
        return self.at(azim, elev)

    def at(self, azimuth_rad: float, elevation_rad: float) -> CameraPose:
        ce = math.cos(elevation_rad)
        pos = self.radius * np.array(
            [ce * math.cos(azimuth_rad), ce * math.sin(azimuth_rad), math.sin(elevation_rad)]
        )
        return look_at(pos, fov_x=self.fov_x, width=self.width, height=self.height)


def ring_poses(
    n_views: int,
    elevation_deg: float = 30.0,
    radius: float = 3.0,
    fov_x: float = math.pi / 3,
    width: int = 266,
    height: int = 266,
) -> list[CameraPose]:
    """Poses evenly spaced along a full 360-degree azimuth ring."""
    sampler = PoseSampler(radius=radius, fov_x=fov_x, width=width, height=height)
    elev = math.radians(elevation_deg)
    return [sampler.at(2.0 * math.pi * k / n_views, elev) for k in range(n_views)]

import math

import numpy as np
import pytest
from scipy.stats import chisquare

from voxedit import CameraPose, PoseSampler, generate_rays, look_at, ring_poses
from voxedit.cameras import intersect_bounds
from voxedit.grids import default_bounds


class TestCameraPose:
    def test_rejects_non_orthonormal_rotation(self):
        m = np.eye(4)
        m[0, 0] = 2.0
        with pytest.raises(ValueError):
            CameraPose(camera_to_world=m, fov_x=1.0, width=8, height=8)

    def test_rejects_bad_fov(self):
        with pytest.raises(ValueError):
            CameraPose(camera_to_world=np.eye(4), fov_x=math.pi, width=8, height=8)


class TestGenerateRays:
    def test_center_pixel_looks_down_minus_z(self):
        # Odd image size puts a pixel center exactly on the optical axis.
        pose = look_at([0, 0, 3], width=5, height=5)
        rays = generate_rays(pose)
        center = rays.directions[2 * 5 + 2]
        np.testing.assert_allclose(center, [0, 0, -1], atol=1e-9)

    def test_all_directions_unit_length(self):
        pose = look_at([1.0, 2.0, 1.5], width=7, height=5)
        rays = generate_rays(pose)
        np.testing.assert_allclose(np.linalg.norm(rays.directions, axis=1), 1.0, atol=1e-6)

    def test_corner_pixel_matches_closed_form(self):
        # Identity pose, fov_x = pi/2, square image: pixel (0, 0) center sits
        # at tan(fov/2) * (0.5/w - 0.5) horizontally, mirrored vertically.
        w = h = 4
        pose = CameraPose(camera_to_world=np.eye(4), fov_x=math.pi / 2, width=w, height=h)
        rays = generate_rays(pose)
        half = math.tan(math.pi / 4)
        x = (0.5 / w * 2.0 - 1.0) * half
        y = -(0.5 / h * 2.0 - 1.0) * half
        expected = np.array([x, y, -1.0])
        expected /= np.linalg.norm(expected)
        np.testing.assert_allclose(rays.directions[0], expected, atol=1e-6)

    def test_miss_is_marked_no_intersection(self):
        pose = look_at([0, 0, 3], width=3, height=3)
        rays = generate_rays(pose)
        rays.directions[:] = [0.0, 0.0, 1.0]  # pointing away from the box
        _, _, hit = intersect_bounds(rays, default_bounds())
        assert not hit.any()

    def test_slab_intersection_through_cube(self):
        pose = look_at([0, 0, 3], width=3, height=3)
        rays = generate_rays(pose)
        t_near, t_far, hit = intersect_bounds(rays, default_bounds())
        center = 1 * 3 + 1
        assert hit[center]
        assert t_near[center] == pytest.approx(2.0, abs=1e-9)
        assert t_far[center] == pytest.approx(4.0, abs=1e-9)

    def test_axis_parallel_ray_no_nan(self):
        pose = look_at([0, 0, 3], width=3, height=3)
        rays = generate_rays(pose)
        rays.origins[:] = [0.0, 5.0, 0.0]
        rays.directions[:] = [1.0, 0.0, 0.0]  # parallel to two slabs, outside
        t_near, t_far, hit = intersect_bounds(rays, default_bounds())
        assert np.isfinite(t_near[hit]).all()
        assert not hit.any()

    def test_degenerate_pose_raises(self):
        pose = look_at([0, 0, 3], width=2, height=2)
        pose.camera_to_world = np.zeros((4, 4))
        with pytest.raises(ValueError):
            generate_rays(pose)


class TestPoseSampler:
    def test_hemisphere_keeps_camera_above_plane(self):
        rng = np.random.default_rng(7)
        sampler = PoseSampler()
        zs = [sampler.sample(rng).position[2] for _ in range(10_000)]
        assert min(zs) >= 0.0

    def test_look_at_passes_through_origin(self):
        rng = np.random.default_rng(8)
        sampler = PoseSampler()
        for _ in range(200):
            pose = sampler.sample(rng)
            forward = -pose.camera_to_world[:3, 2]
            closest = pose.position - forward * (pose.position @ forward)
            assert np.linalg.norm(closest) < 1e-6

    def test_azimuth_uniformity_chi_squared(self):
        rng = np.random.default_rng(9)
        sampler = PoseSampler()
        azimuths = []
        for _ in range(10_000):
            p = sampler.sample(rng).position
            azimuths.append(math.atan2(p[1], p[0]) % (2 * math.pi))
        counts, _ = np.histogram(azimuths, bins=18, range=(0, 2 * math.pi))
        assert chisquare(counts).pvalue > 0.01

    def test_radius_respected(self):
        rng = np.random.default_rng(10)
        sampler = PoseSampler(radius=2.5)
        for _ in range(50):
            assert np.linalg.norm(sampler.sample(rng).position) == pytest.approx(2.5, abs=1e-9)


class TestRingPoses:
    def test_count_and_even_spacing(self):
        poses = ring_poses(8, elevation_deg=20.0, radius=3.0)
        assert len(poses) == 8
        azim = [math.atan2(p.position[1], p.position[0]) % (2 * math.pi) for p in poses]
        diffs = np.diff(sorted(azim))
        np.testing.assert_allclose(diffs, 2 * math.pi / 8, atol=1e-9)

    def test_fixed_elevation(self):
        for pose in ring_poses(5, elevation_deg=30.0, radius=3.0):
            elev = math.asin(pose.position[2] / 3.0)
            assert elev == pytest.approx(math.radians(30.0), abs=1e-9)

    def test_hundred_view_evaluation_ring(self):
        # The standard evaluation layout: 100 views, 3.6 degrees apart.
        poses = ring_poses(100, elevation_deg=30.0, radius=3.0)
        assert len(poses) == 100
        azim = sorted(
            math.atan2(p.position[1], p.position[0]) % (2 * math.pi) for p in poses
        )
        np.testing.assert_allclose(np.diff(azim), math.radians(3.6), atol=1e-9)

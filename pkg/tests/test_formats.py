import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxedit import (
    AttentionGrid,
    Dataset,
    FeatureGrid,
    VoxelMask,
    load_dataset,
    load_grid,
    load_mask,
    load_png,
    look_at,
    read_pfm,
    save_dataset,
    save_grid,
    save_mask,
    save_png,
    write_pfm,
)


class TestVoxeRoundTrip:
    def test_feature_grid_bit_exact(self, rng, tmp_path):
        grid = FeatureGrid.filled(5)
        grid.features[:] = rng.normal(0, 10, grid.features.shape).astype(np.float32)
        grid.bounds = np.array([[-2, -1, -0.5], [0.5, 1, 2]], dtype=np.float32)
        path = tmp_path / "g.voxe"
        save_grid(path, grid)
        back = load_grid(path)
        assert isinstance(back, FeatureGrid)
        assert back.resolution == 5
        assert np.array_equal(back.features, grid.features)
        assert np.array_equal(back.bounds, grid.bounds)

    def test_attention_grid_bit_exact(self, rng, tmp_path):
        scene = FeatureGrid.filled(4)
        scene.features[:] = rng.normal(0, 3, scene.features.shape).astype(np.float32)
        attn = AttentionGrid.from_feature_grid(scene)
        attn.features[..., 1] = rng.normal(0, 3, (4, 4, 4)).astype(np.float32)
        path = tmp_path / "a.voxe"
        save_grid(path, attn)
        back = load_grid(path)
        assert isinstance(back, AttentionGrid)
        assert np.array_equal(back.features, attn.features)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.voxe"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError, match="magic"):
            load_grid(path)

    def test_truncated_payload_rejected(self, tmp_path):
        grid = FeatureGrid.filled(4)
        path = tmp_path / "g.voxe"
        save_grid(path, grid)
        data = path.read_bytes()
        path.write_bytes(data[:-10])
        with pytest.raises(ValueError, match="truncated"):
            load_grid(path)

    def test_payload_layout_is_x_fastest(self, tmp_path):
        # The voxel at (x=1, y=0, z=0) must be the second feature record.
        grid = FeatureGrid.filled(2, density=0.0)
        grid.features[0, 0, 1, 0] = 7.0
        path = tmp_path / "g.voxe"
        save_grid(path, grid)
        payload = np.frombuffer(path.read_bytes()[40:], dtype="<f4")
        assert payload[1 * 4 + 0] == 7.0


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=6),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
    attention=st.booleans(),
)
def test_property_grid_round_trip(tmp_path_factory, n, seed, attention):
    rng = np.random.default_rng(seed)
    if attention:
        grid = AttentionGrid(resolution=n)
        grid.features[:] = rng.normal(0, 100, grid.features.shape).astype(np.float32)
    else:
        grid = FeatureGrid(resolution=n)
        grid.features[:] = rng.normal(0, 100, grid.features.shape).astype(np.float32)
    path = tmp_path_factory.mktemp("voxe") / "grid.voxe"
    save_grid(path, grid)
    back = load_grid(path)
    assert type(back) is type(grid)
    assert np.array_equal(back.features, grid.features)
    assert np.array_equal(back.bounds, grid.bounds)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(min_value=1, max_value=8), seed=st.integers(min_value=0, max_value=2**31 - 1))
def test_property_mask_round_trip(tmp_path_factory, n, seed):
    rng = np.random.default_rng(seed)
    mask = VoxelMask(resolution=n, bits=rng.integers(0, 2, (n, n, n)).astype(np.uint8))
    path = tmp_path_factory.mktemp("voxm") / "m.voxm"
    save_mask(path, mask)
    back = load_mask(path)
    assert np.array_equal(back.bits, mask.bits)


class TestMask:
    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            VoxelMask(resolution=2, bits=np.full((2, 2, 2), 3, dtype=np.uint8))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.voxm"
        path.write_bytes(b"VOXE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_mask(path)


class TestPfm:
    def test_three_channel_round_trip(self, rng, tmp_path):
        img = rng.normal(0, 5, (6, 4, 3)).astype(np.float32)
        path = tmp_path / "img.pfm"
        write_pfm(path, img)
        assert np.array_equal(read_pfm(path), img)

    def test_single_channel_round_trip(self, rng, tmp_path):
        img = rng.normal(0, 5, (3, 7)).astype(np.float32)
        path = tmp_path / "map.pfm"
        write_pfm(path, img)
        assert np.array_equal(read_pfm(path), img)

    def test_header_fields(self, tmp_path):
        path = tmp_path / "img.pfm"
        write_pfm(path, np.zeros((2, 3, 3), dtype=np.float32))
        with open(path, "rb") as f:
            assert f.readline().strip() == b"PF"
            assert f.readline().split() == [b"3", b"2"]
            assert float(f.readline()) == -1.0

    def test_rows_stored_bottom_up(self, tmp_path):
        img = np.zeros((2, 1), dtype=np.float32)
        img[0, 0] = 1.0  # top row
        path = tmp_path / "map.pfm"
        write_pfm(path, img)
        with open(path, "rb") as f:
            f.readline(), f.readline(), f.readline()
            raw = np.frombuffer(f.read(), dtype="<f4")
        assert raw[0] == 0.0 and raw[1] == 1.0

    def test_rejects_bad_shape(self, tmp_path):
        with pytest.raises(ValueError):
            write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 4)))


class TestPng:
    def test_u8_round_trip(self, rng, tmp_path):
        # 8-bit format: exact at the quantized level.
        img = rng.uniform(0, 1, (5, 5, 3))
        path = tmp_path / "img.png"
        save_png(path, img)
        back = load_png(path)
        q = np.rint(img * 255.0) / 255.0
        np.testing.assert_allclose(back, q, atol=1e-12)

    def test_quantization_rule(self, tmp_path):
        img = np.full((1, 1, 3), 0.5)
        path = tmp_path / "half.png"
        save_png(path, img)
        from PIL import Image

        assert np.asarray(Image.open(path))[0, 0, 0] == 128  # round(127.5) on even rule = 128


class TestDataset:
    def test_save_load_round_trip(self, rng, tmp_path):
        poses = [look_at([0, 0, 3], width=8, height=6), look_at([3, 0, 0], width=8, height=6)]
        images = [rng.uniform(0, 1, (6, 8, 3)) for _ in poses]
        save_dataset(tmp_path / "scene", Dataset(images=images, poses=poses))
        back = load_dataset(tmp_path / "scene")
        assert len(back) == 2
        assert back.width == 8 and back.height == 6
        for got, want, pose_got, pose_want in zip(back.images, images, back.poses, poses):
            np.testing.assert_allclose(got, np.rint(want * 255) / 255, atol=1e-12)
            np.testing.assert_allclose(pose_got.camera_to_world, pose_want.camera_to_world)
            assert pose_got.fov_x == pytest.approx(pose_want.fov_x)

    def test_validation(self, rng):
        pose = look_at([0, 0, 3], width=4, height=4)
        with pytest.raises(ValueError):
            Dataset(images=[], poses=[])
        with pytest.raises(ValueError):
            Dataset(images=[rng.uniform(0, 1, (5, 4, 3))], poses=[pose])

    def test_missing_manifest_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path)

    def test_extensionless_file_path_resolved(self, rng, tmp_path):
        import json

        d = tmp_path / "scene"
        d.mkdir()
        save_png(d / "r_0.png", rng.uniform(0, 1, (4, 4, 3)))
        pose = look_at([0, 0, 3], width=4, height=4)
        (d / "transforms.json").write_text(
            json.dumps(
                {
                    "camera_angle_x": pose.fov_x,
                    "frames": [
                        {"file_path": "r_0", "transform_matrix": pose.camera_to_world.tolist()}
                    ],
                }
            )
        )
        assert len(load_dataset(d)) == 1

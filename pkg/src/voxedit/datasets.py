"""Posed multi-view datasets in the transforms.json convention.

A dataset directory holds a manifest with ``camera_angle_x`` (horizontal
field of view in radians) and a ``frames`` array of
``{file_path, transform_matrix}`` entries, where the matrix is a row-major
4x4 camera-to-world transform with the camera looking down -z (the
convention synthetic renders ship with).  Alpha images are composited over
the configured background at load time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cameras import CameraPose
from .formats import load_png, save_png


@dataclass
class Dataset:
    """Views with shared intrinsics: float RGB images plus camera poses."""

    images: list[np.ndarray]
    poses: list[CameraPose]

    def __post_init__(self):
        if len(self.images) < 1:
            raise ValueError("dataset needs at least one view")
        if len(self.images) != len(self.poses):
            raise ValueError(
                f"{len(self.images)} images but {len(self.poses)} poses"
            )
        h, w = self.images[0].shape[:2]
        for i, (img, pose) in enumerate(zip(self.images, self.poses)):
            if img.shape[:2] != (h, w):
                raise ValueError(f"view {i} has shape {img.shape[:2]}, expected {(h, w)}")
            if pose.width != w or pose.height != h:
                raise ValueError(f"view {i} pose dimensions disagree with its image")
            if not np.isfinite(pose.camera_to_world).all():
                raise ValueError(f"view {i} pose is not finite")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def width(self) -> int:
        return self.images[0].shape[1]

    @property
    def height(self) -> int:
        return self.images[0].shape[0]


def load_dataset(
    directory,
    manifest: str = "transforms.json",
    background: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> Dataset:
    directory = Path(directory)
    manifest_path = directory / manifest
    if not manifest_path.exists():
        # Synthetic scenes commonly split the manifest per phase.
        alt = directory / "transforms_train.json"
        if alt.exists():
            manifest_path = alt
        else:
            raise FileNotFoundError(f"no {manifest} (or transforms_train.json) in {directory}")
    meta = json.loads(manifest_path.read_text())
    fov_x = float(meta["camera_angle_x"])

    images: list[np.ndarray] = []
    poses: list[CameraPose] = []
    for frame in meta["frames"]:
        rel = frame["file_path"]
        img_path = directory / rel
        if not img_path.exists() and not img_path.suffix:
            img_path = img_path.with_suffix(".png")
        img = load_png(img_path, background=background)
        c2w = np.asarray(frame["transform_matrix"], dtype=np.float64)
        h, w = img.shape[:2]
        poses.append(CameraPose(camera_to_world=c2w, fov_x=fov_x, width=w, height=h))
        images.append(img)
    return Dataset(images=images, poses=poses)


def save_dataset(directory, dataset: Dataset, manifest: str = "transforms.json") -> None:
    """Write images and a manifest in the same convention ``load_dataset`` reads."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frames = []
    fov_x = dataset.poses[0].fov_x
    for i, (img, pose) in enumerate(zip(dataset.images, dataset.poses)):
        if not math.isclose(pose.fov_x, fov_x, rel_tol=1e-9):
            raise ValueError("dataset views must share intrinsics")
        name = f"r_{i:03d}.png"
        save_png(directory / name, img)
        frames.append(
            {"file_path": name, "transform_matrix": pose.camera_to_world.tolist()}
        )
    (directory / manifest).write_text(
        json.dumps({"camera_angle_x": fov_x, "frames": frames}, indent=1)
    )

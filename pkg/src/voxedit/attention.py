"""Lift 2D attention probability maps into a volumetric attention grid.

The attention grid copies (and freezes) the edited scene's density channel,
then fits its scalar attention channel so that grayscale renders match 2D
supervision maps across views, via an L1 loss and Adam.  Fitting a single
3D field against many views naturally smooths out per-view inconsistencies
in the supervision.

Maps come either from a guidance backend (which sees an RGB render of the
scene at each sampled pose) or from recorded map files: ``att_<role>_pose_%04d.pfm``
plus ``att_<role>_poses.json`` listing the poses, in the same manifest
convention as datasets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backends import GuidanceBackend
from .cameras import CameraPose, PoseSampler
from .formats import read_pfm, write_pfm
from .grids import AttentionGrid, FeatureGrid
from .losses import AdamState, adam_step, image_loss
from .render import RenderConfig, render, render_attention, render_attention_backward

ROLES = ("edit", "object")


@dataclass
class LiftConfig:
    iterations: int = 1500
    lr: float = 0.03
    seed: int = 0
    render: RenderConfig = field(default_factory=RenderConfig)
    poses: PoseSampler = field(default_factory=PoseSampler)
    map_timestep: float = 0.2  # recorded in run metadata; map producers consume it
    attn_init: float = 0.0  # luma 0.5 after sigmoid: unbiased start

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


class BackendMapSource:
    """Per-pose maps from a guidance backend, given renders of the scene grid."""

    def __init__(
        self,
        backend: GuidanceBackend,
        scene: FeatureGrid,
        prompt: str,
        token: str,
        role: str,
        cfg: LiftConfig,
        recorder: "MapRecorder | None" = None,
    ):
        if role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {role!r}")
        self.backend = backend
        self.scene = scene
        self.prompt = prompt
        self.token = token
        self.role = role
        self.cfg = cfg
        self.recorder = recorder

    def sample(self, rng: np.random.Generator) -> tuple[CameraPose, np.ndarray]:
        pose = self.cfg.poses.sample(rng)
        image = render(self.scene, pose, self.cfg.render)
        heat = np.asarray(
            self.backend.attention_map(
                image.rgb, self.prompt, self.token, self.role, self.cfg.map_timestep, pose=pose
            ),
            dtype=np.float64,
        )
        if heat.shape != (pose.height, pose.width):
            raise ValueError(
                f"attention map shape {heat.shape} does not match render "
                f"({pose.height}, {pose.width})"
            )
        if self.recorder is not None:
            self.recorder.add(pose, heat)
        return pose, heat


class FileMapSource:
    """Maps replayed from recorded files; poses come from the sidecar manifest."""

    def __init__(self, directory, role: str):
        if role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {role!r}")
        self.directory = Path(directory)
        manifest = self.directory / f"att_{role}_poses.json"
        if not manifest.exists():
            raise FileNotFoundError(f"no pose manifest {manifest}")
        meta = json.loads(manifest.read_text())
        fov_x = float(meta["fov_x"])
        w, h = int(meta["width"]), int(meta["height"])
        self.poses: list[CameraPose] = []
        self.maps: list[np.ndarray] = []
        for frame in meta["frames"]:
            c2w = np.asarray(frame["transform_matrix"], dtype=np.float64)
            self.poses.append(CameraPose(camera_to_world=c2w, fov_x=fov_x, width=w, height=h))
            self.maps.append(read_pfm(self.directory / frame["file_path"]).astype(np.float64))
        if not self.poses:
            raise ValueError(f"{manifest} lists no frames")

    def sample(self, rng: np.random.Generator) -> tuple[CameraPose, np.ndarray]:
        i = int(rng.integers(len(self.poses)))
        return self.poses[i], self.maps[i]


class MapRecorder:
    """Persists (pose, map) pairs in the layout ``FileMapSource`` reads."""

    def __init__(self, directory, role: str):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.role = role
        self.frames: list[dict] = []
        self.meta: dict | None = None

    def add(self, pose: CameraPose, heat: np.ndarray) -> None:
        name = f"att_{self.role}_pose_{len(self.frames):04d}.pfm"
        write_pfm(self.directory / name, heat)
        self.frames.append(
            {"file_path": name, "transform_matrix": pose.camera_to_world.tolist()}
        )
        self.meta = {"fov_x": pose.fov_x, "width": pose.width, "height": pose.height}

    def close(self) -> None:
        if self.meta is None:
            return
        manifest = dict(self.meta, role=self.role, frames=self.frames)
        (self.directory / f"att_{self.role}_poses.json").write_text(
            json.dumps(manifest, indent=1)
        )


@dataclass
class LiftResult:
    grid: AttentionGrid
    loss_history: list[float]
    map_timestep: float


def lift_attention(
    scene: FeatureGrid, source, cfg: LiftConfig | None = None
) -> LiftResult:
    """Fit the attention channel of a fresh grid against 2D supervision maps.

    ``source`` is anything with ``sample(rng) -> (pose, map)``.  The density
    channel is copied from ``scene`` and never touched; only the attention
    channel receives gradient.
    """
    cfg = cfg or LiftConfig()
    grid = AttentionGrid.from_feature_grid(scene, attn_init=cfg.attn_init)
    # Strided view into the attention channel; in-place Adam updates land in
    # the grid while the density channel stays untouched.
    attn = grid.features[..., 1]
    state = AdamState(shape=attn.shape, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)

    history: list[float] = []
    for _ in range(cfg.iterations):
        pose, target = source.sample(rng)
        luma = render_attention(grid, pose, cfg.render)
        loss, d_pixels = image_loss(luma.rgb, target, p=1)
        grad = render_attention_backward(grid, pose, cfg.render, d_pixels)
        adam_step(state, attn, grad)
        history.append(loss)
    return LiftResult(grid=grid, loss_history=history, map_timestep=cfg.map_timestep)

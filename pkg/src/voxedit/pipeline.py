"""End-to-end orchestration: reconstruct, edit, lift, segment, merge, render.

A single TOML config drives the whole run.  Its ``[defaults]`` section is
pre-populated with the canonical hyperparameters, so a saved config doubles
as a record of every constant a run used; the manifest written next to the
artifacts captures the fully resolved values, the seeds, and the artifact
paths, which is enough to reproduce a run bit-exactly with mock or replay
backends.
"""

from __future__ import annotations

import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .attention import BackendMapSource, FileMapSource, LiftConfig, lift_attention
from .backends import make_backend
from .cameras import PoseSampler, ring_poses
from .datasets import load_dataset
from .editing import AnnealSchedule, EditConfig, edit
from .formats import load_grid, save_grid, save_mask, save_png
from .grids import FeatureGrid
from .losses import RegularizerConfig
from .recon import ReconConfig, reconstruct
from .render import RenderConfig, render
from .segmentation import SegConfig, merge, segment

logger = logging.getLogger(__name__)

DEFAULTS = {
    "grid_resolution": 160,
    "image_size": 266,
    "adam_lr": 0.03,
    "seed": 0,
    "edit_iterations": 8000,
    "reg": "correlation",
    "reg_weight": 200.0,
    "anneal_epsilon": 0.02,
    "anneal_start": 4000,
    "anneal_every": 600,
    "anneal_factor": 0.75,
    "anneal_floor": 0.35,
    "attention_iterations": 1500,
    "attention_timestep": 0.2,
    "sigma": 0.1,
    "smoothness_lambda": 5.0,
    "edit_seeds": 300,
    "obj_seeds": 200,
    "pose_radius": 3.0,
    "turntable_views": 100,
}

DEFAULT_CONFIG_TOML = """\
# voxedit pipeline configuration

[defaults]
grid_resolution = 160
image_size = 266
adam_lr = 0.03
seed = 0
edit_iterations = 8000
reg = "correlation"
reg_weight = 200.0
anneal_epsilon = 0.02
anneal_start = 4000
anneal_every = 600
anneal_factor = 0.75
anneal_floor = 0.35
attention_iterations = 1500
attention_timestep = 0.2
sigma = 0.1
smoothness_lambda = 5.0
edit_seeds = 300
obj_seeds = 200
pose_radius = 3.0
turntable_views = 100

[dataset]
path = "data/scene"

[edit]
prompt = "a dog wearing sunglasses"
token = "sunglasses"
backend = "http:http://localhost:8532"
"""


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"pipeline stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class StageTimer:
    name: str
    started: float = 0.0

    def __enter__(self):
        logger.info("stage %s: start", self.name)
        self.started = time.perf_counter()
        return self

    def __exit__(self, *exc):
        logger.info("stage %s: %.1fs", self.name, time.perf_counter() - self.started)
        return False


def load_config(path) -> dict:
    with open(path, "rb") as f:
        return tomllib.load(f)


def _resolved(config: dict) -> dict:
    merged = dict(DEFAULTS)
    merged.update(config.get("defaults", {}))
    return merged


def render_turntable(
    grid,
    n_views: int,
    out_dir,
    elevation_deg: float = 30.0,
    radius: float = 3.0,
    image_size: int = 266,
    render_cfg: RenderConfig | None = None,
    prefix: str = "view",
) -> list[Path]:
    """Render evenly spaced azimuth views at fixed elevation to PNG files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    poses = ring_poses(
        n_views, elevation_deg=elevation_deg, radius=radius, width=image_size, height=image_size
    )
    paths = []
    for i, pose in enumerate(poses):
        image = render(grid, pose, render_cfg)
        path = out_dir / f"{prefix}_{i:03d}.png"
        save_png(path, image.rgb)
        paths.append(path)
    return paths


def run_pipeline(config: dict | str | Path, out_dir, skip_refine: bool = False) -> dict:
    """Execute every stage, writing artifacts and a run manifest to ``out_dir``.

    Stage order: reconstruct (or load a provided input grid), edit, lift
    attention for both roles, segment, merge, turntable render.  A failure
    halts with the stage name; artifacts of completed stages stay on disk.
    """
    if not isinstance(config, dict):
        config = load_config(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    d = _resolved(config)
    seed = int(d["seed"])
    size = int(d["image_size"])
    poses = PoseSampler(radius=float(d["pose_radius"]), width=size, height=size)
    render_cfg = RenderConfig()

    manifest: dict = {
        "voxedit_version": __version__,
        "resolved_defaults": d,
        "config": config,
        "skip_refine": skip_refine,
        "artifacts": {},
        "stages": {},
    }

    def _finish(stage: str, err: BaseException):
        manifest["failed_stage"] = stage
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, default=str))
        raise PipelineError(stage, err) from err

    # --- reconstruct -----------------------------------------------------
    stage = "reconstruct"
    try:
        with StageTimer(stage):
            recon_cfg_raw = config.get("reconstruct", {})
            if "input_grid" in recon_cfg_raw:
                grid_in = load_grid(recon_cfg_raw["input_grid"])
                if not isinstance(grid_in, FeatureGrid):
                    raise ValueError("input_grid must be a 4-channel scene grid")
                manifest["stages"][stage] = {"input_grid": str(recon_cfg_raw["input_grid"])}
            else:
                dataset = load_dataset(config["dataset"]["path"])
                rc = ReconConfig(
                    resolution=int(recon_cfg_raw.get("resolution", d["grid_resolution"])),
                    iterations=recon_cfg_raw.get("iterations"),
                    lr=float(d["adam_lr"]),
                    seed=seed,
                    render=render_cfg,
                )
                result = reconstruct(dataset, rc)
                grid_in = result.grid
                manifest["stages"][stage] = {
                    "resolution": rc.resolution,
                    "iterations": rc.iterations,
                    "views": len(dataset),
                    "final_l1": result.loss_history[-1] if result.loss_history else None,
                    "seed": seed,
                }
            path_in = out_dir / "grid_input.voxe"
            save_grid(path_in, grid_in)
            manifest["artifacts"]["grid_input"] = str(path_in)
    except Exception as err:  # noqa: BLE001 - stage boundary
        _finish(stage, err)

    # --- edit -------------------------------------------------------------
    stage = "edit"
    try:
        with StageTimer(stage):
            e = config.get("edit", {})
            backend = make_backend(e["backend"])
            schedule = AnnealSchedule(
                epsilon=float(d["anneal_epsilon"]),
                i_start=int(d["anneal_start"]),
                f_a=int(d["anneal_every"]),
                gamma_a=float(d["anneal_factor"]),
                k_floor=float(d["anneal_floor"]),
            )
            ec = EditConfig(
                prompt=e.get("prompt", ""),
                token=e.get("token", ""),
                iterations=int(e.get("iterations", d["edit_iterations"])),
                reg=RegularizerConfig(
                    kind=str(e.get("reg", d["reg"])), weight=float(e.get("reg_weight", d["reg_weight"]))
                ),
                render=render_cfg,
                poses=poses,
                schedule=schedule,
                lr=float(d["adam_lr"]),
                seed=seed,
            )
            if ec.reg.kind.startswith("image_"):
                ec.dataset = load_dataset(config["dataset"]["path"])
            result = edit(grid_in, ec, backend)
            grid_edit = result.grid
            path_edit = out_dir / "grid_edited.voxe"
            save_grid(path_edit, grid_edit)
            manifest["artifacts"]["grid_edited"] = str(path_edit)
            manifest["stages"][stage] = {
                "prompt": ec.prompt,
                "token": ec.token,
                "iterations": ec.iterations,
                "reg": ec.reg.kind,
                "reg_weight": ec.reg.weight,
                "backend": e["backend"],
                "seed": seed,
                "final_reg_loss": result.reg_loss_history[-1] if result.reg_loss_history else None,
            }
    except Exception as err:  # noqa: BLE001
        _finish(stage, err)

    if skip_refine:
        manifest["final_grid"] = manifest["artifacts"]["grid_edited"]
        _render_final(manifest, d, grid_edit, out_dir, render_cfg)
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, default=str))
        return manifest

    # --- lift attention ----------------------------------------------------
    stage = "lift_attention"
    try:
        with StageTimer(stage):
            a = config.get("attention", {})
            lc = LiftConfig(
                iterations=int(a.get("iterations", d["attention_iterations"])),
                lr=float(d["adam_lr"]),
                seed=seed,
                render=render_cfg,
                poses=poses,
                map_timestep=float(a.get("timestep", d["attention_timestep"])),
            )
            grids = {}
            for role, key in (("edit", "maps_edit"), ("object", "maps_object")):
                if key in a:
                    source = FileMapSource(a[key], role)
                else:
                    e = config.get("edit", {})
                    source = BackendMapSource(
                        make_backend(e["backend"]),
                        grid_edit,
                        e.get("prompt", ""),
                        e.get("token", ""),
                        role,
                        lc,
                    )
                grids[role] = lift_attention(grid_edit, source, lc).grid
            attn_edit, attn_obj = grids["edit"], grids["object"]
            path_ae = out_dir / "attn_edit.voxe"
            path_ao = out_dir / "attn_object.voxe"
            save_grid(path_ae, attn_edit)
            save_grid(path_ao, attn_obj)
            manifest["artifacts"]["attn_edit"] = str(path_ae)
            manifest["artifacts"]["attn_object"] = str(path_ao)
            manifest["stages"][stage] = {
                "iterations": lc.iterations,
                "map_timestep": lc.map_timestep,
                "seed": seed,
            }
    except Exception as err:  # noqa: BLE001
        _finish(stage, err)

    # --- segment + merge ---------------------------------------------------
    stage = "segment"
    try:
        with StageTimer(stage):
            s = config.get("segment", {})
            sc = SegConfig(
                sigma=float(s.get("sigma", d["sigma"])),
                smoothness_lambda=float(s.get("smoothness_lambda", d["smoothness_lambda"])),
                edit_seeds=int(s.get("edit_seeds", d["edit_seeds"])),
                obj_seeds=int(s.get("obj_seeds", d["obj_seeds"])),
            )
            mask = segment(grid_edit, attn_edit, attn_obj, sc)
            path_mask = out_dir / "mask.voxm"
            save_mask(path_mask, mask)
            manifest["artifacts"]["mask"] = str(path_mask)
            manifest["stages"][stage] = {
                "sigma": sc.sigma,
                "smoothness_lambda": sc.smoothness_lambda,
                "edit_seeds": sc.edit_seeds,
                "obj_seeds": sc.obj_seeds,
                "edit_voxels": int(mask.bits.sum()),
            }
    except Exception as err:  # noqa: BLE001
        _finish(stage, err)

    stage = "merge"
    try:
        with StageTimer(stage):
            grid_refined = merge(grid_in, grid_edit, mask)
            path_refined = out_dir / "grid_refined.voxe"
            save_grid(path_refined, grid_refined)
            manifest["artifacts"]["grid_refined"] = str(path_refined)
            manifest["final_grid"] = str(path_refined)
    except Exception as err:  # noqa: BLE001
        _finish(stage, err)

    _render_final(manifest, d, grid_refined, out_dir, render_cfg)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, default=str))
    return manifest


def _render_final(manifest, d, grid, out_dir: Path, render_cfg) -> None:
    stage = "render"
    try:
        with StageTimer(stage):
            views = int(d["turntable_views"])
            paths = render_turntable(
                grid,
                views,
                out_dir / "turntable",
                radius=float(d["pose_radius"]),
                image_size=int(d["image_size"]),
                render_cfg=render_cfg,
            )
            manifest["artifacts"]["turntable"] = [str(p) for p in paths]
            manifest["stages"][stage] = {"views": views}
    except Exception as err:  # noqa: BLE001
        manifest["failed_stage"] = stage
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, default=str))
        raise PipelineError(stage, err) from err

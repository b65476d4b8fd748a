"""Command-line interface over the engine stages.

Subcommands mirror the pipeline: reconstruct, edit, lift-attn, segment,
merge, render (turntable), and pipeline (all stages from one TOML config).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .attention import BackendMapSource, FileMapSource, LiftConfig, lift_attention
from .backends import make_backend
from .cameras import PoseSampler
from .datasets import load_dataset
from .editing import EditConfig, edit
from .formats import load_grid, load_mask, save_grid, save_mask
from .grids import AttentionGrid, FeatureGrid
from .losses import RegularizerConfig
from .pipeline import DEFAULT_CONFIG_TOML, render_turntable, run_pipeline
from .recon import ReconConfig, reconstruct
from .render import RenderConfig
from .segmentation import SegConfig, merge, segment

# CLI spellings of the regularizer kinds.
REG_NAMES = {
    "correlation": "correlation",
    "correlation_rgb": "correlation_plus_rgb",
    "vol_l1": "volumetric_l1",
    "vol_l2": "volumetric_l2",
    "img_l1": "image_l1",
    "img_l2": "image_l2",
    "none": "none",
}


def _load_scene(path) -> FeatureGrid:
    grid = load_grid(path)
    if not isinstance(grid, FeatureGrid):
        raise SystemExit(f"{path} is not a 4-channel scene grid")
    return grid


def _load_attention(path) -> AttentionGrid:
    grid = load_grid(path)
    if not isinstance(grid, AttentionGrid):
        raise SystemExit(f"{path} is not a 2-channel attention grid")
    return grid


def cmd_reconstruct(args) -> int:
    dataset = load_dataset(args.data)
    cfg = ReconConfig(resolution=args.res, iterations=args.iters, seed=args.seed)
    result = reconstruct(dataset, cfg)
    save_grid(args.out, result.grid)
    print(f"reconstructed {args.res}^3 grid from {len(dataset)} views -> {args.out}")
    if result.loss_history:
        print(f"final training L1: {result.loss_history[-1]:.5f}")
    return 0


def cmd_edit(args) -> int:
    grid_in = _load_scene(args.grid)
    backend = make_backend(args.backend)
    cfg = EditConfig(
        prompt=args.prompt,
        iterations=args.iters,
        reg=RegularizerConfig(kind=REG_NAMES[args.reg], weight=args.reg_weight),
        poses=PoseSampler(width=args.size, height=args.size),
        seed=args.seed,
    )
    if cfg.reg.kind.startswith("image_"):
        if not args.data:
            raise SystemExit(f"--reg {args.reg} needs --data with the input views")
        cfg.dataset = load_dataset(args.data)
    result = edit(grid_in, cfg, backend)
    save_grid(args.out, result.grid)
    print(f"edited grid after {args.iters} iterations -> {args.out}")
    return 0


def cmd_lift_attn(args) -> int:
    scene = _load_scene(args.grid)
    cfg = LiftConfig(
        iterations=args.iters, seed=args.seed, poses=PoseSampler(width=args.size, height=args.size)
    )
    if args.maps:
        source = FileMapSource(args.maps, args.role)
    elif args.backend:
        source = BackendMapSource(
            make_backend(args.backend), scene, args.prompt, args.token, args.role, cfg
        )
    else:
        raise SystemExit("provide either --maps <dir> or --backend <spec>")
    result = lift_attention(scene, source, cfg)
    save_grid(args.out, result.grid)
    print(f"lifted {args.role} attention ({args.iters} iterations) -> {args.out}")
    return 0


def cmd_segment(args) -> int:
    grid = _load_scene(args.grid)
    attn_edit = _load_attention(args.attn_edit)
    attn_obj = _load_attention(args.attn_obj)
    cfg = SegConfig(
        sigma=args.sigma,
        smoothness_lambda=getattr(args, "lambda"),
        edit_seeds=args.edit_seeds,
        obj_seeds=args.obj_seeds,
        unary=args.unary,
    )
    mask = segment(grid, attn_edit, attn_obj, cfg)
    save_mask(args.out, mask)
    print(f"segmented {int(mask.bits.sum())} edit voxels -> {args.out}")
    return 0


def cmd_merge(args) -> int:
    grid_in = _load_scene(args.input)
    grid_edit = _load_scene(args.edited)
    mask = load_mask(args.mask)
    save_grid(args.out, merge(grid_in, grid_edit, mask))
    print(f"merged grids under mask -> {args.out}")
    return 0


def cmd_render(args) -> int:
    grid = load_grid(args.grid)
    paths = render_turntable(
        grid,
        args.views,
        args.out_dir,
        elevation_deg=args.elevation,
        radius=args.radius,
        image_size=args.size,
        render_cfg=RenderConfig(),
    )
    print(f"rendered {len(paths)} views -> {args.out_dir}")
    return 0


def cmd_pipeline(args) -> int:
    if args.emit_config:
        Path(args.config).write_text(DEFAULT_CONFIG_TOML)
        print(f"wrote template config -> {args.config}")
        return 0
    manifest = run_pipeline(args.config, args.out_dir, skip_refine=args.skip_refine)
    print(f"pipeline complete; final grid: {manifest['final_grid']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxedit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reconstruct", help="fit a grid to posed images")
    p.add_argument("--data", required=True, help="dataset directory with transforms.json")
    p.add_argument("--out", required=True)
    p.add_argument("--res", type=int, default=160)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("edit", help="optimize an edited grid under guidance")
    p.add_argument("--grid", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=8000)
    p.add_argument("--reg", choices=sorted(REG_NAMES), default="correlation")
    p.add_argument("--reg-weight", type=float, default=200.0)
    p.add_argument("--backend", required=True, help="mock:target=<img> | replay:<dir> | http:<url>")
    p.add_argument("--data", default=None, help="input views (required by img_* regularizers)")
    p.add_argument("--size", type=int, default=266, help="render resolution")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("lift-attn", help="fit a volumetric attention grid")
    p.add_argument("--grid", required=True, help="edited scene grid (.voxe)")
    p.add_argument("--role", choices=("edit", "object"), required=True)
    p.add_argument("--maps", default=None, help="directory of recorded attention maps")
    p.add_argument("--backend", default=None, help="guidance backend spec")
    p.add_argument("--prompt", default="")
    p.add_argument("--token", default="")
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=1500)
    p.add_argument("--size", type=int, default=266)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_lift_attn)

    p = sub.add_parser("segment", help="graph-cut a binary edit mask")
    p.add_argument("--grid", required=True)
    p.add_argument("--attn-edit", required=True)
    p.add_argument("--attn-obj", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--lambda", type=float, default=5.0, dest="lambda")
    p.add_argument("--edit-seeds", type=int, default=300)
    p.add_argument("--obj-seeds", type=int, default=200)
    p.add_argument("--unary", choices=("seeds", "soft"), default="seeds")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("merge", help="blend input and edited grids under a mask")
    p.add_argument("--input", required=True)
    p.add_argument("--edited", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("render", help="turntable renders of a grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--views", type=int, default=100)
    p.add_argument("--elevation", type=float, default=30.0)
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--size", type=int, default=266)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("pipeline", help="run every stage from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default="voxedit_out")
    p.add_argument("--skip-refine", action="store_true", help="stop after editing")
    p.add_argument("--emit-config", action="store_true", help="write a template config and exit")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

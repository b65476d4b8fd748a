"""The guided editing loop over a coupled pair of grids.

Starting from a copy of the input grid, each iteration renders the edited
grid from a random upper-hemisphere pose, asks the guidance backend for a
per-pixel gradient at a sampled diffusion timestep, pulls that gradient
back onto the raw grid features through the renderer, adds the weighted
regularizer gradient that couples the edited grid to the input, and takes
one Adam step.  The maximum timestep is annealed on a fixed multiplicative
schedule so late iterations concentrate on low-noise refinements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .backends import BackendError, GuidanceBackend
from .cameras import CameraPose, PoseSampler
from .datasets import Dataset
from .grids import FeatureGrid
from .losses import (
    AdamState,
    RegularizerConfig,
    adam_step,
    correlation_loss,
    correlation_plus_rgb_loss,
    image_loss,
    volumetric_lp_loss,
)
from .render import RenderConfig, render, render_backward


class EditDivergedError(RuntimeError):
    """The optimization produced a non-finite gradient."""


@dataclass
class AnnealSchedule:
    """Multiplicative decay of the maximum diffusion timestep.

    The multiplier k starts at 1 and is scaled by ``gamma_a`` at every
    iteration i >= ``i_start`` with i % ``f_a`` == 0.  Annealing stops at
    ``k_floor``: in the default ``freeze`` mode the multiplication that
    would cross the floor is skipped and k keeps its last value above it;
    ``clamp`` mode sets k to the floor instead.
    """

    epsilon: float = 0.02
    i_start: int = 4000
    f_a: int = 600
    gamma_a: float = 0.75
    k_floor: float = 0.35
    t0: float = 0.0
    t_final: float = 1.0
    floor_mode: str = "freeze"

    def __post_init__(self):
        if self.f_a < 1:
            raise ValueError("annealing frequency must be >= 1")
        if not (0.0 < self.gamma_a < 1.0):
            raise ValueError("annealing factor must be in (0, 1)")
        if self.floor_mode not in ("freeze", "clamp"):
            raise ValueError(f"floor_mode must be 'freeze' or 'clamp', got {self.floor_mode!r}")

    def k_at(self, iteration: int) -> float:
        if iteration < 0:
            raise ValueError("iteration must be >= 0")
        first_event = math.ceil(self.i_start / self.f_a) * self.f_a
        if iteration < max(first_event, self.i_start):
            return 1.0
        events = (iteration - first_event) // self.f_a + 1
        k = 1.0
        for _ in range(events):
            nxt = k * self.gamma_a
            if nxt < self.k_floor:
                return self.k_floor if self.floor_mode == "clamp" else k
            k = nxt
        return k

    def t_max(self, iteration: int) -> float:
        return self.t_final * self.k_at(iteration)


def sample_timestep(schedule: AnnealSchedule, iteration: int, rng: np.random.Generator) -> float:
    """Uniform draw from [t0 + eps, t_max + eps], clamped to valid time <= 1."""
    lo = schedule.t0 + schedule.epsilon
    hi = schedule.t_max(iteration) + schedule.epsilon
    return min(float(rng.uniform(lo, hi)), 1.0)


@dataclass
class EditConfig:
    prompt: str
    token: str = ""
    iterations: int = 8000
    reg: RegularizerConfig = field(default_factory=RegularizerConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    poses: PoseSampler = field(default_factory=PoseSampler)
    schedule: AnnealSchedule = field(default_factory=AnnealSchedule)
    lr: float = 0.03
    seed: int = 0
    fixed_pose: CameraPose | None = None  # overrides pose sampling (tests, ablations)
    dataset: Dataset | None = None  # required by image-space regularizers

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass
class EditResult:
    grid: FeatureGrid
    reg_loss_history: list[float]


def regularizer_gradient(
    reg: RegularizerConfig,
    grid_in: FeatureGrid,
    grid_edit: FeatureGrid,
    render_cfg: RenderConfig,
    dataset: Dataset | None,
    rng: np.random.Generator,
) -> tuple[float, np.ndarray | None]:
    """Unweighted regularizer loss and gradient on the edited grid's features.

    Volumetric kinds compare raw features directly; image-space kinds render
    the edited grid at one randomly chosen input view and compare against
    that view's image, pushing the pixel gradient back through the renderer.
    """
    kind = reg.kind
    if kind == "none":
        return 0.0, None

    feats_e = grid_edit.features
    grad = np.zeros(feats_e.shape, dtype=np.float64)
    if kind == "correlation":
        loss, g = correlation_loss(grid_in.features[..., 0], feats_e[..., 0])
        grad[..., 0] = g.reshape(grad[..., 0].shape)
        return loss, grad
    if kind == "correlation_plus_rgb":
        return correlation_plus_rgb_loss(grid_in.features, feats_e)
    if kind == "volumetric_l1" or kind == "volumetric_l2":
        p = 1 if kind.endswith("l1") else 2
        loss, g = volumetric_lp_loss(grid_in.features[..., 0], feats_e[..., 0], p)
        grad[..., 0] = g
        return loss, grad
    if kind == "image_l1" or kind == "image_l2":
        if dataset is None:
            raise ValueError(f"regularizer {kind!r} needs the input dataset")
        p = 1 if kind.endswith("l1") else 2
        view = int(rng.integers(len(dataset)))
        pose = dataset.poses[view]
        image = render(grid_edit, pose, render_cfg)
        loss, d_pixels = image_loss(image.rgb, dataset.images[view], p=p)
        return loss, render_backward(grid_edit, pose, render_cfg, d_pixels)
    raise ValueError(f"unknown regularizer kind {kind!r}")


def edit(grid_in: FeatureGrid, cfg: EditConfig, backend: GuidanceBackend) -> EditResult:
    """Optimize an edited copy of ``grid_in`` under backend guidance.

    The input grid is never mutated.  Raises :class:`BackendError` with the
    failing iteration on backend trouble and :class:`EditDivergedError` if a
    non-finite gradient appears.
    """
    grid_edit = grid_in.copy()
    params = grid_edit.features.reshape(-1)
    state = AdamState(shape=params.shape, lr=cfg.lr)

    pose_rng, t_rng, seed_rng, reg_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(4)
    )

    history: list[float] = []
    for i in range(cfg.iterations):
        pose = cfg.fixed_pose or cfg.poses.sample(pose_rng)
        image = render(grid_edit, pose, cfg.render)
        t = sample_timestep(cfg.schedule, i, t_rng)
        call_seed = int(seed_rng.integers(2**31))

        try:
            pixel_grad = np.asarray(
                backend.sds_gradient(image.rgb, cfg.prompt, t, call_seed), dtype=np.float64
            )
        except BackendError as err:
            if err.iteration is None:
                raise BackendError(str(err), iteration=i) from err
            raise
        if pixel_grad.shape != image.rgb.shape:
            raise BackendError(
                f"backend returned shape {pixel_grad.shape}, expected {image.rgb.shape}",
                iteration=i,
            )

        grad = render_backward(grid_edit, pose, cfg.render, pixel_grad)

        reg_loss, reg_grad = regularizer_gradient(
            cfg.reg, grid_in, grid_edit, cfg.render, cfg.dataset, reg_rng
        )
        if reg_grad is not None:
            grad += cfg.reg.weight * reg_grad
        history.append(reg_loss)

        if not np.isfinite(grad).all():
            raise EditDivergedError(f"non-finite gradient at iteration {i}")
        adam_step(state, params, grad.reshape(-1))
    return EditResult(grid=grid_edit, reg_loss_history=history)

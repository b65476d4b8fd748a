"""Fit a scene grid to posed images with an L1 photometric loss.

One optimization step renders a single training view, measures mean
absolute error against it, backpropagates through the renderer, and
applies an Adam update to every raw grid feature.  Views are visited in
seeded epoch-shuffled order, so runs are deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .grids import FeatureGrid
from .losses import AdamState, adam_step, image_loss
from .render import RenderConfig, render, render_backward


@dataclass
class ReconConfig:
    resolution: int = 160
    bounds: np.ndarray | None = None
    iterations: int | None = None  # None: 10 epochs over the dataset
    lr: float = 0.03
    seed: int = 0
    render: RenderConfig = field(default_factory=RenderConfig)
    # Raw density must start positive: at negative raw values the ReLU
    # subgradient is zero everywhere, so an "empty" start can never grow
    # geometry.  A faint fog trains away quickly.
    density_init: float = 0.1
    color_init: float = 0.0  # mid-gray after sigmoid


@dataclass
class ReconResult:
    grid: FeatureGrid
    loss_history: list[float]


def reconstruct(dataset: Dataset, cfg: ReconConfig | None = None) -> ReconResult:
    """Optimize a fresh grid until its renders match the dataset views."""
    cfg = cfg or ReconConfig()
    if len(dataset) < 1:
        raise ValueError("cannot reconstruct from an empty dataset")

    grid = FeatureGrid.filled(
        cfg.resolution, bounds=cfg.bounds, density=cfg.density_init, color=cfg.color_init
    )
    params = grid.features.reshape(-1)
    state = AdamState(shape=params.shape, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)

    n_views = len(dataset)
    iterations = cfg.iterations if cfg.iterations is not None else 10 * n_views

    order = np.array([], dtype=np.int64)
    history: list[float] = []
    for _ in range(iterations):
        if order.size == 0:
            order = rng.permutation(n_views)
        view, order = int(order[0]), order[1:]

        image = render(grid, dataset.poses[view], cfg.render)
        loss, d_pixels = image_loss(image.rgb, dataset.images[view], p=1)
        grad = render_backward(grid, dataset.poses[view], cfg.render, d_pixels)
        adam_step(state, params, grad.reshape(-1))
        history.append(loss)
    return ReconResult(grid=grid, loss_history=history)

"""Differentiable volume rendering over feature grids.

Forward pass: each ray takes equidistant samples across its in-box segment,
interpolates raw features, activates them, and alpha-composites
front-to-back over a constant background.  The matching backward pass
produces analytic gradients with respect to every raw grid feature by
chaining through compositing, activation, and the trilinear stencil.

All arithmetic runs in float64 (grids store float32); rays are processed in
chunks so peak memory stays bounded at large resolutions.  The pixel loop
is fully vectorized and deterministic: gradients accumulate in a fixed
order, so identical inputs give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .cameras import CameraPose, generate_rays, intersect_bounds
from .grids import AttentionGrid, FeatureGrid, corner_weights


def _white() -> tuple[float, float, float]:
    return (1.0, 1.0, 1.0)


@dataclass
class RenderConfig:
    """Sampling and compositing knobs shared by forward and backward passes.

    ``samples_per_ray`` of None means 2 samples per voxel crossed
    (2 * resolution).  Stratified jitter is off by default; when enabled the
    backward pass regenerates the identical offsets from ``jitter_seed``.
    """

    samples_per_ray: int | None = None
    background: tuple[float, float, float] = field(default_factory=_white)
    jitter: bool = False
    jitter_seed: int = 0
    ray_chunk: int = 32768

    def resolve_samples(self, resolution: int) -> int:
        s = self.samples_per_ray if self.samples_per_ray is not None else 2 * resolution
        if s < 2:
            raise ValueError(f"samples_per_ray must be >= 2, got {s}")
        return s


@dataclass
class RenderedImage:
    """Float image in [0, 1] plus per-pixel accumulated opacity."""

    rgb: np.ndarray
    opacity: np.ndarray

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def height(self) -> int:
        return self.rgb.shape[0]


def composite(
    sigma: np.ndarray, intensity: np.ndarray, delta: np.ndarray, background: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Front-to-back alpha compositing along the sample axis.

    ``sigma`` (R, S), ``intensity`` (R, S, K), ``delta`` (R,) per-ray sample
    spacing, ``background`` (K,).  Returns (pixel (R, K), weights (R, S),
    t_final (R,)) with weights[j] = T_j * alpha_j and
    T_j = prod_{k<j} (1 - alpha_k); weights sum to 1 - t_final exactly up to
    rounding.
    """
    alpha = 1.0 - np.exp(-sigma * delta[:, None])
    one_minus = 1.0 - alpha
    trans = np.cumprod(
        np.concatenate([np.ones_like(alpha[:, :1]), one_minus[:, :-1]], axis=1), axis=1
    )
    weights = trans * alpha
    t_final = trans[:, -1] * one_minus[:, -1]
    pixel = np.einsum("rs,rsk->rk", weights, intensity) + t_final[:, None] * background
    return pixel, weights, t_final


def _sample_ts(t0, t1, n_samples, cfg: RenderConfig, chunk_key: int):
    """Per-ray sample parameters (R, S) and the spacing delta (R,)."""
    delta = (t1 - t0) / n_samples
    if cfg.jitter:
        rng = np.random.default_rng([cfg.jitter_seed, chunk_key])
        offs = rng.random((t0.shape[0], n_samples))
    else:
        offs = np.full((t0.shape[0], n_samples), 0.5)
    ts = t0[:, None] + (np.arange(n_samples) + offs) * delta[:, None]
    return ts, delta


def _background_vector(cfg: RenderConfig, k: int) -> np.ndarray:
    bg = np.asarray(cfg.background, dtype=np.float64)
    if k == 3:
        return bg
    # Grayscale compositing uses the luma of the configured background.
    return np.array([float(bg.mean())])


def _render_core(features, bounds, resolution, pose, cfg):
    """Shared forward pass; returns flat pixels (P, K) and opacity (P,)."""
    channels = features.shape[-1]
    k = channels - 1
    n_samples = cfg.resolve_samples(resolution)
    flat = features.reshape(-1, channels)
    bg = _background_vector(cfg, k)

    bundle = generate_rays(pose)
    t0, t1, hit = intersect_bounds(bundle, bounds)
    n_pix = len(bundle)

    pixels = np.tile(bg, (n_pix, 1))
    opacity = np.zeros(n_pix)

    hit_idx = np.nonzero(hit & (t1 > t0))[0]
    for start in range(0, hit_idx.size, cfg.ray_chunk):
        sel = hit_idx[start : start + cfg.ray_chunk]
        ts, delta = _sample_ts(t0[sel], t1[sel], n_samples, cfg, start)
        pts = bundle.origins[sel, None, :] + bundle.directions[sel, None, :] * ts[..., None]

        idx, w, _ = corner_weights(bounds, resolution, pts)
        raw = np.zeros(pts.shape[:-1] + (channels,))
        for c in range(8):
            raw += w[..., c, None] * flat[idx[..., c]].astype(np.float64)

        sigma = np.maximum(raw[..., 0], 0.0)
        intensity = expit(raw[..., 1:])
        pix, _, t_final = composite(sigma, intensity, delta, bg)
        pixels[sel] = pix
        opacity[sel] = 1.0 - t_final
    return pixels, opacity


def render(grid: FeatureGrid, pose: CameraPose, cfg: RenderConfig | None = None) -> RenderedImage:
    """Render an RGB view of a scene grid."""
    cfg = cfg or RenderConfig()
    pixels, opacity = _render_core(grid.features, grid.bounds, grid.resolution, pose, cfg)
    h, w = pose.height, pose.width
    return RenderedImage(rgb=pixels.reshape(h, w, 3), opacity=opacity.reshape(h, w))


def render_attention(
    grid: AttentionGrid, pose: CameraPose, cfg: RenderConfig | None = None
) -> RenderedImage:
    """Render the attention channel as a grayscale luma image (H, W)."""
    cfg = cfg or RenderConfig()
    pixels, opacity = _render_core(grid.features, grid.bounds, grid.resolution, pose, cfg)
    h, w = pose.height, pose.width
    return RenderedImage(rgb=pixels.reshape(h, w), opacity=opacity.reshape(h, w))


def _render_backward_core(features, bounds, resolution, pose, cfg, upstream):
    """Gradient of sum(pixel * upstream) w.r.t. every raw grid feature.

    Recomputes the forward quantities chunk by chunk (same sampling
    configuration, same jitter stream) and pushes the per-pixel upstream
    gradient through compositing, activation, and the trilinear stencil.
    Returns a float64 array shaped like ``features``.
    """
    channels = features.shape[-1]
    k = channels - 1
    n_samples = cfg.resolve_samples(resolution)
    flat = features.reshape(-1, channels)
    bg = _background_vector(cfg, k)

    up = np.asarray(upstream, dtype=np.float64).reshape(-1, k)
    bundle = generate_rays(pose)
    if up.shape[0] != len(bundle):
        raise ValueError(
            f"upstream gradient has {up.shape[0]} pixels, camera produces {len(bundle)}"
        )
    t0, t1, hit = intersect_bounds(bundle, bounds)

    grad = np.zeros_like(flat, dtype=np.float64)
    hit_idx = np.nonzero(hit & (t1 > t0))[0]
    for start in range(0, hit_idx.size, cfg.ray_chunk):
        sel = hit_idx[start : start + cfg.ray_chunk]
        ts, delta = _sample_ts(t0[sel], t1[sel], n_samples, cfg, start)
        pts = bundle.origins[sel, None, :] + bundle.directions[sel, None, :] * ts[..., None]

        idx, w, _ = corner_weights(bounds, resolution, pts)
        raw = np.zeros(pts.shape[:-1] + (channels,))
        for c in range(8):
            raw += w[..., c, None] * flat[idx[..., c]].astype(np.float64)

        sigma = np.maximum(raw[..., 0], 0.0)
        intensity = expit(raw[..., 1:])
        _, weights, t_final = composite(sigma, intensity, delta, bg)

        u = up[sel]  # (R, K)
        # Projections of intensities and background onto the upstream vector.
        a = np.einsum("rsk,rk->rs", intensity, u)
        b = u @ bg

        # d(pixel.u)/d(intensity_j) = weight_j * u, chained through sigmoid.
        d_int = weights[..., None] * u[:, None, :] * (intensity * (1.0 - intensity))

        # d(pixel.u)/d(sigma_j) = delta * (T_{j+1} a_j - suffix_j - t_final b)
        # with suffix_j the weighted intensity projection strictly after j.
        alpha = 1.0 - np.exp(-sigma * delta[:, None])
        one_minus = 1.0 - alpha
        trans = np.cumprod(
            np.concatenate([np.ones_like(alpha[:, :1]), one_minus[:, :-1]], axis=1), axis=1
        )
        trans_next = trans * one_minus
        wa = weights * a
        suffix = wa[:, ::-1].cumsum(axis=1)[:, ::-1] - wa
        d_sigma = delta[:, None] * (trans_next * a - suffix - (t_final * b)[:, None])
        d_sigma_raw = d_sigma * (raw[..., 0] > 0.0)

        d_raw = np.concatenate([d_sigma_raw[..., None], d_int], axis=-1)
        rows = idx.reshape(-1, 8)
        vals = d_raw.reshape(rows.shape[0], channels)
        wflat = w.reshape(-1, 8)
        for c in range(8):
            np.add.at(grad, rows[:, c], wflat[:, c, None] * vals)
    return grad.reshape(features.shape)


def render_backward(
    grid: FeatureGrid, pose: CameraPose, cfg: RenderConfig | None, upstream: np.ndarray
) -> np.ndarray:
    """Gradient of an upstream per-pixel RGB loss w.r.t. all raw features.

    ``upstream`` is dLoss/dRGB shaped (H, W, 3); the result is a float64
    array shaped (n, n, n, 4).  Must be called with the same config as the
    forward pass it differentiates.
    """
    cfg = cfg or RenderConfig()
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (pose.height, pose.width, 3):
        raise ValueError(
            f"upstream shape {upstream.shape} does not match image "
            f"({pose.height}, {pose.width}, 3)"
        )
    return _render_backward_core(
        grid.features, grid.bounds, grid.resolution, pose, cfg, upstream
    )


def render_attention_backward(
    grid: AttentionGrid, pose: CameraPose, cfg: RenderConfig | None, upstream: np.ndarray
) -> np.ndarray:
    """Gradient of an upstream per-pixel luma loss w.r.t. the attention channel.

    ``upstream`` is dLoss/dLuma shaped (H, W); the result has shape
    (n, n, n) and covers the attention channel only (density is frozen).
    """
    cfg = cfg or RenderConfig()
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (pose.height, pose.width):
        raise ValueError(
            f"upstream shape {upstream.shape} does not match image "
            f"({pose.height}, {pose.width})"
        )
    grad = _render_backward_core(
        grid.features, grid.bounds, grid.resolution, pose, cfg, upstream[..., None]
    )
    return grad[..., 1]

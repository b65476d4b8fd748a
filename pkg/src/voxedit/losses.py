"""Loss functions with analytic gradients, plus a self-contained Adam.

The volumetric correlation loss couples an edited grid to its source by
penalizing 1 minus the Pearson correlation of their density features; it is
invariant to positive affine rescaling of either side, so structure is
pinned while absolute feature magnitudes stay free.  Gradients flow only
into the second argument (the grid being optimized).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Below this (biased) variance a feature vector is treated as constant:
# correlation carries no signal, so the loss is 1 with zero gradient.
VARIANCE_FLOOR = 1e-12

REGULARIZER_KINDS = (
    "correlation",
    "correlation_plus_rgb",
    "volumetric_l1",
    "volumetric_l2",
    "image_l1",
    "image_l2",
    "none",
)


@dataclass
class RegularizerConfig:
    kind: str = "correlation"
    weight: float = 200.0

    def __post_init__(self):
        if self.kind not in REGULARIZER_KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}; expected one of {REGULARIZER_KINDS}")
        if self.weight < 0:
            raise ValueError(f"regularizer weight must be >= 0, got {self.weight}")


def correlation_loss(f_ref: np.ndarray, f_opt: np.ndarray) -> tuple[float, np.ndarray]:
    """1 - Pearson correlation between two feature vectors, in [0, 2].

    ``f_ref`` is treated as constant; the returned gradient is
    d(loss)/d(f_opt).  Near-constant inputs on either side return loss 1
    with a zero gradient instead of dividing by ~0.
    """
    x = np.asarray(f_ref, dtype=np.float64).ravel()
    y = np.asarray(f_opt, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"feature vectors differ in length: {x.shape} vs {y.shape}")
    n = x.size
    if n < 2:
        raise ValueError("correlation needs at least 2 elements")

    cx = x - x.mean()
    cy = y - y.mean()
    sxx = float(cx @ cx)
    syy = float(cy @ cy)
    if sxx / n < VARIANCE_FLOOR or syy / n < VARIANCE_FLOOR:
        return 1.0, np.zeros_like(y)

    sxy = float(cx @ cy)
    denom = np.sqrt(sxx * syy)
    rho = sxy / denom
    loss = 1.0 - float(np.clip(rho, -1.0, 1.0))
    grad = -cx / denom + rho * cy / syy
    return loss, grad


def correlation_plus_rgb_loss(
    feats_ref: np.ndarray, feats_opt: np.ndarray
) -> tuple[float, np.ndarray]:
    """Density correlation plus one correlation over all color features.

    Inputs are raw feature arrays shaped (..., 4); the color term flattens
    the three color channels together.  The gradient matches the input
    shape, density part in channel 0 and color part in channels 1:4.
    """
    fr = np.asarray(feats_ref, dtype=np.float64)
    fo = np.asarray(feats_opt, dtype=np.float64)
    if fr.shape != fo.shape or fr.shape[-1] != 4:
        raise ValueError(f"expected matching (..., 4) feature arrays, got {fr.shape} and {fo.shape}")

    d_loss, d_grad = correlation_loss(fr[..., 0], fo[..., 0])
    c_loss, c_grad = correlation_loss(fr[..., 1:], fo[..., 1:])

    grad = np.zeros_like(fo)
    grad[..., 0] = d_grad.reshape(fo[..., 0].shape)
    grad[..., 1:] = c_grad.reshape(fo[..., 1:].shape)
    return d_loss + c_loss, grad


def volumetric_lp_loss(f_ref: np.ndarray, f_opt: np.ndarray, p: int) -> tuple[float, np.ndarray]:
    """Mean absolute (p=1) or mean squared (p=2) density-feature distance."""
    x = np.asarray(f_ref, dtype=np.float64)
    y = np.asarray(f_opt, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    diff = y - x
    n = diff.size
    if p == 1:
        return float(np.abs(diff).mean()), np.sign(diff) / n
    if p == 2:
        return float((diff * diff).mean()), 2.0 * diff / n
    raise ValueError(f"p must be 1 or 2, got {p}")


def image_loss(rendered: np.ndarray, target: np.ndarray, p: int = 1) -> tuple[float, np.ndarray]:
    """Mean L1 or L2 error over all pixel channels, with per-pixel gradient."""
    r = np.asarray(rendered, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if r.shape != t.shape:
        raise ValueError(f"image shape mismatch: {r.shape} vs {t.shape}")
    diff = r - t
    n = diff.size
    if p == 1:
        return float(np.abs(diff).mean()), np.sign(diff) / n
    if p == 2:
        return float((diff * diff).mean()), 2.0 * diff / n
    raise ValueError(f"p must be 1 or 2, got {p}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]."""
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return -10.0 * np.log10(mse)


@dataclass
class AdamState:
    """Bias-corrected Adam state for one flat parameter array."""

    shape: tuple
    lr: float = 0.03
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.m = np.zeros(self.shape, dtype=np.float64)
        self.v = np.zeros(self.shape, dtype=np.float64)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One in-place Adam update; returns ``params`` for convenience."""
    if params.shape != state.m.shape or grads.shape != state.m.shape:
        raise ValueError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}"
        )
    g = np.asarray(grads, dtype=np.float64)
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    params -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(params.dtype, copy=False)
    return params

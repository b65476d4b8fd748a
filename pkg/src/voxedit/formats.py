"""On-disk formats: VOXE grids, VOXM masks, PFM float images, 8-bit PNG.

VOXE (little-endian): magic ``VOXE``, u32 version=1, u32 n, u32 channels
(4 for scene grids, 2 for attention grids: density then attention), six f32
bounds (min xyz, max xyz), then n^3 * channels f32 payload with x fastest:
flat index ``((z*n + y)*n + x) * channels + c``.

VOXM: magic ``VOXM``, u32 version=1, u32 n, then n^3 bytes of 0/1 in the
same voxel order.

PFM: text header ``PF`` (3-channel) or ``Pf`` (single channel), width and
height, scale -1.0 (little-endian), then float32 rows bottom-up.  Used for
gradient and attention-map exchange where bit-exactness matters.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .grids import AttentionGrid, FeatureGrid
from .segmentation import VoxelMask

VOXE_MAGIC = b"VOXE"
VOXM_MAGIC = b"VOXM"
VOXE_VERSION = 1
VOXM_VERSION = 1


def save_grid(path, grid: FeatureGrid | AttentionGrid) -> None:
    path = Path(path)
    n = grid.resolution
    ch = grid.channels
    bounds = np.asarray(grid.bounds, dtype="<f4")
    with open(path, "wb") as f:
        f.write(VOXE_MAGIC)
        f.write(struct.pack("<III", VOXE_VERSION, n, ch))
        f.write(bounds.tobytes())
        f.write(np.ascontiguousarray(grid.features, dtype="<f4").tobytes())


def load_grid(path) -> FeatureGrid | AttentionGrid:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != VOXE_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {VOXE_MAGIC!r}")
        version, n, ch = struct.unpack("<III", f.read(12))
        if version != VOXE_VERSION:
            raise ValueError(f"{path}: unsupported VOXE version {version}")
        bounds = np.frombuffer(f.read(24), dtype="<f4").reshape(2, 3).copy()
        expected = n * n * n * ch * 4
        raw = f.read(expected)
        if len(raw) != expected:
            raise ValueError(f"{path}: truncated payload ({len(raw)} of {expected} bytes)")
        feats = np.frombuffer(raw, dtype="<f4").reshape(n, n, n, ch).copy()
    if ch == 4:
        return FeatureGrid(resolution=n, bounds=bounds, features=feats)
    if ch == 2:
        return AttentionGrid(resolution=n, bounds=bounds, features=feats)
    raise ValueError(f"{path}: unsupported channel count {ch}")


def save_mask(path, mask: VoxelMask) -> None:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(VOXM_MAGIC)
        f.write(struct.pack("<II", VOXM_VERSION, mask.resolution))
        f.write(np.ascontiguousarray(mask.bits, dtype=np.uint8).tobytes())


def load_mask(path) -> VoxelMask:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != VOXM_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {VOXM_MAGIC!r}")
        version, n = struct.unpack("<II", f.read(8))
        if version != VOXM_VERSION:
            raise ValueError(f"{path}: unsupported VOXM version {version}")
        raw = f.read(n * n * n)
        if len(raw) != n * n * n:
            raise ValueError(f"{path}: truncated payload ({len(raw)} of {n * n * n} bytes)")
        bits = np.frombuffer(raw, dtype=np.uint8)
    return VoxelMask(resolution=n, bits=bits.reshape(n, n, n).copy())


def write_pfm(path, image: np.ndarray) -> None:
    """Write a float32 PFM, single channel (H, W) or color (H, W, 3)."""
    image = np.asarray(image, dtype="<f4")
    if image.ndim == 2:
        header = b"Pf"
        h, w = image.shape
    elif image.ndim == 3 and image.shape[2] == 3:
        header = b"PF"
        h, w = image.shape[:2]
    else:
        raise ValueError(f"PFM needs (H, W) or (H, W, 3), got {image.shape}")
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(image[::-1]).tobytes())  # rows bottom-up


def read_pfm(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise ValueError(f"{path}: bad PFM header {header!r}")
        w, h = (int(tok) for tok in f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        expected = w * h * channels * 4
        raw = f.read(expected)
        if len(raw) != expected:
            raise ValueError(f"{path}: truncated payload ({len(raw)} of {expected} bytes)")
        data = np.frombuffer(raw, dtype=dtype)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return data.reshape(shape)[::-1].astype(np.float32)


def save_png(path, image: np.ndarray) -> None:
    """Quantize a float image in [0, 1] to 8-bit (value = round(255 * linear))."""
    arr = np.asarray(image, dtype=np.float64)
    u8 = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    mode = "L" if u8.ndim == 2 else "RGB"
    Image.fromarray(u8, mode=mode).save(Path(path))


def load_png(path, background: tuple[float, float, float] | None = None) -> np.ndarray:
    """Load a PNG as float RGB in [0, 1]; RGBA composites over ``background``."""
    img = Image.open(Path(path))
    if img.mode == "RGBA":
        arr = np.asarray(img, dtype=np.float64) / 255.0
        bg = np.asarray(background if background is not None else (1.0, 1.0, 1.0))
        return arr[..., :3] * arr[..., 3:4] + bg * (1.0 - arr[..., 3:4])
    arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return arr

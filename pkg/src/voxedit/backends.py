"""Guidance backends: sources of per-pixel edit gradients and attention maps.

The editing loop only ever sees this interface, so the same engine runs
against an analytic mock (tests and demos), pre-recorded gradient files
(bit-reproducible replays), or a live HTTP guidance service.

Wire format for the HTTP backend: JSON bodies carrying request metadata
plus base64-encoded little-endian float32 payloads, row-major.  Responses
mirror the request dimensions.
"""

from __future__ import annotations

import base64
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from .formats import read_pfm, write_pfm

BACKEND_URL_ENV = "VOXEDIT_BACKEND_URL"


class BackendError(RuntimeError):
    """A guidance backend failed; carries the iteration it failed on."""

    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
        self.iteration = iteration


@runtime_checkable
class GuidanceBackend(Protocol):
    def sds_gradient(
        self, image: np.ndarray, prompt: str, t: float, seed: int
    ) -> np.ndarray:
        """Per-pixel dLoss/dRGB for a rendered image, shaped like the image."""
        ...

    def attention_map(
        self, image: np.ndarray, prompt: str, token: str, role: str, t: float, pose=None
    ) -> np.ndarray:
        """Per-pixel probability map in [0, 1], shaped (H, W)."""
        ...


def encode_f32(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def decode_f32(data: str, shape: tuple[int, ...]) -> np.ndarray:
    raw = base64.b64decode(data)
    arr = np.frombuffer(raw, dtype="<f4")
    if arr.size != int(np.prod(shape)):
        raise ValueError(f"payload has {arr.size} floats, expected shape {shape}")
    return arr.reshape(shape).astype(np.float64)


@dataclass
class GuidanceRequest:
    """One guidance call as it crosses the wire."""

    width: int
    height: int
    channels: int
    prompt: str
    t: float
    seed: int = 0
    guidance_scale: float = 7.5
    token: str = ""
    role: str = ""
    image_b64: str = ""
    pose: dict | None = None

    def to_json(self) -> str:
        body = {k: v for k, v in self.__dict__.items() if v not in ("", None)}
        body["width"], body["height"], body["channels"] = self.width, self.height, self.channels
        return json.dumps(body)


@dataclass
class GuidanceResponse:
    width: int
    height: int
    channels: int
    payload_b64: str

    def array(self) -> np.ndarray:
        shape = (self.height, self.width) if self.channels == 1 else (
            self.height,
            self.width,
            self.channels,
        )
        return decode_f32(self.payload_b64, shape)


class MockTargetBackend:
    """Analytic stand-in: gradients pull renders toward a fixed target image.

    ``sds_gradient`` is the mean-squared-error gradient against the target,
    so the editing loop becomes a self-contained optimization whose
    convergence is directly measurable.  Attention maps highlight where the
    render still differs from the target (edit role) or already agrees
    (object role).
    """

    def __init__(self, target: np.ndarray):
        self.target = np.asarray(target, dtype=np.float64)
        if self.target.ndim != 3 or self.target.shape[2] != 3:
            raise ValueError(f"target must be (H, W, 3), got {self.target.shape}")

    def sds_gradient(self, image, prompt, t, seed):
        image = np.asarray(image, dtype=np.float64)
        if image.shape != self.target.shape:
            raise BackendError(
                f"image shape {image.shape} != target shape {self.target.shape}"
            )
        return 2.0 * (image - self.target) / image.size

    def attention_map(self, image, prompt, token, role, t, pose=None):
        image = np.asarray(image, dtype=np.float64)
        diff = np.abs(image - self.target).mean(axis=-1)
        peak = diff.max()
        heat = diff / peak if peak > 0 else np.zeros_like(diff)
        return heat if role == "edit" else 1.0 - heat


class ReplayBackend:
    """Replays per-iteration gradient images from ``iter_%06d.grad.pfm`` files.

    Stateful: the k-th call returns the k-th recorded gradient, which is
    exactly how the recordings were laid down.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise BackendError(f"replay directory {self.directory} does not exist")
        self.calls = 0

    def sds_gradient(self, image, prompt, t, seed):
        path = self.directory / f"iter_{self.calls:06d}.grad.pfm"
        if not path.exists():
            raise BackendError(f"missing replay file {path}", iteration=self.calls)
        grad = read_pfm(path).astype(np.float64)
        self.calls += 1
        image = np.asarray(image)
        if grad.shape != image.shape:
            raise BackendError(
                f"replay gradient shape {grad.shape} != image shape {image.shape}",
                iteration=self.calls - 1,
            )
        return grad

    def attention_map(self, image, prompt, token, role, t, pose=None):
        raise BackendError(
            "replay backend serves sds gradients only; use recorded map files for attention"
        )


class RecordingBackend:
    """Wraps a backend and persists every gradient in the replay layout.

    Returns the float32-quantized values it wrote, so a recorded run and its
    replay apply bit-identical gradients.
    """

    def __init__(self, inner: GuidanceBackend, directory):
        self.inner = inner
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.calls = 0

    def sds_gradient(self, image, prompt, t, seed):
        grad = np.asarray(
            self.inner.sds_gradient(image, prompt, t, seed), dtype=np.float32
        )
        write_pfm(self.directory / f"iter_{self.calls:06d}.grad.pfm", grad)
        self.calls += 1
        return grad.astype(np.float64)

    def attention_map(self, image, prompt, token, role, t, pose=None):
        return self.inner.attention_map(image, prompt, token, role, t, pose=pose)


class HttpBackend:
    """Client for a guidance service speaking the JSON + base64-f32 protocol."""

    def __init__(self, url: str, guidance_scale: float = 7.5, timeout: float = 300.0):
        self.url = url.rstrip("/")
        self.guidance_scale = guidance_scale
        self.timeout = timeout
        import requests

        self._session = requests.Session()

    def _post(self, endpoint: str, body: dict) -> dict:
        resp = self._session.post(
            f"{self.url}{endpoint}", json=body, timeout=self.timeout
        )
        if resp.status_code != 200:
            try:
                detail = resp.json().get("error", resp.text)
            except Exception:
                detail = resp.text
            raise BackendError(f"{endpoint} returned {resp.status_code}: {detail}")
        return resp.json()

    def sds_gradient(self, image, prompt, t, seed):
        image = np.asarray(image, dtype=np.float64)
        h, w, _ = image.shape
        body = {
            "width": w,
            "height": h,
            "channels": 3,
            "prompt": prompt,
            "t": float(t),
            "seed": int(seed),
            "guidance_scale": self.guidance_scale,
            "image_b64": encode_f32(image),
        }
        out = self._post("/sds_grad", body)
        return decode_f32(out["grad_b64"], (h, w, 3))

    def attention_map(self, image, prompt, token, role, t, pose=None):
        image = np.asarray(image, dtype=np.float64)
        h, w, _ = image.shape
        body = {
            "width": w,
            "height": h,
            "channels": 3,
            "prompt": prompt,
            "token": token,
            "role": role,
            "t": float(t),
            "image_b64": encode_f32(image),
        }
        if pose is not None:
            body["pose"] = {
                "transform_matrix": np.asarray(pose.camera_to_world).tolist(),
                "fov_x": float(pose.fov_x),
            }
        out = self._post("/attention_map", body)
        return decode_f32(out["map_b64"], (h, w))


def make_backend(spec: str, target_loader=None) -> GuidanceBackend:
    """Build a backend from a descriptor string.

    ``mock:target=<image path>`` pulls renders toward an image file,
    ``replay:<dir>`` replays recorded gradients, ``http:<url>`` talks to a
    guidance service.  The ``VOXEDIT_BACKEND_URL`` environment variable
    overrides the URL of http backends.
    """
    kind, _, rest = spec.partition(":")
    if kind == "mock":
        if not rest.startswith("target="):
            raise ValueError(f"mock backend needs 'mock:target=<image>', got {spec!r}")
        from .formats import load_png

        loader = target_loader or load_png
        return MockTargetBackend(loader(rest[len("target="):]))
    if kind == "replay":
        return ReplayBackend(rest)
    if kind == "http":
        url = os.environ.get(BACKEND_URL_ENV, rest)
        return HttpBackend(url)
    raise ValueError(f"unknown backend kind {kind!r} in {spec!r}")

"""Layered fronto-parallel stereo scenes with exact ground-truth disparity."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np
import torch
from PIL import Image
from scipy.ndimage import gaussian_filter

from .deploy import StereoScene
from .errors import SceneSpecError
from .geometry import CameraRig

TextureKind = Literal["noise", "stripes", "photo"]


@dataclass(frozen=True)
class PlaneLayer:
    """A textured plane at ``depth_m``; ``box`` = (x0, y0, w, h) in left-view pixels, None for full frame."""

    depth_m: float
    box: Optional[Tuple[int, int, int, int]] = None


@dataclass(frozen=True)
class SyntheticSceneSpec:
    height: int = 160
    width: int = 256
    focal_px: float = 720.0
    baseline_m: float = 0.54
    texture: TextureKind = "noise"
    planes: Tuple[PlaneLayer, ...] = (PlaneLayer(20.0),)
    d_max: int = 96
    photo_path: Optional[str] = None
    blur_sigma: float = 1.0

    def rig(self) -> CameraRig:
        return CameraRig.from_intrinsics(self.focal_px, self.baseline_m, (self.height, self.width))

    def validate(self) -> None:
        if self.height <= 0 or self.width <= 0:
            raise SceneSpecError("image size must be positive")
        if not self.planes:
            raise SceneSpecError("a scene needs at least one plane")
        depths = [p.depth_m for p in self.planes]
        if any(d <= 0 for d in depths):
            raise SceneSpecError("plane depths must be positive")
        if len(set(depths)) != len(depths):
            raise SceneSpecError("plane depths must be distinct")
        worst = self.focal_px * self.baseline_m / min(depths)
        if worst > self.d_max:
            raise SceneSpecError(f"nearest plane implies disparity {worst:.2f} px > d_max {self.d_max}")
        if self.texture == "photo" and not (self.photo_path and Path(self.photo_path).exists()):
            raise SceneSpecError(f"photo texture needs an existing photo_path, got {self.photo_path!r}")


def _noise(rng, shape, sigma):
    field_ = gaussian_filter(rng.standard_normal(shape), sigma=(0, sigma, sigma))
    field_ = (field_ - field_.mean()) / (field_.std() + 1e-12)
    return np.clip(0.5 + 0.18 * field_, 0.0, 1.0)


def _stripes(rng, shape, sigma):
    _, h, w = shape
    period = rng.uniform(8.0, 24.0)
    phase = rng.uniform(0, 2 * np.pi)
    xs = np.arange(w)[None, None, :]
    base = 0.5 + 0.3 * np.sin(2 * np.pi * xs / period + phase)
    base = np.broadcast_to(base, shape) * rng.uniform(0.7, 1.0, size=(3, 1, 1))
    return np.clip(base + 0.3 * (_noise(rng, shape, sigma) - 0.5), 0.0, 1.0)


def _photo(path, shape, rng):
    _, h, w = shape
    img = Image.open(path).convert("RGB")
    scale = max(h / img.height, w / img.width)
    img = img.resize((max(w, int(np.ceil(img.width * scale))), max(h, int(np.ceil(img.height * scale)))),
                     Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float64).transpose(2, 0, 1) / 255.0
    y0 = int(rng.integers(0, arr.shape[1] - h + 1))
    x0 = int(rng.integers(0, arr.shape[2] - w + 1))
    return arr[:, y0:y0 + h, x0:x0 + w]


def _layer_texture(spec: SyntheticSceneSpec, rng, shape):
    if spec.texture == "noise":
        tex = _noise(rng, shape, spec.blur_sigma)
    elif spec.texture == "stripes":
        tex = _stripes(rng, shape, spec.blur_sigma)
    elif spec.texture == "photo":
        tex = _photo(spec.photo_path, shape, rng)
    else:
        raise SceneSpecError(f"unknown texture kind {spec.texture!r}")
    tint = rng.uniform(0.6, 1.0, size=(3, 1, 1))
    return np.clip(tex * tint + rng.uniform(0.0, 0.2), 0.0, 1.0)


def _sample_rows(tex, xs):
    """Linear interpolation of ``tex`` (3, H, Wt) along x at float positions ``xs``."""
    x0 = np.floor(xs).astype(int)
    f = xs - x0
    x0 = np.clip(x0, 0, tex.shape[2] - 1)
    x1 = np.clip(x0 + 1, 0, tex.shape[2] - 1)
    return tex[:, :, x0] * (1 - f) + tex[:, :, x1] * f


def generate_synthetic_scene(spec: SyntheticSceneSpec, seed: int, scene_id: Optional[str] = None) -> StereoScene:
    """Render left/right views of the layered planes, far to near.

    Each plane is shifted by its exact (fractional) disparity f*B/z in the
    right view, so ``left(x) == right(x - d)`` holds on every visible plane.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    h, w = spec.height, spec.width
    pad = int(np.ceil(spec.d_max)) + 2
    left = np.zeros((3, h, w))
    right = np.zeros((3, h, w))
    gt = np.zeros((h, w))

    xs = np.arange(w, dtype=np.float64)
    for layer in sorted(spec.planes, key=lambda p: -p.depth_m):
        d = spec.focal_px * spec.baseline_m / layer.depth_m
        tex = _layer_texture(spec, rng, (3, h, w + 2 * pad))
        if layer.box is None:
            x0, y0, bw, bh = -pad, 0, w + 2 * pad, h
        else:
            x0, y0, bw, bh = layer.box
        rows = slice(max(y0, 0), min(y0 + bh, h))

        in_left = (xs >= x0) & (xs < x0 + bw)
        left_vals = _sample_rows(tex, xs + pad)
        left[:, rows][:, :, in_left] = left_vals[:, rows][:, :, in_left]
        gt[rows, :][:, in_left] = d

        src = xs + d
        in_right = (src >= x0) & (src < x0 + bw)
        right_vals = _sample_rows(tex, src + pad)
        right[:, rows][:, :, in_right] = right_vals[:, rows][:, :, in_right]

    to_t = lambda a: torch.tensor(a, dtype=torch.float32)
    return StereoScene(to_t(left), to_t(right), to_t(gt), spec.rig(), scene_id or f"synthetic-{seed}")


def shifted_pair(height: int, width: int, shift: int, seed: int = 0, sigma: float = 1.0):
    """Textured pair whose right view is the left view moved ``shift`` px left."""
    rng = np.random.default_rng(seed)
    tex = _noise(rng, (3, height, width + shift), sigma)
    left = tex[:, :, :width]
    right = tex[:, :, shift:]
    return torch.tensor(left.copy(), dtype=torch.float32), torch.tensor(right.copy(), dtype=torch.float32)

"""Warping an assembled patch into both views of a stereo scene."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
import torch
from shapely.geometry import Polygon, box

from .errors import DegeneratePlacementError, DeploymentError
from .geometry import CameraRig, PatchPlacement, PixelQuad, placement_quads
from .patch import AssembledPatch

log = logging.getLogger(__name__)

MAX_CLIPPED_FRACTION = 0.2
# slivers below this are resampling noise, not worth a warning
CLIP_WARN_FRACTION = 1e-3
_SNAP = 1e-9


@dataclass(frozen=True)
class StereoScene:
    """Rectified image pair, channel-first ``(3, H, W)`` tensors in [0, 1]."""

    left: torch.Tensor
    right: torch.Tensor
    gt_disparity: Optional[torch.Tensor] = None
    rig: Optional[CameraRig] = None
    id: str = "scene"

    def __post_init__(self):
        if self.left.shape != self.right.shape or self.left.ndim != 3 or self.left.shape[0] != 3:
            raise DeploymentError(
                f"left/right must share a (3, H, W) shape, got {tuple(self.left.shape)} and {tuple(self.right.shape)}")
        if self.gt_disparity is not None and tuple(self.gt_disparity.shape) != tuple(self.left.shape[1:]):
            raise DeploymentError("gt_disparity must match the image size")

    @property
    def size(self) -> Tuple[int, int]:
        return int(self.left.shape[1]), int(self.left.shape[2])

    def with_images(self, left: torch.Tensor, right: torch.Tensor) -> "StereoScene":
        return replace(self, left=left, right=right)


@dataclass(frozen=True)
class Deployment:
    """Where a patch lands in each view of one scene.

    ``patch_gt_disparity`` is the constant ground-truth disparity of the patch
    region, f*B/depth of the placement.
    """

    quad_left: PixelQuad
    quad_right: PixelQuad
    region_mask_left: torch.Tensor
    patch_gt_disparity: float
    clipped_fraction: float = 0.0

    def translated(self, dx: float, dy: float, image_size: Tuple[int, int]) -> "Deployment":
        ql = self.quad_left.translated(dx, dy)
        qr = self.quad_right.translated(dx, dy)
        return Deployment(ql, qr, quad_mask(ql, image_size), self.patch_gt_disparity, self.clipped_fraction)


# -- homographies ------------------------------------------------------------

def homography_from_points(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Direct linear solve for the 3x3 homography taking 4 ``src`` points to ``dst``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i], b[2 * i + 1] = u, v
    try:
        h = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise DegeneratePlacementError("quad does not define a homography") from exc
    if not np.all(np.isfinite(h)) or np.linalg.cond(a) > 1e12:
        raise DegeneratePlacementError("quad does not define a homography")
    return np.append(h, 1.0).reshape(3, 3)


def homography_from_quad(source_size: Tuple[int, int], quad: PixelQuad) -> np.ndarray:
    """Homography from patch pixel coordinates to image pixel coordinates.

    The patch's outer corners (half a pixel beyond its corner pixel centers)
    map onto the quad corners.
    """
    h_p, w_p = source_size
    src = np.array([[-0.5, -0.5], [w_p - 0.5, -0.5], [-0.5, h_p - 0.5], [w_p - 0.5, h_p - 0.5]])
    return homography_from_points(src, quad.corners)


def apply_homography(hmat: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    ph = np.hstack([pts, np.ones((len(pts), 1))]) @ hmat.T
    return ph[:, :2] / ph[:, 2:3]


_UNIT = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])


def _unit_homography(quad: PixelQuad) -> np.ndarray:
    return homography_from_points(_UNIT, quad.corners)


def _snap(c: torch.Tensor) -> torch.Tensor:
    r = torch.round(c)
    return torch.where((c - r).abs() < _SNAP, r, c)


def bilinear_sample(image: torch.Tensor, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Sample ``(C, H, W)`` at pixel-center coordinates, zero outside the image."""
    _, h, w = image.shape
    x, y = _snap(x), _snap(y)
    x0, y0 = torch.floor(x), torch.floor(y)
    fx, fy = (x - x0).to(image.dtype), (y - y0).to(image.dtype)
    x0, y0 = x0.long(), y0.long()
    out = 0
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            xi, yi = x0 + dx, y0 + dy
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = image[:, yi.clamp(0, h - 1), xi.clamp(0, w - 1)]
            out = out + vals * (wx * wy * valid.to(image.dtype))
    return out


# -- masks and clipping ------------------------------------------------------

def _pixel_grid(x0: int, y0: int, x1: int, y1: int):
    ys, xs = torch.meshgrid(torch.arange(y0, y1, dtype=torch.float64),
                            torch.arange(x0, x1, dtype=torch.float64), indexing="ij")
    return xs, ys


def _to_unit(hinv: np.ndarray, xs: torch.Tensor, ys: torch.Tensor):
    hi = torch.tensor(hinv, dtype=torch.float64)
    den = hi[2, 0] * xs + hi[2, 1] * ys + hi[2, 2]
    s = (hi[0, 0] * xs + hi[0, 1] * ys + hi[0, 2]) / den
    t = (hi[1, 0] * xs + hi[1, 1] * ys + hi[1, 2]) / den
    return s, t


def _bbox(quad: PixelQuad, image_size: Tuple[int, int], pad: int = 1):
    h, w = image_size
    x_min, y_min, x_max, y_max = quad.bounds()
    x0 = max(int(np.floor(x_min)) - pad, 0)
    y0 = max(int(np.floor(y_min)) - pad, 0)
    x1 = min(int(np.ceil(x_max)) + pad + 1, w)
    y1 = min(int(np.ceil(y_max)) + pad + 1, h)
    return x0, y0, x1, y1


def _inside_block(quad: PixelQuad, image_size: Tuple[int, int]):
    x0, y0, x1, y1 = _bbox(quad, image_size)
    if x1 <= x0 or y1 <= y0:
        return (x0, y0, x1, y1), None, None, None
    xs, ys = _pixel_grid(x0, y0, x1, y1)
    s, t = _to_unit(np.linalg.inv(_unit_homography(quad)), xs, ys)
    s, t = _snap(s), _snap(t)
    inside = (s >= 0) & (s <= 1) & (t >= 0) & (t <= 1)
    return (x0, y0, x1, y1), inside, s, t


def quad_mask(quad: PixelQuad, image_size: Tuple[int, int]) -> torch.Tensor:
    """Boolean ``(H, W)`` mask of pixels whose centers fall inside ``quad``."""
    mask = torch.zeros(image_size, dtype=torch.bool)
    (x0, y0, x1, y1), inside, _, _ = _inside_block(quad, image_size)
    if inside is not None:
        mask[y0:y1, x0:x1] = inside
    return mask


def clipped_fraction(quad: PixelQuad, image_size: Tuple[int, int]) -> float:
    h, w = image_size
    poly = Polygon(quad.polygon())
    frame = box(-0.5, -0.5, w - 0.5, h - 0.5)
    return float(1.0 - poly.intersection(frame).area / poly.area)


def plan_deployment(rig: CameraRig, placement: PatchPlacement,
                    image_size: Optional[Tuple[int, int]] = None) -> Deployment:
    """Project a physical placement into both views and check it fits the frame."""
    image_size = tuple(image_size or rig.image_size)
    ql, qr = placement_quads(rig, placement)
    clip = max(clipped_fraction(ql, image_size), clipped_fraction(qr, image_size))
    if clip >= 1.0 - 1e-12:
        raise DeploymentError("patch quad lies entirely outside the image")
    if clip > MAX_CLIPPED_FRACTION:
        raise DeploymentError(f"{clip:.0%} of the patch quad falls outside the image")
    if clip > CLIP_WARN_FRACTION:
        log.warning("patch quad is clipped by the image border (%.2f%% outside)", 100 * clip)
    mask = quad_mask(ql, image_size)
    if not mask.any():
        raise DeploymentError("patch quad covers no pixel centers")
    c = rig.disparity_at_depth(placement.depth_m)
    return Deployment(ql, qr, mask, c, clip)


# -- compositing -------------------------------------------------------------

def warp_into(image: torch.Tensor, patch_image: torch.Tensor, quad: PixelQuad) -> torch.Tensor:
    """Replace the pixels of ``image`` inside ``quad`` with the warped patch."""
    _, h_p, w_p = patch_image.shape
    (x0, y0, x1, y1), inside, s, t = _inside_block(quad, tuple(image.shape[1:]))
    if inside is None or not inside.any():
        raise DeploymentError("patch quad lies entirely outside the image")
    u = s * w_p - 0.5
    v = t * h_p - 0.5
    warped = bilinear_sample(patch_image, u, v)
    out = image.clone()
    block = out[:, y0:y1, x0:x1]
    out[:, y0:y1, x0:x1] = torch.where(inside.unsqueeze(0), warped.to(image.dtype), block)
    return out


def composite(scene: StereoScene, patch: AssembledPatch | torch.Tensor, deployment: Deployment) -> StereoScene:
    """Perturbed scene with the patch deployed in both views (differentiable in the patch)."""
    img = patch.image if isinstance(patch, AssembledPatch) else patch
    img = img.to(scene.left.dtype)
    left = warp_into(scene.left, img, deployment.quad_left)
    right = warp_into(scene.right, img, deployment.quad_right)
    return scene.with_images(left, right)


def extract_region(image: torch.Tensor, quad: PixelQuad, size: Tuple[int, int]) -> torch.Tensor:
    """Inverse warp of the quad interior back to an ``h_p x w_p`` patch-space image."""
    h_p, w_p = size
    hmat = torch.tensor(_unit_homography(quad), dtype=torch.float64)
    jj, ii = _pixel_grid(0, 0, w_p, h_p)
    s = (jj + 0.5) / w_p
    t = (ii + 0.5) / h_p
    den = hmat[2, 0] * s + hmat[2, 1] * t + hmat[2, 2]
    x = (hmat[0, 0] * s + hmat[0, 1] * t + hmat[0, 2]) / den
    y = (hmat[1, 0] * s + hmat[1, 1] * t + hmat[1, 2]) / den
    return bilinear_sample(image, x, y)

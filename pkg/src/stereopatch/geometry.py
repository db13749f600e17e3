"""Rectified stereo rig geometry and physical patch placement.

Coordinates follow the usual camera convention: X right, Y down, Z forward,
in meters. Pixel coordinates are (u, v) with integer values at pixel centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence, Tuple

import numpy as np

from .errors import DegeneratePlacementError, DomainError, PatchTooSmallError, PlacementError

Side = Literal["left", "right"]

DEGENERATE_AREA_PX2 = 64.0
MIN_PATCH_PX = 8
# cos of the angle between the patch normal and the line of sight below
# which the patch counts as edge-on
_EDGE_ON_COS = 1e-3


def _as_matrix(m, shape) -> np.ndarray:
    arr = np.array(m, dtype=np.float64)
    if arr.shape != shape:
        raise DomainError(f"expected matrix of shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CameraRig:
    """Calibration of a rectified stereo pair.

    ``rect_rotation`` is stored as a 4x4 homogeneous matrix so that
    ``proj @ rect_rotation @ X`` maps a homogeneous point straight to pixels.
    ``image_size`` is (height, width).
    """

    proj_left: np.ndarray
    proj_right: np.ndarray
    rect_rotation: np.ndarray
    focal_px: float
    baseline_m: float
    image_size: Tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "proj_left", _as_matrix(self.proj_left, (3, 4)))
        object.__setattr__(self, "proj_right", _as_matrix(self.proj_right, (3, 4)))
        rot = np.array(self.rect_rotation, dtype=np.float64)
        if rot.shape == (3, 3):
            rot = embed_rotation(rot)
        object.__setattr__(self, "rect_rotation", _as_matrix(rot, (4, 4)))
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))

        for name, p in (("proj_left", self.proj_left), ("proj_right", self.proj_right)):
            if not np.allclose(p[2, :3], (0.0, 0.0, 1.0), atol=1e-9, rtol=0):
                raise DomainError(f"{name} is not in rectified pinhole form (third row must be 0 0 1)")
        if not self.focal_px > 0:
            raise DomainError("focal_px must be positive")
        if abs(self.focal_px - self.proj_left[0, 0]) > 1e-6:
            raise DomainError("focal_px does not match proj_left[0][0]")
        if not self.baseline_m > 0:
            raise DomainError("baseline_m must be positive")
        if min(self.image_size) <= 0:
            raise DomainError("image_size must be positive")

    @classmethod
    def from_intrinsics(
        cls,
        focal_px: float,
        baseline_m: float,
        image_size: Tuple[int, int],
        principal_point: Tuple[float, float] | None = None,
    ) -> "CameraRig":
        """Build an ideal rectified rig. ``principal_point`` defaults to the image center."""
        h, w = image_size
        cx, cy = principal_point if principal_point is not None else ((w - 1) / 2.0, (h - 1) / 2.0)
        left = np.array([[focal_px, 0, cx, 0], [0, focal_px, cy, 0], [0, 0, 1, 0]], dtype=np.float64)
        right = left.copy()
        right[0, 3] = -focal_px * baseline_m
        return cls(left, right, np.eye(4), focal_px, baseline_m, (h, w))

    @property
    def principal_point(self) -> Tuple[float, float]:
        return float(self.proj_left[0, 2]), float(self.proj_left[1, 2])

    def disparity_at_depth(self, depth_m: float) -> float:
        return self.focal_px * self.baseline_m / depth_m

    def with_image_size(self, image_size: Tuple[int, int]) -> "CameraRig":
        return CameraRig(self.proj_left, self.proj_right, self.rect_rotation,
                         self.focal_px, self.baseline_m, image_size)


def embed_rotation(rot3: np.ndarray) -> np.ndarray:
    out = np.eye(4)
    out[:3, :3] = np.asarray(rot3, dtype=np.float64)
    return out


@dataclass(frozen=True)
class PatchPlacement:
    """Physical patch size and pose, relative to the reference camera.

    ``shift_m`` offsets the patch center from the principal axis. Rotations
    are applied about the patch center, X axis first, then Y axis.
    """

    width_m: float = 1.26
    height_m: float = 0.891
    depth_m: float = 5.0
    shift_m: Tuple[float, float] = (0.0, 0.0)
    rot_x_deg: float = 0.0
    rot_y_deg: float = 0.0

    def __post_init__(self):
        if not (self.width_m > 0 and self.height_m > 0):
            raise PlacementError("patch size must be positive")
        if not self.depth_m > 0:
            raise PlacementError("patch depth must be positive")
        object.__setattr__(self, "shift_m", (float(self.shift_m[0]), float(self.shift_m[1])))

    def scaled(self, factor: float) -> "PatchPlacement":
        return PatchPlacement(self.width_m * factor, self.height_m * factor, self.depth_m,
                              self.shift_m, self.rot_x_deg, self.rot_y_deg)


@dataclass(frozen=True)
class PixelQuad:
    """Four pixel corners ordered top-left, top-right, bottom-left, bottom-right."""

    corners: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.corners, dtype=np.float64).reshape(4, 2)
        c.setflags(write=False)
        object.__setattr__(self, "corners", c)

    @classmethod
    def from_box(cls, x0: float, y0: float, width: float, height: float) -> "PixelQuad":
        """Quad covering the pixel block whose top-left pixel center is (x0, y0).

        The corners sit on the outer pixel edges, half a pixel outside the
        first and last pixel centers.
        """
        left, top = x0 - 0.5, y0 - 0.5
        right, bottom = left + width, top + height
        return cls([[left, top], [right, top], [left, bottom], [right, bottom]])

    @property
    def top_left(self):
        return tuple(self.corners[0])

    @property
    def top_right(self):
        return tuple(self.corners[1])

    @property
    def bottom_left(self):
        return tuple(self.corners[2])

    @property
    def bottom_right(self):
        return tuple(self.corners[3])

    def polygon(self) -> np.ndarray:
        """Corners in boundary order (TL, TR, BR, BL)."""
        return self.corners[[0, 1, 3, 2]]

    @property
    def signed_area(self) -> float:
        x, y = self.polygon().T
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    def is_simple(self) -> bool:
        # a 4-gon is simple iff neither pair of opposite edges intersects
        p = self.polygon()
        return not (_segments_cross(p[0], p[1], p[2], p[3]) or _segments_cross(p[1], p[2], p[3], p[0]))

    def translated(self, dx: float, dy: float = 0.0) -> "PixelQuad":
        return PixelQuad(self.corners + np.array([dx, dy]))

    def bounds(self) -> Tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max)."""
        return (float(self.corners[:, 0].min()), float(self.corners[:, 1].min()),
                float(self.corners[:, 0].max()), float(self.corners[:, 1].max()))


def _segments_cross(a, b, c, d) -> bool:
    def orient(p, q, r):
        return np.sign((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))

    return (orient(a, b, c) * orient(a, b, d) < 0) and (orient(c, d, a) * orient(c, d, b) < 0)


def rotation_x(deg: float) -> np.ndarray:
    t = math.radians(deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def rotation_y(deg: float) -> np.ndarray:
    t = math.radians(deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def corner_points_3d(placement: PatchPlacement) -> np.ndarray:
    """Homogeneous 3D corners (4x4, rows TL, TR, BL, BR) of a placed patch."""
    hw, hh = placement.width_m / 2.0, placement.height_m / 2.0
    local = np.array([[-hw, -hh, 0.0], [hw, -hh, 0.0], [-hw, hh, 0.0], [hw, hh, 0.0]])
    center = np.array([placement.shift_m[0], placement.shift_m[1], placement.depth_m])

    if placement.rot_x_deg or placement.rot_y_deg:
        rot = rotation_y(placement.rot_y_deg) @ rotation_x(placement.rot_x_deg)
        local = local @ rot.T
        normal = rot @ np.array([0.0, 0.0, 1.0])
        if abs(float(normal @ center)) / np.linalg.norm(center) < _EDGE_ON_COS:
            raise DegeneratePlacementError(
                f"patch is edge-on to the camera (rot_x={placement.rot_x_deg}, rot_y={placement.rot_y_deg})")

    pts = local + center
    if np.any(pts[:, 2] <= 0):
        raise PlacementError("rotated patch has corners at or behind the camera plane")
    return np.hstack([pts, np.ones((4, 1))])


def project_corners(rig: CameraRig, points: np.ndarray, side: Side = "left") -> PixelQuad:
    """Project homogeneous 3D corners through ``proj_side @ rect_rotation``."""
    pts = np.asarray(points, dtype=np.float64).reshape(4, 4)
    if side == "left":
        proj = rig.proj_left
    elif side == "right":
        proj = rig.proj_right
    else:
        raise DomainError(f"side must be 'left' or 'right', got {side!r}")

    cam = pts @ rig.rect_rotation.T
    depth = cam[:, 2] / cam[:, 3]
    if np.any(depth <= 0):
        raise PlacementError("corner depth must be positive before projection")
    pix = cam @ proj.T
    quad = PixelQuad(pix[:, :2] / pix[:, 2:3])
    if quad.signed_area < DEGENERATE_AREA_PX2 or not quad.is_simple():
        raise DegeneratePlacementError(
            f"projected quad is degenerate (area {quad.signed_area:.2f} px^2)")
    return quad


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def patch_pixel_size(quad_left: PixelQuad) -> Tuple[int, int]:
    """Pixel size (h_p, w_p) of the patch from its left-view quad.

    Opposite edges of a rotated quad differ in length, so each dimension is
    the rounded mean of its two edges.
    """
    tl, tr, bl, br = quad_left.corners
    h = _round_half_up((np.linalg.norm(bl - tl) + np.linalg.norm(br - tr)) / 2.0)
    w = _round_half_up((np.linalg.norm(tr - tl) + np.linalg.norm(br - bl)) / 2.0)
    if h < MIN_PATCH_PX or w < MIN_PATCH_PX:
        raise PatchTooSmallError(f"patch covers only {h}x{w} px (minimum {MIN_PATCH_PX}x{MIN_PATCH_PX})")
    return h, w


def depth_from_disparity(d, rig: CameraRig):
    """Depth in meters; zero disparity maps to ``inf``. Works on scalars and arrays."""
    arr = np.asarray(d, dtype=np.float64)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("disparity must be non-negative")
    fb = rig.focal_px * rig.baseline_m
    with np.errstate(divide="ignore"):
        z = np.where(arr > 0, fb / np.where(arr > 0, arr, 1.0), np.inf)
    return float(z) if z.ndim == 0 else z


def placement_quads(rig: CameraRig, placement: PatchPlacement) -> Tuple[PixelQuad, PixelQuad]:
    pts = corner_points_3d(placement)
    return project_corners(rig, pts, "left"), project_corners(rig, pts, "right")


def mirror_quad_x(quad: PixelQuad, cx: float) -> PixelQuad:
    """Reflect a quad about the vertical line u = cx, keeping the corner order."""
    c = quad.corners.copy()
    c[:, 0] = 2 * cx - c[:, 0]
    return PixelQuad(c[[1, 0, 3, 2]])


def quad_disparity(quad_left: PixelQuad, quad_right: PixelQuad) -> Sequence[float]:
    """Per-corner horizontal offset between the two views (left minus right)."""
    return list(quad_left.corners[:, 0] - quad_right.corners[:, 0])

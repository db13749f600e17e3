"""KITTI ``calib_cam_to_cam.txt`` parsing.

Standard KITTI rigs use camera 2 as the left view and camera 3 as the right
one; DrivingStereo-style files can be read by passing other keys.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import CalibrationParseError, DomainError
from .geometry import CameraRig

KITTI_IMAGE_SIZE = (375, 1242)


def _numbers(key: str, raw: str, lineno: int, arity: int) -> np.ndarray:
    tokens = raw.split()
    if len(tokens) != arity:
        raise CalibrationParseError(f"line {lineno}: {key} needs {arity} values, found {len(tokens)}")
    try:
        return np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError as exc:
        raise CalibrationParseError(f"line {lineno}: {key} has a non-numeric value ({exc})") from None


def parse_kitti_calibration(
    text: str,
    left_key: str = "P_rect_02",
    right_key: str = "P_rect_03",
    rect_key: str = "R_rect_00",
    image_size: Optional[Tuple[int, int]] = None,
) -> CameraRig:
    """Build a :class:`CameraRig` from KITTI key-value calibration text.

    Unrelated keys are ignored. The focal length comes from the left
    projection and the baseline from the difference of the two projections'
    translation entries.
    """
    lines: Dict[str, Tuple[int, str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if ":" not in line:
            raise CalibrationParseError(f"line {lineno}: expected 'KEY: values', got {line.strip()!r}")
        key, raw = line.split(":", 1)
        lines[key.strip()] = (lineno, raw)

    size_key = "S_rect_" + left_key.rsplit("_", 1)[-1]
    wanted = {left_key: 12, right_key: 12, rect_key: 9}
    values = {}
    for key, arity in wanted.items():
        if key not in lines:
            raise CalibrationParseError(f"missing calibration key {key}")
        lineno, raw = lines[key]
        values[key] = _numbers(key, raw, lineno, arity)

    if image_size is None:
        if size_key in lines:
            lineno, raw = lines[size_key]
            w, h = _numbers(size_key, raw, lineno, 2)
            image_size = (int(round(h)), int(round(w)))
        else:
            image_size = KITTI_IMAGE_SIZE

    p_left = values[left_key].reshape(3, 4)
    p_right = values[right_key].reshape(3, 4)
    focal = float(p_left[0, 0])
    if focal <= 0:
        raise CalibrationParseError(f"{left_key} has a non-positive focal length")
    baseline = abs(p_right[0, 3] - p_left[0, 3]) / focal
    try:
        return CameraRig(p_left, p_right, values[rect_key].reshape(3, 3), focal, baseline, image_size)
    except DomainError as exc:
        raise CalibrationParseError(f"calibration does not describe a rectified rig: {exc}") from exc


def serialize_kitti_calibration(
    rig: CameraRig,
    left_key: str = "P_rect_02",
    right_key: str = "P_rect_03",
    rect_key: str = "R_rect_00",
) -> str:
    def fmt(arr) -> str:
        return " ".join(f"{v:.12e}" for v in np.asarray(arr).ravel())

    h, w = rig.image_size
    out: List[str] = [
        f"S_rect_{left_key.rsplit('_', 1)[-1]}: {fmt([w, h])}",
        f"{rect_key}: {fmt(rig.rect_rotation[:3, :3])}",
        f"{left_key}: {fmt(rig.proj_left)}",
        f"{right_key}: {fmt(rig.proj_right)}",
    ]
    return "\n".join(out) + "\n"


def describe_rig(rig: CameraRig) -> str:
    np.set_printoptions(suppress=True, precision=6)
    h, w = rig.image_size
    return "\n".join([
        f"image_size: {h} x {w} (height x width)",
        f"focal_px:   {rig.focal_px:.6f}",
        f"baseline_m: {rig.baseline_m:.6f}",
        f"principal:  ({rig.principal_point[0]:.3f}, {rig.principal_point[1]:.3f})",
        "proj_left:", str(rig.proj_left),
        "proj_right:", str(rig.proj_right),
        "rect_rotation:", str(rig.rect_rotation[:3, :3]),
    ])

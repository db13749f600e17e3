"""Patch construction from a texture element and an interval structure.

In ``grid`` mode the patch holds ``k + 1`` element copies separated by ``k``
interval bands of width ``o`` along each axis. In ``tiled`` mode ``k``
copies are packed edge to edge. Pixels not covered by an element copy (the
interval bands plus any leftover margin) form the interval mask and carry
``interval_value``.

Tensors are channel-first: an element is ``(3, h_t, w_t)`` and a patch image
is ``(3, h_p, w_p)``, with values in [0, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np
import torch
from PIL import Image

from .errors import AssemblyError, DomainError, PatchTooSmallError

Mode = Literal["grid", "tiled"]
Axes = Literal["both", "rows", "cols"]

MIN_ELEMENT_PX = 2


@dataclass(frozen=True)
class GridSpec:
    """Repetition layout of a patch.

    ``reps`` is (k_v, k_h). In grid mode ``k`` counts interval bands (and
    ``k + 1`` elements); in tiled mode it counts elements. ``interval_axes``
    restricts interval bands to ``rows`` (horizontal bands only) or ``cols``
    (vertical bands only); used by the interval-strategy sweep.
    """

    reps: Tuple[int, int] = (4, 5)
    interval_px: int = 10
    interval_value: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    mode: Mode = "grid"
    interval_axes: Axes = "both"

    def __post_init__(self):
        reps = (int(self.reps[0]), int(self.reps[1]))
        object.__setattr__(self, "reps", reps)
        object.__setattr__(self, "interval_value", tuple(float(v) for v in self.interval_value))
        if min(reps) < 1:
            raise DomainError("reps must be at least (1, 1)")
        if self.mode == "grid":
            if self.interval_px < 1:
                raise DomainError("grid mode requires interval_px >= 1")
        elif self.mode == "tiled":
            object.__setattr__(self, "interval_px", 0)
        else:
            raise DomainError(f"unknown patch mode {self.mode!r}")
        if self.interval_axes not in ("both", "rows", "cols"):
            raise DomainError(f"unknown interval_axes {self.interval_axes!r}")
        if len(self.interval_value) != 3 or not all(0.0 <= v <= 1.0 for v in self.interval_value):
            raise DomainError("interval_value must be an RGB triple in [0, 1]")

    def axis_interval(self, axis: int) -> int:
        """Interval width along axis 0 (rows) or 1 (cols)."""
        if self.mode == "tiled":
            return 0
        if self.interval_axes == "both":
            return self.interval_px
        # horizontal bands separate vertically stacked elements
        if self.interval_axes == "rows":
            return self.interval_px if axis == 0 else 0
        return self.interval_px if axis == 1 else 0

    def to_dict(self) -> dict:
        return {"reps": list(self.reps), "interval_px": self.interval_px,
                "interval_value": list(self.interval_value), "mode": self.mode,
                "interval_axes": self.interval_axes}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(reps=tuple(d["reps"]), interval_px=d.get("interval_px", 0),
                   interval_value=tuple(d.get("interval_value", (1.0, 1.0, 1.0))),
                   mode=d.get("mode", "grid"), interval_axes=d.get("interval_axes", "both"))


def _check_element(size: int, axis_name: str) -> int:
    if size < MIN_ELEMENT_PX:
        raise PatchTooSmallError(f"texture element {axis_name} would be {size} px")
    return size


def element_size_grid(h_p: int, w_p: int, spec: GridSpec) -> Tuple[int, int]:
    """Element size for ``k`` intervals of width ``o`` between ``k + 1`` elements."""
    if spec.mode != "grid":
        raise DomainError("element_size_grid requires a grid-mode spec")
    k_v, k_h = spec.reps
    o_v, o_h = spec.axis_interval(0), spec.axis_interval(1)
    h_t = (h_p - k_v * o_v) // (k_v + 1)
    w_t = (w_p - k_h * o_h) // (k_h + 1)
    return _check_element(h_t, "height"), _check_element(w_t, "width")


def element_size_tiled(h_p: int, w_p: int, spec: GridSpec) -> Tuple[int, int]:
    if spec.mode != "tiled":
        raise DomainError("element_size_tiled requires a tiled-mode spec")
    k_v, k_h = spec.reps
    return _check_element(h_p // k_v, "height"), _check_element(w_p // k_h, "width")


def element_size(h_p: int, w_p: int, spec: GridSpec) -> Tuple[int, int]:
    if spec.mode == "grid":
        return element_size_grid(h_p, w_p, spec)
    return element_size_tiled(h_p, w_p, spec)


def _axis_layout(length: int, elem: int, gap: int, count: int) -> List[int]:
    used = count * elem + (count - 1) * gap
    if used > length:
        raise AssemblyError(f"{count} elements of {elem} px with {gap} px gaps exceed {length} px")
    start = (length - used) // 2  # leftover is split into an outer margin
    return [start + i * (elem + gap) for i in range(count)]


@dataclass
class Layout:
    """Anchor positions and the gather index that realizes them."""

    h_p: int
    w_p: int
    h_t: int
    w_t: int
    origins: List[Tuple[int, int]]
    index: torch.Tensor  # (h_p, w_p) long, element pixel index or -1 on the mask
    mask: torch.Tensor  # (h_p, w_p) bool, True on interval pixels


def layout(spec: GridSpec, h_p: int, w_p: int, element_hw: Tuple[int, int]) -> Layout:
    h_t, w_t = element_hw
    k_v, k_h = spec.reps
    n_v, n_h = (k_v + 1, k_h + 1) if spec.mode == "grid" else (k_v, k_h)
    rows = _axis_layout(h_p, h_t, spec.axis_interval(0), n_v)
    cols = _axis_layout(w_p, w_t, spec.axis_interval(1), n_h)

    index = torch.full((h_p, w_p), -1, dtype=torch.long)
    local = torch.arange(h_t * w_t).reshape(h_t, w_t)
    origins = []
    for r in rows:
        for c in cols:
            index[r:r + h_t, c:c + w_t] = local
            origins.append((r, c))
    return Layout(h_p, w_p, h_t, w_t, origins, index, index < 0)


@dataclass
class AssembledPatch:
    image: torch.Tensor
    mask: torch.Tensor
    element_origins: List[Tuple[int, int]]
    spec: GridSpec
    element_hw: Tuple[int, int]

    @property
    def size(self) -> Tuple[int, int]:
        return int(self.image.shape[1]), int(self.image.shape[2])

    def element_at(self, idx: int = 0) -> torch.Tensor:
        r, c = self.element_origins[idx]
        h_t, w_t = self.element_hw
        return self.image[:, r:r + h_t, c:c + w_t]

    def detach(self) -> "AssembledPatch":
        return AssembledPatch(self.image.detach(), self.mask, list(self.element_origins),
                              self.spec, self.element_hw)


def validate_element(element: torch.Tensor) -> None:
    if element.ndim != 3 or element.shape[0] != 3:
        raise AssemblyError(f"texture element must be (3, h_t, w_t), got {tuple(element.shape)}")
    if min(element.shape[1:]) < MIN_ELEMENT_PX:
        raise AssemblyError("texture element must be at least 2x2")
    with torch.no_grad():
        if element.min() < 0 or element.max() > 1:
            raise AssemblyError("texture element values must lie in [0, 1]")


def assemble(element: torch.Tensor, spec: GridSpec, h_p: int, w_p: int,
             check_size: bool = True) -> AssembledPatch:
    """Tile ``element`` into an ``h_p x w_p`` patch.

    Built as a gather, so autograd sums the gradient of every anchored copy
    back into the element.
    """
    validate_element(element)
    h_t, w_t = int(element.shape[1]), int(element.shape[2])
    if check_size:
        expected = element_size(h_p, w_p, spec)
        if expected != (h_t, w_t):
            raise AssemblyError(f"element is {h_t}x{w_t} but the layout requires {expected[0]}x{expected[1]}")
    lay = layout(spec, h_p, w_p, (h_t, w_t))

    flat = element.reshape(3, -1)
    fill = torch.tensor(spec.interval_value, dtype=element.dtype, device=element.device)
    tiles = flat[:, lay.index.clamp(min=0).reshape(-1)].reshape(3, h_p, w_p)
    image = torch.where(lay.mask.to(element.device), fill.view(3, 1, 1).expand(3, h_p, w_p), tiles)
    return AssembledPatch(image, lay.mask, lay.origins, spec, (h_t, w_t))


def partition(patch: AssembledPatch) -> Tuple[torch.Tensor, torch.Tensor]:
    """Split into interval structure ``M * P`` and texture structure ``(1 - M) * P``."""
    m = patch.mask.to(patch.image.dtype)
    return m * patch.image, (1 - m) * patch.image


def random_element(hw: Tuple[int, int], seed: int, low: float = 0.25, high: float = 0.75,
                   dtype=torch.float32) -> torch.Tensor:
    gen = torch.Generator().manual_seed(int(seed))
    return low + (high - low) * torch.rand((3, hw[0], hw[1]), generator=gen, dtype=dtype)


def high_frequency_element(hw: Tuple[int, int], seed: int = 0, block: int = 2,
                           dtype=torch.float32) -> torch.Tensor:
    """Binary blocky noise, the default fixed texture for interval sweeps."""
    rng = np.random.default_rng(seed)
    h, w = hw
    coarse = rng.integers(0, 2, size=(3, -(-h // block), -(-w // block))).astype(np.float64)
    fine = np.repeat(np.repeat(coarse, block, axis=1), block, axis=2)[:, :h, :w]
    return torch.tensor(fine, dtype=dtype)


# -- persistence -------------------------------------------------------------

def quantize(image: torch.Tensor) -> torch.Tensor:
    """Round to the 8-bit grid that PNG storage keeps."""
    return torch.round(image.detach().clamp(0, 1) * 255.0) / 255.0


def tensor_to_uint8(image: torch.Tensor) -> np.ndarray:
    arr = torch.round(image.detach().clamp(0, 1) * 255.0).to(torch.uint8)
    return arr.permute(1, 2, 0).cpu().numpy()


def uint8_to_tensor(arr: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    return torch.tensor(arr[..., :3], dtype=dtype).permute(2, 0, 1) / 255.0


def save_patch(patch: AssembledPatch, png_path, extra: Optional[dict] = None) -> Path:
    """Write the patch as an 8-bit PNG plus a ``.json`` sidecar next to it."""
    png_path = Path(png_path)
    Image.fromarray(tensor_to_uint8(patch.image)).save(png_path)
    sidecar = {
        "grid": patch.spec.to_dict(),
        "patch_hw": list(patch.size),
        "element_hw": list(patch.element_hw),
        "element_origins": [list(o) for o in patch.element_origins],
    }
    if extra:
        sidecar.update(extra)
    json_path = png_path.with_suffix(".json")
    json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return json_path


def load_patch(png_path, dtype=torch.float32) -> AssembledPatch:
    """Read a patch PNG. Without a sidecar the image is a plain one-copy patch
    (how baseline patches from other methods are loaded)."""
    png_path = Path(png_path)
    arr = np.asarray(Image.open(png_path).convert("RGB"))
    image = uint8_to_tensor(arr, dtype)
    h_p, w_p = image.shape[1:]
    json_path = png_path.with_suffix(".json")
    if not json_path.exists():
        spec = GridSpec(reps=(1, 1), mode="tiled")
        return AssembledPatch(image, torch.zeros((h_p, w_p), dtype=torch.bool), [(0, 0)], spec, (h_p, w_p))

    meta = json.loads(json_path.read_text())
    spec = GridSpec.from_dict(meta["grid"])
    if tuple(meta["patch_hw"]) != (h_p, w_p):
        raise AssemblyError(f"sidecar size {meta['patch_hw']} does not match image {h_p}x{w_p}")
    lay = layout(spec, h_p, w_p, tuple(meta["element_hw"]))
    return AssembledPatch(image, lay.mask, lay.origins, spec, tuple(meta["element_hw"]))

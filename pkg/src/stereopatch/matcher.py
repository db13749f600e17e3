"""Differentiable window-matching stereo and the model adapter contract.

A stereo model is anything with ``name``, ``d_max`` and a ``forward(left,
right)`` that maps two ``(3, H, W)`` images in [0, 1] to an ``(H, W)``
left-view disparity map and lets gradients flow back into both images.
External networks plug in through :func:`register_model`.
"""

from __future__ import annotations

import importlib
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Protocol, runtime_checkable

import torch
import torch.nn.functional as F

from .errors import ConfigError, DomainError

# costs are mean absolute differences in 8-bit intensity levels
INTENSITY_SCALE = 255.0


@runtime_checkable
class StereoModel(Protocol):
    name: str
    d_max: int

    def forward(self, left: torch.Tensor, right: torch.Tensor) -> torch.Tensor:
        ...


def _check_pair(left: torch.Tensor, right: torch.Tensor):
    if left.shape != right.shape or left.ndim != 3:
        raise DomainError(f"images must share a (C, H, W) shape, got {tuple(left.shape)} and {tuple(right.shape)}")


def cost_volume(left: torch.Tensor, right: torch.Tensor, d_max: int, window: int = 7) -> torch.Tensor:
    """Windowed mean absolute difference, ``(d_max + 1, H, W)``.

    ``costs[d, y, x]`` compares the left window at x with the right window at
    x - d. Coordinates past the image border are clamped (edge replication).
    """
    _check_pair(left, right)
    _, h, w = left.shape
    if d_max < 1 or d_max >= w:
        raise DomainError(f"d_max must satisfy 1 <= d_max < width ({w}), got {d_max}")
    if window < 3 or window % 2 == 0:
        raise DomainError(f"window must be odd and >= 3, got {window}")

    padded = F.pad(right.unsqueeze(0), (d_max, 0, 0, 0), mode="replicate")[0]
    diffs = [(left - padded[:, :, d_max - d: d_max - d + w]).abs().mean(0) for d in range(d_max + 1)]
    vol = torch.stack(diffs, 0) * INTENSITY_SCALE
    r = window // 2
    vol = F.pad(vol.unsqueeze(0), (r, r, r, r), mode="replicate")
    return F.avg_pool2d(vol, window, stride=1)[0]


def soft_argmin(volume: torch.Tensor, temperature: float = 0.5) -> torch.Tensor:
    """Expected disparity under softmax(-cost / temperature) along axis 0."""
    if not temperature > 0:
        raise DomainError("temperature must be positive")
    weights = torch.softmax(-volume / temperature, dim=0)
    d = torch.arange(volume.shape[0], dtype=volume.dtype, device=volume.device)
    return (weights * d.view(-1, 1, 1)).sum(0)


def periodicity_score(volume: torch.Tensor, period: int, mask: Optional[torch.Tensor] = None) -> float:
    """How closely C(x, d) repeats at C(x, d + period), in [0, 1].

    Per pixel, the two cost slices are compared by zero-mean cosine
    similarity (negative values count as 0). Pixels whose slices are flat
    carry no evidence and are skipped.
    """
    d_max = volume.shape[0] - 1
    if period < 1 or period > d_max / 2:
        raise DomainError(f"period must lie in [1, {d_max / 2}], got {period}")
    a = volume[:-period].reshape(volume.shape[0] - period, -1)
    b = volume[period:].reshape(volume.shape[0] - period, -1)
    a = a - a.mean(0, keepdim=True)
    b = b - b.mean(0, keepdim=True)
    na, nb = a.norm(dim=0), b.norm(dim=0)
    valid = (na > 1e-6) & (nb > 1e-6)
    if mask is not None:
        valid &= mask.reshape(-1).to(valid.device)
    if not valid.any():
        return 0.0
    sim = (a * b).sum(0)[valid] / (na[valid] * nb[valid])
    return float(sim.clamp(min=0).mean())


@dataclass(frozen=True)
class MatcherConfig:
    d_max: int = 96
    window: int = 7
    temperature: float = 0.5
    pyramid_levels: int = 1


class BuiltinMatcher:
    """Cost volume + soft-argmin, optionally averaged over a 3-level pyramid."""

    name = "builtin"

    def __init__(self, config: MatcherConfig | None = None, **overrides):
        cfg = config or MatcherConfig()
        if overrides:
            cfg = MatcherConfig(**{**cfg.__dict__, **overrides})
        if cfg.pyramid_levels not in (1, 2, 3):
            raise ConfigError("pyramid_levels must be 1, 2 or 3")
        self.config = cfg
        self.d_max = cfg.d_max

    @property
    def support_radius(self) -> int:
        """Horizontal/vertical reach of one output pixel, excluding the disparity search."""
        scale = 2 ** (self.config.pyramid_levels - 1)
        return (self.config.window // 2 + 2) * scale

    def _single(self, left, right, d_max):
        return soft_argmin(cost_volume(left, right, d_max, self.config.window), self.config.temperature)

    def forward(self, left: torch.Tensor, right: torch.Tensor) -> torch.Tensor:
        _check_pair(left, right)
        cfg = self.config
        disp = self._single(left, right, cfg.d_max)
        if cfg.pyramid_levels == 1:
            return disp
        h, w = left.shape[1:]
        maps = [disp]
        for level in range(1, cfg.pyramid_levels):
            s = 2 ** level
            lo_l = F.avg_pool2d(left.unsqueeze(0), s, ceil_mode=True)[0]
            lo_r = F.avg_pool2d(right.unsqueeze(0), s, ceil_mode=True)[0]
            d_lo = max(1, min(cfg.d_max // s, lo_l.shape[2] - 1))
            coarse = self._single(lo_l, lo_r, d_lo) * s
            up = F.interpolate(coarse[None, None], size=(h, w), mode="bilinear", align_corners=False)[0, 0]
            maps.append(up)
        return torch.stack(maps, 0).mean(0).clamp(0, cfg.d_max)

    __call__ = forward


_REGISTRY: Dict[str, Callable[..., StereoModel]] = {"builtin": BuiltinMatcher}


def register_model(name: str, factory: Callable[..., StereoModel]) -> None:
    """Make an adapter available to configs and the CLI under ``name``."""
    _REGISTRY[name] = factory


def available_models():
    return sorted(_REGISTRY)


def load_model(name: str, **kwargs) -> StereoModel:
    """Instantiate a registered model, or import ``package.module:factory``."""
    if name in _REGISTRY:
        factory = _REGISTRY[name]
    elif ":" in name:
        module, attr = name.split(":", 1)
        try:
            factory = getattr(importlib.import_module(module), attr)
        except (ImportError, AttributeError) as exc:
            raise ConfigError(f"cannot import stereo model factory {name!r}: {exc}") from exc
    else:
        raise ConfigError(f"unknown stereo model {name!r}; registered: {available_models()}")
    model = factory(**kwargs)
    if not isinstance(model, StereoModel):
        raise ConfigError(f"{name!r} does not satisfy the StereoModel contract (name, d_max, forward)")
    return model

"""Experiment configuration: one TOML file whose tables mirror the config types."""

from __future__ import annotations

import copy
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python < 3.11
    import tomli

from .attack import AttackConfig
from .errors import ConfigError, DomainError, PlacementError, SceneSpecError
from .geometry import PatchPlacement
from .metrics import MetricConfig
from .patch import GridSpec
from .synthetic import PlaneLayer, SyntheticSceneSpec

OUTPUT_ROOT_ENV = "STEREOPATCH_OUTPUT_ROOT"


@dataclass(frozen=True)
class SceneSource:
    kind: Literal["synthetic", "kitti-dir"] = "synthetic"
    # kitti-dir: dataset root holding image_2/, image_3/ and calibration files
    path: Optional[str] = None
    left_key: str = "P_rect_02"
    right_key: str = "P_rect_03"
    # half-resolution rig so the default 5 m patch fits both views of a 256 px frame
    synthetic: SyntheticSceneSpec = SyntheticSceneSpec(
        height=128, width=256, focal_px=360.0,
        planes=(PlaneLayer(25.0), PlaneLayer(12.0, (10, 5, 60, 50))))
    # put a plane at the patch depth behind the patch, like a board it is attached to
    board: bool = True
    board_margin_px: int = 10


@dataclass(frozen=True)
class ModelConfig:
    name: str = "builtin"
    params: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class SweepConfig:
    strategies: Tuple[str, ...] = ("basic-repeat", "horizontal", "vertical", "grid")
    widths: Tuple[int, ...] = tuple(range(2, 11))
    axis: Literal["X", "Y"] = "X"
    degrees: Tuple[float, ...] = tuple(float(d) for d in range(-40, 41, 10))
    depths_m: Tuple[float, ...] = (5.0, 9.0, 13.0, 17.0, 21.0)
    scales: Tuple[float, ...] = (0.5, 0.75, 1.0, 1.25, 1.5)


@dataclass(frozen=True)
class ExperimentConfig:
    scenes: SceneSource = SceneSource()
    model: ModelConfig = ModelConfig()
    placement: PatchPlacement = PatchPlacement()
    grid: GridSpec = GridSpec(mode="tiled")
    attack: AttackConfig = AttackConfig()
    metrics: MetricConfig = MetricConfig()
    sweep: SweepConfig = SweepConfig()
    output_dir: str = "runs/default"
    scene_count: int = 40
    # held-out evaluation scenes; 0 evaluates on the optimization scenes
    eval_count: int = 0

    def validate(self) -> "ExperimentConfig":
        if self.scene_count < 1:
            raise ConfigError("scene_count must be at least 1")
        if self.eval_count < 0:
            raise ConfigError("eval_count must be non-negative")
        if self.grid.mode != self.attack.patch_mode:
            raise ConfigError(f"attack mode {self.attack.mode} needs grid.mode = {self.attack.patch_mode!r}")
        src = self.scenes
        if src.kind == "kitti-dir":
            if not src.path or not Path(src.path).is_dir():
                raise ConfigError(f"scene directory does not exist: {src.path!r}")
        elif src.kind == "synthetic":
            if src.synthetic.texture == "photo" and not (src.synthetic.photo_path
                                                         and Path(src.synthetic.photo_path).exists()):
                raise ConfigError(f"photo texture file does not exist: {src.synthetic.photo_path!r}")
        else:
            raise ConfigError(f"unknown scene source {src.kind!r}")
        return self

    def output_path(self) -> Path:
        out = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenes"]["synthetic"]["planes"] = [
            {"depth_m": p.depth_m, **({"box": list(p.box)} if p.box else {})}
            for p in self.scenes.synthetic.planes]
        return d


# -- building from plain dicts -----------------------------------------------

def _build(cls, data: dict, section: str, convert=None):
    if not isinstance(data, dict):
        raise ConfigError(f"[{section}] must be a table")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    kwargs = dict(data)
    if convert:
        kwargs = convert(kwargs)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError, DomainError, PlacementError, SceneSpecError) as exc:
        raise ConfigError(f"invalid [{section}]: {exc}") from exc


def _tuples(*keys):
    def convert(d):
        for k in keys:
            if k in d and isinstance(d[k], list):
                d[k] = tuple(d[k])
        return d
    return convert


def _synthetic(d: dict) -> SyntheticSceneSpec:
    d = dict(d)
    if "planes" in d:
        planes = []
        for p in d["planes"]:
            if isinstance(p, (int, float)):
                planes.append(PlaneLayer(float(p)))
            else:
                planes.append(PlaneLayer(float(p["depth_m"]), tuple(p["box"]) if p.get("box") else None))
        d["planes"] = tuple(planes)
    return _build(SyntheticSceneSpec, d, "scenes.synthetic")


def config_from_dict(data: dict) -> ExperimentConfig:
    data = copy.deepcopy(data)
    top = {}
    if "scenes" in data:
        sc = data.pop("scenes")
        if "synthetic" in sc:
            sc["synthetic"] = _synthetic(sc["synthetic"])
        top["scenes"] = _build(SceneSource, sc, "scenes")
    if "model" in data:
        top["model"] = _build(ModelConfig, data.pop("model"), "model")
    if "placement" in data:
        top["placement"] = _build(PatchPlacement, data.pop("placement"), "placement", _tuples("shift_m"))
    if "attack" in data:
        top["attack"] = _build(AttackConfig, data.pop("attack"), "attack")
    if "grid" in data:
        grid = dict(data.pop("grid"))
        # the patch mode follows the attack mode unless stated
        grid.setdefault("mode", top.get("attack", AttackConfig()).patch_mode)
        top["grid"] = _build(GridSpec, grid, "grid", _tuples("reps", "interval_value"))
    elif "attack" in top:
        # 5 px on the half-resolution default rig matches 10 px at full resolution
        top["grid"] = GridSpec(mode=top["attack"].patch_mode, interval_px=5)
    if "metrics" in data:
        top["metrics"] = _build(MetricConfig, data.pop("metrics"), "metrics")
    if "sweep" in data:
        top["sweep"] = _build(SweepConfig, data.pop("sweep"), "sweep",
                              _tuples("strategies", "widths", "degrees", "depths_m", "scales"))
    top.update(data)
    return _build(ExperimentConfig, top, "top level").validate()


def parse_override(text: str) -> Tuple[List[str], Any]:
    """``a.b.c=value`` with the value read as a TOML literal (bare words become strings)."""
    if "=" not in text:
        raise ConfigError(f"override must look like key.path=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = tomli.loads(f"v = {raw.strip()}")["v"]
    except tomli.TOMLDecodeError:
        value = raw.strip()
    return key.strip().split("."), value


def apply_overrides(data: dict, overrides: Sequence[str]) -> dict:
    data = copy.deepcopy(data)
    for text in overrides:
        path, value = parse_override(text)
        node = data
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r} descends into a non-table value")
        node[path[-1]] = value
    return data


def load_config(path: Optional[str | Path] = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    data: dict = {}
    if path is not None:
        path = Path(path)
        try:
            data = tomli.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        # relative data paths are relative to the config file
        sc = data.get("scenes", {})
        if isinstance(sc.get("path"), str) and not Path(sc["path"]).is_absolute():
            sc["path"] = str(path.parent / sc["path"])
    return config_from_dict(apply_overrides(data, overrides))

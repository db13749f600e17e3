"""Adversarial patches with interval structure against stereo disparity estimation."""

from .attack import AttackConfig, OptimizationTrace, interval_sweep, optimize, rotation_sweep
from .calib import parse_kitti_calibration, serialize_kitti_calibration
from .deploy import Deployment, StereoScene, composite, plan_deployment
from .errors import StereoPatchError
from .geometry import CameraRig, PatchPlacement, PixelQuad, corner_points_3d, project_corners
from .matcher import BuiltinMatcher, MatcherConfig, StereoModel, load_model, register_model
from .metrics import AttackReport, MetricConfig, aggregate, attack_d1, d1, epe
from .patch import AssembledPatch, GridSpec, assemble, element_size, partition
from .synthetic import PlaneLayer, SyntheticSceneSpec, generate_synthetic_scene

__version__ = "0.1.0"

__all__ = [
    "AssembledPatch", "AttackConfig", "AttackReport", "BuiltinMatcher", "CameraRig", "Deployment",
    "GridSpec", "MatcherConfig", "MetricConfig", "OptimizationTrace", "PatchPlacement", "PixelQuad",
    "PlaneLayer", "StereoModel", "StereoPatchError", "StereoScene", "SyntheticSceneSpec", "aggregate",
    "assemble", "attack_d1", "composite", "corner_points_3d", "d1", "element_size", "epe",
    "generate_synthetic_scene", "interval_sweep", "load_model", "optimize", "parse_kitti_calibration",
    "partition", "plan_deployment", "project_corners", "register_model", "rotation_sweep",
    "serialize_kitti_calibration",
]

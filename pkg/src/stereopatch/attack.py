"""Grid-based and depth-vanish patch optimization.

Both attacks optimize a single texture element E. The patch is assembled
from E by a gather, so the gradient reaching E is the sum over all anchored
copies; dividing by the number of copies gives the averaged per-copy
gradient used for the update.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
import torch

from .deploy import Deployment, StereoScene, composite, plan_deployment
from .errors import (AssemblyError, DeploymentError, DomainError, NumericalError, PlacementError,
                     PatchTooSmallError)
from .geometry import PatchPlacement, patch_pixel_size
from .matcher import StereoModel
from .metrics import MetricConfig, attack_d1, d1
from .patch import (AssembledPatch, GridSpec, assemble, element_size, high_frequency_element,
                    random_element, tensor_to_uint8)

log = logging.getLogger(__name__)

AttackMode = Literal["grid", "depthvanish"]
UpdateRule = Literal["sign", "sgd", "momentum", "adam"]


@dataclass(frozen=True)
class AttackConfig:
    alpha: float = 0.1
    beta: float = 10.0
    lr: float = 0.02
    steps: int = 200
    epsilon: float = 1e-8
    seed: int = 0
    mode: AttackMode = "depthvanish"
    update: UpdateRule = "sgd"
    momentum: float = 0.9
    # optional stronger objective: drive the patch-region disparity to zero
    targeted_zero: bool = False
    # extra pixels kept around the patch when cropping scenes for speed
    crop: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise DomainError("alpha and beta must be non-negative")
        if not self.lr > 0:
            raise DomainError("lr must be positive")
        if self.steps < 0:
            raise DomainError("steps must be non-negative")
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")
        if self.mode not in ("grid", "depthvanish"):
            raise DomainError(f"unknown attack mode {self.mode!r}")
        if self.update not in ("sign", "sgd", "momentum", "adam"):
            raise DomainError(f"unknown update rule {self.update!r}")

    @property
    def patch_mode(self) -> str:
        return "tiled" if self.mode == "depthvanish" else "grid"

    @property
    def weights(self) -> Tuple[float, float]:
        # the grid-based objective is the regional MSE alone
        return (0.0, 0.0) if self.mode == "grid" else (self.alpha, self.beta)


def check_spec(spec: GridSpec, config: AttackConfig) -> None:
    if spec.mode != config.patch_mode:
        raise DomainError(f"{config.mode} attack needs a {config.patch_mode}-mode GridSpec, got {spec.mode}")


# -- losses ------------------------------------------------------------------

def rmse_loss(pred_adv: torch.Tensor, pred_clean: torch.Tensor, region_mask: torch.Tensor) -> torch.Tensor:
    """Mean squared disparity change over the patch region of the left view."""
    if pred_adv.shape != pred_clean.shape:
        raise DomainError("disparity maps differ in shape")
    mask = region_mask.to(torch.bool)
    if not mask.any():
        raise DomainError("region mask is empty")
    return ((pred_adv - pred_clean.to(pred_adv.dtype))[mask] ** 2).mean()


def entropy_loss(element: torch.Tensor, epsilon: float = 1e-8) -> torch.Tensor:
    e = element
    return (-e * torch.log(e + epsilon) - (1 - e) * torch.log(1 - e + epsilon)).mean()


def tv_loss(element: torch.Tensor) -> torch.Tensor:
    """Anisotropic total variation, summed over channels, divided by h_t * w_t."""
    if element.shape[-1] < 2 or element.shape[-2] < 2:
        raise DomainError("total variation needs an element of at least 2x2")
    h, w = element.shape[-2:]
    dv = (element[..., 1:, :] - element[..., :-1, :]).abs().sum()
    dh = (element[..., :, 1:] - element[..., :, :-1]).abs().sum()
    return (dv + dh) / (h * w)


def total_loss(rmse, entropy, tv, config: AttackConfig):
    """rMSE + alpha * entropy + beta * tv (regularizer weights are zero in grid mode)."""
    alpha, beta = config.weights
    return rmse + alpha * entropy + beta * tv


def objective(rmse, entropy, tv, config: AttackConfig):
    """What the optimizer descends: the regional error is ascended, the regularizers descended."""
    alpha, beta = config.weights
    return -rmse + alpha * entropy + beta * tv


# -- trace -------------------------------------------------------------------

@dataclass
class TraceRecord:
    step: int
    total: float
    rmse: float
    entropy: float
    tv: float
    element_hash: str


@dataclass
class OptimizationTrace:
    records: List[TraceRecord] = field(default_factory=list)
    snapshots: List[Tuple[int, torch.Tensor]] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "total", "rmse", "entropy", "tv"])
        for r in self.records:
            w.writerow([r.step, repr(r.total), repr(r.rmse), repr(r.entropy), repr(r.tv)])
        return buf.getvalue()

    @staticmethod
    def read_csv(text: str) -> List[dict]:
        rows = list(csv.DictReader(io.StringIO(text)))
        return [{"step": int(r["step"]), **{k: float(r[k]) for k in ("total", "rmse", "entropy", "tv")}}
                for r in rows]


def _hash(t: torch.Tensor) -> str:
    return hashlib.sha1(t.detach().cpu().contiguous().numpy().tobytes()).hexdigest()[:16]


# -- scene preparation -------------------------------------------------------

@dataclass
class Target:
    scene: StereoScene
    deployment: Deployment
    clean_pred: torch.Tensor


def _roi(dep: Deployment, size, d_max: int, margin: int):
    h, w = size
    xs, ys = [], []
    for q in (dep.quad_left, dep.quad_right):
        x0, y0, x1, y1 = q.bounds()
        xs += [x0, x1]
        ys += [y0, y1]
    align = 4
    x0 = max(int(math.floor(min(xs))) - d_max - margin, 0) // align * align
    y0 = max(int(math.floor(min(ys))) - margin, 0) // align * align
    x1 = min(int(math.ceil(max(xs))) + margin + 1, w)
    y1 = min(int(math.ceil(max(ys))) + margin + 1, h)
    return x0, y0, x1, y1


def crop_target(scene: StereoScene, dep: Deployment, model: StereoModel):
    """Crop a scene to what the model needs to predict the patch region.

    Only models that declare a finite ``support_radius`` are cropped.
    """
    radius = getattr(model, "support_radius", None)
    if radius is None:
        return scene, dep
    x0, y0, x1, y1 = _roi(dep, scene.size, model.d_max, int(radius) + 2)
    if (x0, y0, x1, y1) == (0, 0, scene.size[1], scene.size[0]):
        return scene, dep
    gt = scene.gt_disparity[y0:y1, x0:x1] if scene.gt_disparity is not None else None
    cropped = StereoScene(scene.left[:, y0:y1, x0:x1], scene.right[:, y0:y1, x0:x1], gt, scene.rig, scene.id)
    return cropped, dep.translated(-x0, -y0, cropped.size)


def prepare_targets(scenes: Sequence[StereoScene], model: StereoModel, placement: PatchPlacement,
                    crop: bool = True) -> List[Target]:
    targets = []
    for scene in scenes:
        if scene.rig is None:
            raise DeploymentError(f"scene {scene.id} has no camera rig")
        try:
            dep = plan_deployment(scene.rig, placement, scene.size)
        except (PlacementError, DeploymentError) as exc:
            log.warning("skipping scene %s: %s", scene.id, exc)
            continue
        if crop:
            scene, dep = crop_target(scene, dep, model)
        with torch.no_grad():
            clean = model.forward(scene.left, scene.right)
        targets.append(Target(scene, dep, clean))
    if not targets:
        raise DeploymentError("the placement could not be deployed into any scene")
    return targets


def patch_size_for(targets: Sequence[Target]) -> Tuple[int, int]:
    return patch_pixel_size(targets[0].deployment.quad_left)


# -- optimization ------------------------------------------------------------

def _step(element, grad, state, config: AttackConfig):
    if config.update == "sgd":
        delta = grad
    elif config.update == "sign":
        delta = grad.sign()
    elif config.update == "momentum":
        state["buf"] = config.momentum * state.get("buf", torch.zeros_like(grad)) + grad
        delta = state["buf"]
    else:
        t = state["t"] = state.get("t", 0) + 1
        m = state["m"] = 0.9 * state.get("m", torch.zeros_like(grad)) + 0.1 * grad
        v = state["v"] = 0.999 * state.get("v", torch.zeros_like(grad)) + 0.001 * grad * grad
        delta = (m / (1 - 0.9 ** t)) / ((v / (1 - 0.999 ** t)).sqrt() + 1e-12)
    return (element - config.lr * delta).clamp(0.0, 1.0)


def optimize(
    scenes: Sequence[StereoScene],
    model: StereoModel,
    placement: PatchPlacement,
    spec: GridSpec,
    config: AttackConfig,
    init_element: Optional[torch.Tensor] = None,
    snapshot_every: int = 0,
    targets: Optional[List[Target]] = None,
    progress: Optional[Callable[[TraceRecord], None]] = None,
):
    """Optimize a texture element against ``model`` over ``scenes``.

    Each step assembles the patch, deploys it into every scene, and moves E
    along the averaged per-copy gradient of the objective; E is clamped back
    into [0, 1]. Interval pixels are constants of the assembly and never
    change. Returns ``(element, patch, trace)``.
    """
    check_spec(spec, config)
    if not scenes and not targets:
        raise DomainError("optimize needs at least one scene")
    targets = targets if targets is not None else prepare_targets(scenes, model, placement, config.crop)
    h_p, w_p = patch_size_for(targets)
    hw = element_size(h_p, w_p, spec)

    element = random_element(hw, config.seed) if init_element is None else init_element.detach().clone()
    if tuple(element.shape[1:]) != hw:
        raise AssemblyError(f"initial element is {tuple(element.shape[1:])}, the layout needs {hw}")
    alpha, beta = config.weights
    trace = OptimizationTrace()
    state: dict = {}
    n = len(targets)

    for step in range(config.steps):
        e = element.detach().requires_grad_(True)
        patch = assemble(e, spec, h_p, w_p)
        leaf = patch.image.detach().requires_grad_(True)

        rmse_sum = 0.0
        for t in targets:
            adv = composite(t.scene, leaf, t.deployment)
            pred = model.forward(adv.left, adv.right)
            r = rmse_loss(pred, t.clean_pred, t.deployment.region_mask_left)
            if config.targeted_zero:
                term = (pred[t.deployment.region_mask_left] ** 2).mean()
            else:
                term = -r
            (term / n).backward()
            rmse_sum += float(r.detach())
        patch.image.backward(leaf.grad)

        ent = entropy_loss(e, config.epsilon)
        tv = tv_loss(e)
        if alpha or beta:
            (alpha * ent + beta * tv).backward()

        rmse = rmse_sum / n
        # the trace records the descended objective, so a successful run ends below its start
        total = float(objective(rmse, float(ent.detach()), float(tv.detach()), config))
        rec = TraceRecord(step, total, rmse, float(ent.detach()), float(tv.detach()), _hash(element))
        trace.records.append(rec)
        if progress is not None:
            progress(rec)
        if not (math.isfinite(total) and torch.isfinite(e.grad).all()):
            raise NumericalError(f"non-finite loss or gradient at step {step}", trace)
        if snapshot_every and step % snapshot_every == 0:
            trace.snapshots.append((step, element.detach().clone()))

        grad = e.grad / len(patch.element_origins)
        element = _step(element.detach(), grad, state, config)

    patch = assemble(element, spec, h_p, w_p)
    return element, patch.detach(), trace


def save_snapshots(trace: OptimizationTrace, directory) -> List[Path]:
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for step, el in trace.snapshots:
        p = directory / f"element_{step:05d}.png"
        Image.fromarray(tensor_to_uint8(el)).save(p)
        paths.append(p)
    return paths


# -- evaluation helpers ------------------------------------------------------

def region_prediction(scene: StereoScene, patch, dep: Deployment, model: StereoModel):
    with torch.no_grad():
        adv = composite(scene, patch, dep)
        return model.forward(adv.left, adv.right)


def _depths(pred: torch.Tensor, mask: torch.Tensor, fb: float, max_depth: float) -> np.ndarray:
    disp = pred.detach()[mask].double().numpy()
    return fb / np.maximum(disp, fb / max_depth)


# -- sweeps ------------------------------------------------------------------

STRATEGIES = ("basic-repeat", "horizontal", "vertical", "grid")


def strategy_spec(strategy: str, width: int, reps: Tuple[int, int] = (4, 5),
                  interval_value=(1.0, 1.0, 1.0)) -> GridSpec:
    """Patch layout for one interval strategy.

    Every strategy lays out ``k + 1`` element copies per axis; basic-repeat
    packs them without gaps.
    """
    k_v, k_h = reps
    if strategy == "basic-repeat":
        return GridSpec((k_v + 1, k_h + 1), 0, interval_value, "tiled")
    axes = {"horizontal": "rows", "vertical": "cols", "grid": "both"}.get(strategy)
    if axes is None:
        raise DomainError(f"unknown interval strategy {strategy!r}")
    return GridSpec(reps, width, interval_value, "grid", axes)


def interval_sweep(
    scenes: Sequence[StereoScene],
    model: StereoModel,
    placement: PatchPlacement,
    strategies: Iterable[str] = STRATEGIES,
    widths: Iterable[int] = range(2, 11),
    texture: Optional[torch.Tensor] = None,
    reps: Tuple[int, int] = (4, 5),
    metric_config: MetricConfig = MetricConfig(),
    max_depth: float = 200.0,
) -> List[dict]:
    """Predicted depth in the patch region for fixed-texture patches of each interval strategy."""
    widths = list(widths)
    if any(w < 2 or w > 10 for w in widths):
        raise DomainError("interval widths must lie in [2, 10]")
    targets = prepare_targets(scenes, model, placement)
    h_p, w_p = patch_size_for(targets)
    base = texture if texture is not None else high_frequency_element((h_p, w_p), seed=0)

    rows = []
    for strategy in strategies:
        for width in ([0] if strategy == "basic-repeat" else widths):
            spec = strategy_spec(strategy, width, reps)
            h_t, w_t = element_size(h_p, w_p, spec)
            patch = assemble(base[:, :h_t, :w_t].contiguous(), spec, h_p, w_p)
            depths, disps, ad1 = [], [], []
            for t in targets:
                pred = region_prediction(t.scene, patch.image, t.deployment, model)
                mask = t.deployment.region_mask_left
                fb = t.scene.rig.focal_px * t.scene.rig.baseline_m
                depths.append(_depths(pred, mask, fb, max_depth))
                disps.append(pred[mask].double().numpy())
                ad1.append(attack_d1(pred, t.deployment.patch_gt_disparity, mask, metric_config))
            all_depths = np.concatenate(depths)
            rows.append({
                "strategy": strategy,
                "width": width,
                "mean_depth": float(all_depths.mean()),
                "var_depth": float(all_depths.var()),
                "mean_disparity": float(np.concatenate(disps).mean()),
                "attack_d1": float(np.mean(ad1)),
            })
    return rows


def rotation_sweep(
    scene: StereoScene,
    model: StereoModel,
    patch: AssembledPatch | torch.Tensor,
    placement: PatchPlacement,
    axis: Literal["X", "Y"],
    degrees: Sequence[float],
    metric_config: MetricConfig = MetricConfig(),
    max_depth: float = 200.0,
) -> List[dict]:
    """Re-deploy a fixed patch at each rotation and record patch-region metrics."""
    if axis not in ("X", "Y"):
        raise DomainError("axis must be 'X' or 'Y'")
    image = patch.image if isinstance(patch, AssembledPatch) else patch
    rows = []
    for deg in degrees:
        rotated = replace(placement, rot_x_deg=deg) if axis == "X" else replace(placement, rot_y_deg=deg)
        row = {"axis": axis, "degrees": float(deg), "degenerate": False,
               "attack_d1": None, "d1": None, "mean_depth": None}
        try:
            dep = plan_deployment(scene.rig, rotated, scene.size)
            patch_pixel_size(dep.quad_left)
        except (PlacementError, DeploymentError, PatchTooSmallError) as exc:
            log.info("rotation %s=%s skipped: %s", axis, deg, exc)
            row["degenerate"] = True
            rows.append(row)
            continue
        pred = region_prediction(scene, image, dep, model)
        mask = dep.region_mask_left
        c = dep.patch_gt_disparity
        fb = scene.rig.focal_px * scene.rig.baseline_m
        row.update(attack_d1=attack_d1(pred, c, mask, metric_config), d1=d1(pred, c, mask, metric_config),
                   mean_depth=float(_depths(pred, mask, fb, max_depth).mean()))
        rows.append(row)
    return rows

"""Scene loading, attack runs, evaluation, sweeps and figure output."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image

from .attack import interval_sweep, optimize, patch_size_for, prepare_targets, rotation_sweep
from .calib import parse_kitti_calibration
from .config import ExperimentConfig
from .deploy import StereoScene, composite, plan_deployment
from .errors import ConfigError, DeploymentError, NumericalError, PlacementError
from .geometry import CameraRig, PatchPlacement, placement_quads
from .matcher import StereoModel, load_model
from .metrics import AttackReport, MetricConfig, SceneMetrics, aggregate, evaluate_region
from .patch import AssembledPatch, assemble, element_size, high_frequency_element, load_patch, save_patch
from .synthetic import PlaneLayer, SyntheticSceneSpec, generate_synthetic_scene

log = logging.getLogger(__name__)

HELD_OUT_SEED_OFFSET = 1000


# -- scenes ------------------------------------------------------------------

def board_layer(rig: CameraRig, placement: PatchPlacement, margin: int) -> PlaneLayer:
    """A fronto-parallel plane at the patch depth covering the patch's left-view footprint."""
    flat = replace(placement, rot_x_deg=0.0, rot_y_deg=0.0)
    ql, _ = placement_quads(rig, flat)
    x0, y0, x1, y1 = ql.bounds()
    x0, y0 = int(np.floor(x0)) - margin, int(np.floor(y0)) - margin
    x1, y1 = int(np.ceil(x1)) + margin, int(np.ceil(y1)) + margin
    return PlaneLayer(placement.depth_m, (x0, y0, x1 - x0, y1 - y0))


def synthetic_scene_spec(cfg: ExperimentConfig, d_max: int, placement: Optional[PatchPlacement] = None):
    src = cfg.scenes
    spec = replace(src.synthetic, d_max=d_max)
    if src.board:
        placement = placement or cfg.placement
        planes = [p for p in spec.planes if p.depth_m != placement.depth_m]
        planes.append(board_layer(spec.rig(), placement, src.board_margin_px))
        spec = replace(spec, planes=tuple(planes))
    return spec


def synthetic_scenes(spec: SyntheticSceneSpec, seeds: Sequence[int]) -> List[StereoScene]:
    return [generate_synthetic_scene(spec, s, f"synthetic-{s:04d}") for s in seeds]


def kitti_pairs(root: str | Path) -> List[Tuple[Path, Path]]:
    """Left/right image pairs of a KITTI-layout directory, sorted by filename."""
    root = Path(root)
    left_dir, right_dir = root / "image_2", root / "image_3"
    if not left_dir.is_dir() or not right_dir.is_dir():
        raise ConfigError(f"{root} needs image_2/ and image_3/ subdirectories")
    pairs = []
    for left in sorted(left_dir.glob("*.png")):
        right = right_dir / left.name
        if right.exists():
            pairs.append((left, right))
    if not pairs:
        raise ConfigError(f"no image pairs found under {root}")
    return pairs


def _calib_file(root: Path, stem: str) -> Path:
    frame = stem.split("_")[0]
    for cand in (root / "calib_cam_to_cam" / f"{frame}.txt", root / "calib" / f"{frame}.txt",
                 root / "calib_cam_to_cam.txt"):
        if cand.exists():
            return cand
    raise ConfigError(f"no calibration file for {stem} under {root}")


def _read_rgb(path: Path) -> torch.Tensor:
    try:
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    except OSError as exc:
        raise ConfigError(f"cannot read image {path}: {exc}") from exc
    return torch.from_numpy(arr.copy()).permute(2, 0, 1).contiguous()


def load_kitti_scene(root: Path, left: Path, right: Path, left_key="P_rect_02", right_key="P_rect_03"):
    l_img, r_img = _read_rgb(left), _read_rgb(right)
    size = tuple(l_img.shape[1:])
    rig = parse_kitti_calibration(_calib_file(root, left.stem).read_text(), left_key, right_key)
    gt = None
    gt_path = root / "disp_occ_0" / left.name
    if gt_path.exists():
        gt = torch.from_numpy(np.asarray(Image.open(gt_path), dtype=np.float32) / 256.0)
    return StereoScene(l_img, r_img, gt, rig.with_image_size(size), left.stem)


def load_scenes(cfg: ExperimentConfig, d_max: int, placement: Optional[PatchPlacement] = None):
    """(optimization scenes, evaluation scenes); the two coincide when eval_count is 0."""
    n, m = cfg.scene_count, cfg.eval_count
    if cfg.scenes.kind == "synthetic":
        spec = synthetic_scene_spec(cfg, d_max, placement)
        train = synthetic_scenes(spec, range(n))
        held = synthetic_scenes(spec, range(HELD_OUT_SEED_OFFSET, HELD_OUT_SEED_OFFSET + m))
    else:
        root = Path(cfg.scenes.path)
        pairs = kitti_pairs(root)
        if len(pairs) < n + m:
            raise ConfigError(f"{root} holds {len(pairs)} pairs, {n + m} requested")
        scenes = [load_kitti_scene(root, l, r, cfg.scenes.left_key, cfg.scenes.right_key)
                  for l, r in pairs[:n + m]]
        train, held = scenes[:n], scenes[n:]
    return train, (held if m else train)


def build_model(cfg: ExperimentConfig) -> StereoModel:
    return load_model(cfg.model.name, **cfg.model.params)


# -- evaluation --------------------------------------------------------------

def evaluate_patch(scenes: Sequence[StereoScene], model: StereoModel, patch, placement: PatchPlacement,
                   metric_config: MetricConfig = MetricConfig()):
    """Per-scene metrics of a deployed patch; undeployable scenes are skipped with a warning.

    Returns ``(metrics, predictions)`` with predictions[i] = (clean, adversarial, adversarial scene).
    """
    image = patch.image if isinstance(patch, AssembledPatch) else patch
    metrics, preds = [], []
    for scene in scenes:
        try:
            dep = plan_deployment(scene.rig, placement, scene.size)
        except (PlacementError, DeploymentError) as exc:
            log.warning("skipping scene %s: %s", scene.id, exc)
            continue
        with torch.no_grad():
            clean = model.forward(scene.left, scene.right)
            adv_scene = composite(scene, image, dep)
            adv = model.forward(adv_scene.left, adv_scene.right)
        metrics.append(evaluate_region(scene.id, adv, dep.patch_gt_disparity, dep.region_mask_left, metric_config))
        preds.append((clean, adv, adv_scene))
    if not metrics:
        raise DeploymentError("the patch could not be deployed into any evaluation scene")
    return metrics, preds


# -- rendering ---------------------------------------------------------------

def colorize(disparity: torch.Tensor, vmax: float, cmap: str = "magma") -> np.ndarray:
    import matplotlib

    values = np.clip(disparity.detach().cpu().numpy() / max(vmax, 1e-6), 0.0, 1.0)
    rgba = matplotlib.colormaps[cmap](values)
    return (rgba[..., :3] * 255 + 0.5).astype(np.uint8)


def _image_uint8(image: torch.Tensor) -> np.ndarray:
    return (image.detach().clamp(0, 1).permute(1, 2, 0).cpu().numpy() * 255 + 0.5).astype(np.uint8)


def render_panels(out_dir: Path, scene_id: str, clean, adv, adv_scene: StereoScene, vmax: float) -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / f"{scene_id}_clean_disparity.png", out_dir / f"{scene_id}_adv_disparity.png",
             out_dir / f"{scene_id}_adv_left.png"]
    Image.fromarray(colorize(clean, vmax)).save(paths[0])
    Image.fromarray(colorize(adv, vmax)).save(paths[1])
    Image.fromarray(_image_uint8(adv_scene.left)).save(paths[2])
    return paths


# -- runs --------------------------------------------------------------------

def _report_meta(cfg: ExperimentConfig, model: StereoModel, scenes, extra: Optional[dict] = None) -> dict:
    meta = {
        "model": cfg.model.name,
        "model_params": dict(cfg.model.params),
        "d_max": int(model.d_max),
        "placement": asdict(cfg.placement),
        "grid": cfg.grid.to_dict(),
        "metrics": asdict(cfg.metrics),
        "scene_source": cfg.scenes.kind,
        "scenes": [s.id for s in scenes],
    }
    meta["placement"]["shift_m"] = list(cfg.placement.shift_m)
    meta.update(extra or {})
    return meta


def _write(path: Path, text: str):
    path.write_text(text)
    return path


def run_attack(cfg: ExperimentConfig, progress=None) -> Dict[str, Path]:
    """Optimize a patch, evaluate it, and write every artifact under the output directory.

    Nothing is written until optimization and evaluation have succeeded,
    except trace.csv when the optimization fails numerically.
    """
    model = build_model(cfg)
    train, held = load_scenes(cfg, model.d_max)
    out = cfg.output_path()
    try:
        element, patch, trace = optimize(train, model, cfg.placement, cfg.grid, cfg.attack, progress=progress)
    except NumericalError as exc:
        if exc.trace is not None:
            out.mkdir(parents=True, exist_ok=True)
            _write(out / "trace.csv", exc.trace.to_csv())
        raise
    metrics, preds = evaluate_patch(held, model, patch, cfg.placement, cfg.metrics)
    last = trace.records[-1] if trace.records else None
    report = aggregate(metrics, cfg.metrics, _report_meta(cfg, model, held, {
        "attack": asdict(cfg.attack),
        "optimization_scenes": [s.id for s in train],
        "final_total_loss": last.total if last else None,
        "final_rmse": last.rmse if last else None,
    }))

    out.mkdir(parents=True, exist_ok=True)
    paths = {"patch": out / "patch.png"}
    paths["sidecar"] = save_patch(patch, paths["patch"], {"mode": cfg.attack.mode})
    paths["trace"] = _write(out / "trace.csv", trace.to_csv())
    paths["report_json"] = _write(out / "report.json", report.to_json())
    paths["report_csv"] = _write(out / "report.csv", report.to_csv())
    clean, adv, adv_scene = preds[0]
    panels = render_panels(out / "panels", held[0].id, clean, adv, adv_scene, float(model.d_max))
    paths.update({f"panel{i}": p for i, p in enumerate(panels)})
    Image.fromarray(_image_uint8(element)).save(out / "element.png")
    return paths


def run_eval(cfg: ExperimentConfig, patch_path: str | Path) -> Tuple[AttackReport, Path]:
    """Evaluate a saved patch (ours or a fixed baseline image) on the evaluation scenes."""
    try:
        patch = load_patch(patch_path)
    except OSError as exc:
        raise ConfigError(f"cannot read patch {patch_path}: {exc}") from exc
    model = build_model(cfg)
    _, held = load_scenes(cfg, model.d_max)
    metrics, preds = evaluate_patch(held, model, patch, cfg.placement, cfg.metrics)
    report = aggregate(metrics, cfg.metrics, _report_meta(cfg, model, held, {"patch": Path(patch_path).name}))
    out = cfg.output_path()
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "report.json", report.to_json())
    _write(out / "report.csv", report.to_csv())
    clean, adv, adv_scene = preds[0]
    render_panels(out / "panels", held[0].id, clean, adv, adv_scene, float(model.d_max))
    return report, out


def render(cfg: ExperimentConfig, patch_path: str | Path, limit: int = 4) -> List[Path]:
    """Clean and adversarial disparity panels for the first ``limit`` evaluation scenes."""
    patch = load_patch(patch_path)
    model = build_model(cfg)
    _, held = load_scenes(cfg, model.d_max)
    _, preds = evaluate_patch(held[:limit], model, patch, cfg.placement, cfg.metrics)
    out = cfg.output_path() / "panels"
    paths = []
    for scene, (clean, adv, adv_scene) in zip(held, preds):
        paths += render_panels(out, scene.id, clean, adv, adv_scene, float(model.d_max))
    return paths


# -- sweeps ------------------------------------------------------------------

SWEEPS = ("interval", "rotation", "distance", "size")


def default_sweep_patch(cfg: ExperimentConfig, model: StereoModel, scenes) -> AssembledPatch:
    """Fixed-texture patch used when no patch file is given: a high-frequency element on cfg.grid."""
    targets = prepare_targets(scenes[:1], model, cfg.placement)
    h_p, w_p = patch_size_for(targets)
    hw = element_size(h_p, w_p, cfg.grid)
    return assemble(high_frequency_element(hw, seed=cfg.attack.seed), cfg.grid, h_p, w_p)


def _mean_rows(key: str, value, per_scene: List[dict]) -> dict:
    row = {key: value}
    cols = [k for k in per_scene[0] if k not in (key, "axis", "degenerate")]
    for k in cols:
        vals = [r[k] for r in per_scene if r.get(k) is not None]
        row[k] = float(np.mean(vals)) if vals else None
    return row


def _placement_rows(cfg, model, scenes_for, placements, key, values, patch, max_depth=200.0):
    rows = []
    for value, placement in zip(values, placements):
        scenes = scenes_for(placement)
        try:
            metrics, preds = evaluate_patch(scenes, model, patch, placement, cfg.metrics)
        except (DeploymentError, PlacementError) as exc:
            log.warning("%s=%s skipped: %s", key, value, exc)
            rows.append({key: value, "attack_d1": None, "d1": None, "epe": None, "mean_depth": None})
            continue
        depths = []
        for scene, (_, adv, _) in zip(scenes, preds):
            dep = plan_deployment(scene.rig, placement, scene.size)
            fb = scene.rig.focal_px * scene.rig.baseline_m
            d = adv[dep.region_mask_left].double().numpy()
            depths.append(float(np.mean(fb / np.maximum(d, fb / max_depth))))
        rows.append({key: value,
                     "attack_d1": float(np.mean([m.attack_d1 for m in metrics])),
                     "d1": float(np.mean([m.d1 for m in metrics])),
                     "epe": float(np.mean([m.epe for m in metrics])),
                     "mean_depth": float(np.mean(depths))})
    return rows


def sweep_rows(cfg: ExperimentConfig, kind: str, patch_path: Optional[str | Path] = None) -> List[dict]:
    if kind not in SWEEPS:
        raise ConfigError(f"unknown sweep {kind!r}; choose from {', '.join(SWEEPS)}")
    model = build_model(cfg)
    scenes, held = load_scenes(cfg, model.d_max)
    sw = cfg.sweep
    if kind == "interval":
        return interval_sweep(scenes, model, cfg.placement, sw.strategies, sw.widths, reps=cfg.grid.reps)

    patch = load_patch(patch_path) if patch_path else default_sweep_patch(cfg, model, scenes)
    if kind == "rotation":
        per_angle: Dict[float, List[dict]] = {float(d): [] for d in sw.degrees}
        for scene in held:
            for r in rotation_sweep(scene, model, patch, cfg.placement, sw.axis, sw.degrees, cfg.metrics):
                per_angle[r["degrees"]].append(r)
        rows = []
        for deg, rs in per_angle.items():
            row = _mean_rows("degrees", deg, rs)
            row["axis"] = sw.axis
            row["degenerate"] = all(r["degenerate"] for r in rs)
            rows.append(row)
        return rows

    if kind == "distance":
        placements = [replace(cfg.placement, depth_m=float(d)) for d in sw.depths_m]
        values = [float(d) for d in sw.depths_m]
        key = "depth_m"
    else:
        placements = [cfg.placement.scaled(float(s)) for s in sw.scales]
        values = [float(s) for s in sw.scales]
        key = "scale"

    def scenes_for(placement):
        if cfg.scenes.kind == "synthetic" and cfg.scenes.board:
            return load_scenes(cfg, model.d_max, placement)[1]
        return held

    return _placement_rows(cfg, model, scenes_for, placements, key, values, patch)


def rows_to_csv(rows: List[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def read_rows_csv(text: str) -> List[dict]:
    """Inverse of :func:`rows_to_csv`: numbers come back as numbers, blanks as None."""
    def parse(v: str):
        if v == "":
            return None
        if v in ("True", "False"):
            return v == "True"
        for conv in (int, float):
            try:
                return conv(v)
            except ValueError:
                pass
        return v

    return [{k: parse(v) for k, v in r.items()} for r in csv.DictReader(io.StringIO(text))]


def plot_sweep(rows: List[dict], kind: str, path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    if kind == "interval":
        for strategy in dict.fromkeys(r["strategy"] for r in rows):
            rs = [r for r in rows if r["strategy"] == strategy]
            if len(rs) == 1:
                ax.axhline(rs[0]["mean_depth"], ls="--", color="k", label=strategy)
                continue
            x = np.array([r["width"] for r in rs])
            m = np.array([r["mean_depth"] for r in rs])
            s = np.sqrt(np.array([r["var_depth"] for r in rs]))
            ax.plot(x, m, marker="o", label=strategy)
            ax.fill_between(x, m - s, m + s, alpha=0.2)
        ax.set_xlabel("interval width (px)")
        ax.set_ylabel("predicted depth (m)")
    else:
        key = {"rotation": "degrees", "distance": "depth_m", "size": "scale"}[kind]
        rs = [r for r in rows if r.get("attack_d1") is not None]
        ax.plot([r[key] for r in rs], [r["attack_d1"] for r in rs], marker="o", label="attack-D1")
        ax.plot([r[key] for r in rs], [r["d1"] for r in rs], marker="s", label="D1")
        ax.set_xlabel(key)
        ax.set_ylabel("%")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def run_sweeps(cfg: ExperimentConfig, kind: str, patch_path: Optional[str | Path] = None) -> Dict[str, Path]:
    rows = sweep_rows(cfg, kind, patch_path)
    out = cfg.output_path()
    out.mkdir(parents=True, exist_ok=True)
    csv_path = _write(out / f"sweep_{kind}.csv", rows_to_csv(rows))
    return {"csv": csv_path, "plot": plot_sweep(rows, kind, out / f"sweep_{kind}.png")}

"""Disparity error metrics over a patch region and their aggregation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Literal, Optional, Sequence

import numpy as np

from .errors import DomainError

COLUMNS = ("scene_id", "d1", "epe", "attack_d1")


@dataclass(frozen=True)
class MetricConfig:
    # how many times deeper than the true depth counts as attack-effective
    depth_factor: float = 3.0
    d1_abs_threshold: float = 3.0
    d1_rel_threshold: float = 0.05
    std: Literal["population", "sample"] = "population"

    def __post_init__(self):
        if not self.depth_factor > 1:
            raise DomainError("depth_factor must be > 1")
        if self.std not in ("population", "sample"):
            raise DomainError("std must be 'population' or 'sample'")


def _prepare(pred, gt, mask):
    pred = np.asarray(_numpy(pred), dtype=np.float64)
    gt = np.broadcast_to(np.asarray(_numpy(gt), dtype=np.float64), pred.shape)
    mask = np.asarray(_numpy(mask), dtype=bool)
    if pred.shape != mask.shape:
        raise DomainError(f"prediction {pred.shape} and mask {mask.shape} differ in shape")
    if not mask.any():
        raise DomainError("metric mask is empty")
    return pred[mask], gt[mask]


def _numpy(x):
    if hasattr(x, "detach"):
        return x.detach().cpu().numpy()
    return x


def epe(pred, gt, mask) -> float:
    """Mean absolute disparity error over the masked pixels."""
    p, g = _prepare(pred, gt, mask)
    return float(np.mean(np.abs(p - g)))


def _percent(flags: np.ndarray) -> float:
    # integer count over integer size, so equal counts give bit-identical percentages
    return 100.0 * int(np.count_nonzero(flags)) / flags.size


def _bad(p, g, cfg: MetricConfig):
    return np.abs(p - g) > np.maximum(cfg.d1_abs_threshold, cfg.d1_rel_threshold * g)


def d1(pred, gt, mask, config: MetricConfig = MetricConfig()) -> float:
    """Percentage of masked pixels with |pred - gt| > max(3, 0.05 gt)."""
    p, g = _prepare(pred, gt, mask)
    return _percent(_bad(p, g, config))


def attack_d1(pred, c: float, mask, config: MetricConfig = MetricConfig(), gt_for_threshold=None) -> float:
    """Percentage of masked pixels that are both wrong and pushed toward zero disparity.

    A pixel counts when |pred - c| > max(3, 0.05 d_gt) and pred < c / k, with
    k the configured depth factor. Inside the patch region d_gt is c unless
    ``gt_for_threshold`` says otherwise.
    """
    if not c > 0:
        raise DomainError("patch disparity c must be positive")
    thr_gt = c if gt_for_threshold is None else gt_for_threshold
    p, g = _prepare(pred, thr_gt, mask)
    far = np.abs(p - c) > np.maximum(config.d1_abs_threshold, config.d1_rel_threshold * g)
    vanished = np.abs(p) < c / config.depth_factor
    return _percent(far & vanished)


@dataclass
class SceneMetrics:
    scene_id: str
    d1: float
    epe: float
    attack_d1: float


def evaluate_region(scene_id: str, pred, c: float, mask, config: MetricConfig = MetricConfig()) -> SceneMetrics:
    """Scene metrics with the patch region's ground truth set to the constant ``c``."""
    return SceneMetrics(scene_id, d1(pred, c, mask, config), epe(pred, c, mask),
                        attack_d1(pred, c, mask, config))


@dataclass
class AttackReport:
    scenes: List[SceneMetrics]
    mean: Dict[str, float]
    std: Dict[str, float]
    meta: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenes": [asdict(s) for s in self.scenes],
            "mean": self.mean,
            "std": self.std,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for s in self.scenes:
            writer.writerow([s.scene_id, repr(s.d1), repr(s.epe), repr(s.attack_d1)])
        return buf.getvalue()

    @classmethod
    def from_dict(cls, d: dict) -> "AttackReport":
        return cls([SceneMetrics(**s) for s in d["scenes"]], d["mean"], d["std"], d.get("meta", {}))


def read_report_csv(text: str) -> List[SceneMetrics]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [SceneMetrics(r["scene_id"], float(r["d1"]), float(r["epe"]), float(r["attack_d1"])) for r in rows]


def aggregate(reports: Sequence[SceneMetrics], config: MetricConfig = MetricConfig(),
              meta: Optional[dict] = None) -> AttackReport:
    """Mean and standard deviation of every metric across scenes."""
    reports = list(reports)
    if not reports:
        raise DomainError("cannot aggregate an empty list of scene reports")
    ddof = 0 if config.std == "population" else 1
    mean, std = {}, {}
    for key in COLUMNS[1:]:
        vals = np.array([getattr(r, key) for r in reports], dtype=np.float64)
        mean[key] = float(vals.mean())
        std[key] = float(vals.std(ddof=ddof)) if len(vals) > ddof else 0.0
    return AttackReport(reports, mean, std, dict(meta or {}))

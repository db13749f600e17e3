import json

import numpy as np
import pytest
from PIL import Image

from stereopatch.attack import OptimizationTrace
from stereopatch.config import load_config
from stereopatch.errors import ConfigError
from stereopatch.experiment import (load_scenes, read_rows_csv, rows_to_csv, run_attack, run_eval, run_sweeps,
                                    sweep_rows)
from stereopatch.metrics import AttackReport, read_report_csv
from stereopatch.patch import load_patch


def _cfg(out, *extra):
    return load_config(overrides=[f'output_dir="{out}"', "scene_count=4", "attack.steps=50", *extra])


@pytest.fixture(scope="module")
def attack_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return out, run_attack(_cfg(out))


def test_artifact_manifest(attack_run):
    out, paths = attack_run
    names = {p.name for p in out.iterdir()}
    assert {"patch.png", "patch.json", "trace.csv", "report.json", "report.csv", "element.png"} <= names
    assert len(list((out / "panels").glob("*.png"))) >= 2
    assert paths["report_json"] == out / "report.json"


def test_artifacts_read_back(attack_run):
    out, _ = attack_run
    report = AttackReport.from_dict(json.loads((out / "report.json").read_text()))
    assert len(report.scenes) == 4
    assert read_report_csv((out / "report.csv").read_text()) == report.scenes
    trace = OptimizationTrace.read_csv((out / "trace.csv").read_text())
    assert [r["step"] for r in trace] == list(range(50))
    assert report.meta["final_total_loss"] == trace[-1]["total"]
    patch = load_patch(out / "patch.png")
    assert patch.size == (64, 91) and patch.spec.mode == "tiled"


def test_rerun_identical_report(attack_run, tmp_path):
    out, _ = attack_run
    run_attack(_cfg(tmp_path))
    assert (tmp_path / "report.json").read_bytes() == (out / "report.json").read_bytes()
    assert (tmp_path / "trace.csv").read_bytes() == (out / "trace.csv").read_bytes()


def test_missing_scene_directory_writes_nothing(tmp_path):
    out = tmp_path / "out"
    with pytest.raises(ConfigError):
        run_attack(_cfg(out, 'scenes.kind="kitti-dir"', f'scenes.path="{tmp_path / "nope"}"'))
    assert not out.exists()


def test_eval_saved_patch(attack_run, tmp_path):
    out, _ = attack_run
    report, where = run_eval(_cfg(tmp_path), out / "patch.png")
    assert where == tmp_path and (tmp_path / "report.json").exists()
    original = AttackReport.from_dict(json.loads((out / "report.json").read_text()))
    # the saved patch is 8-bit, so metrics match the in-memory run closely but not bit for bit
    assert report.mean["attack_d1"] == pytest.approx(original.mean["attack_d1"], abs=2.0)


def test_held_out_scenes(tmp_path):
    cfg = _cfg(tmp_path, "eval_count=2")
    train, held = load_scenes(cfg, 48)
    assert len(train) == 4 and len(held) == 2
    assert not set(s.id for s in train) & set(s.id for s in held)


def _write_kitti(root, n=2):
    rng = np.random.default_rng(0)
    (root / "image_2").mkdir(parents=True)
    (root / "image_3").mkdir()
    for i in range(n):
        img = (rng.random((128, 256, 3)) * 255).astype(np.uint8)
        Image.fromarray(img).save(root / "image_2" / f"{i:06d}_10.png")
        Image.fromarray(np.roll(img, -20, axis=1)).save(root / "image_3" / f"{i:06d}_10.png")
    (root / "calib_cam_to_cam.txt").write_text(
        "P_rect_02: 360 0 128 0 0 360 64 0 0 0 1 0\n"
        "P_rect_03: 360 0 128 -194.4 0 360 64 0 0 0 1 0\n"
        "R_rect_00: 1 0 0 0 1 0 0 0 1\n")


def test_kitti_directory(tmp_path):
    _write_kitti(tmp_path / "kitti")
    cfg = _cfg(tmp_path / "out", 'scenes.kind="kitti-dir"', f'scenes.path="{tmp_path / "kitti"}"', "scene_count=2")
    train, _ = load_scenes(cfg, 48)
    assert [s.id for s in train] == ["000000_10", "000001_10"]
    assert train[0].size == (128, 256) and train[0].rig.baseline_m == pytest.approx(0.54)
    with pytest.raises(ConfigError, match="pairs"):
        load_scenes(_cfg(tmp_path / "out", 'scenes.kind="kitti-dir"', f'scenes.path="{tmp_path / "kitti"}"',
                         "scene_count=5"), 48)


def test_interval_sweep_files(tmp_path):
    cfg = _cfg(tmp_path, "scene_count=1", "sweep.widths=[2, 6]")
    paths = run_sweeps(cfg, "interval")
    rows = read_rows_csv(paths["csv"].read_text())
    assert len(rows) == 1 + 3 * 2 and paths["plot"].exists()
    assert rows == read_rows_csv(rows_to_csv(rows))


@pytest.mark.parametrize("kind, key, n", [("rotation", "degrees", 3), ("distance", "depth_m", 2), ("size", "scale", 2)])
def test_placement_sweeps(tmp_path, kind, key, n):
    cfg = _cfg(tmp_path, "scene_count=1", "sweep.degrees=[-20.0, 0.0, 90.0]", "sweep.depths_m=[5.0, 9.0]",
               "sweep.scales=[0.75, 1.0]")
    rows = sweep_rows(cfg, kind)
    assert len(rows) == n and all(key in r for r in rows)
    if kind == "rotation":
        assert rows[2]["degenerate"] and rows[2]["attack_d1"] is None
    run_sweeps(cfg, kind)
    assert (tmp_path / f"sweep_{kind}.png").exists()


def test_unknown_sweep(tmp_path):
    with pytest.raises(ConfigError):
        sweep_rows(_cfg(tmp_path), "colour")

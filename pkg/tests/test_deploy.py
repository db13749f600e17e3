import logging

import numpy as np
import pytest
import torch

from stereopatch.deploy import (Deployment, StereoScene, apply_homography, bilinear_sample, clipped_fraction,
                                composite, extract_region, homography_from_points, homography_from_quad,
                                plan_deployment, quad_mask, warp_into)
from stereopatch.errors import DegeneratePlacementError, DeploymentError
from stereopatch.geometry import CameraRig, PatchPlacement, PixelQuad
from stereopatch.patch import GridSpec, assemble, element_size, random_element


def _scene(h=64, w=96, seed=0, rig=None):
    g = torch.Generator().manual_seed(seed)
    return StereoScene(torch.rand(3, h, w, generator=g, dtype=torch.float64),
                       torch.rand(3, h, w, generator=g, dtype=torch.float64), rig=rig, id=f"s{seed}")


def test_scene_validation():
    with pytest.raises(DeploymentError):
        StereoScene(torch.zeros(3, 4, 5), torch.zeros(3, 4, 6))
    with pytest.raises(DeploymentError):
        StereoScene(torch.zeros(3, 4, 5), torch.zeros(3, 4, 5), torch.zeros(4, 4))


def test_homography_identity_and_translation():
    h = homography_from_quad((20, 30), PixelQuad.from_box(0, 0, 30, 20))
    np.testing.assert_allclose(h, np.eye(3), atol=1e-12)
    h = homography_from_quad((20, 30), PixelQuad.from_box(10, 5, 30, 20))
    np.testing.assert_allclose(h, [[1, 0, 10], [0, 1, 5], [0, 0, 1]], atol=1e-12)


def test_homography_dlt_residual(rng):
    for _ in range(20):
        base = np.array([[0, 0], [60, 0], [0, 40], [60, 40]], float)
        quad = PixelQuad(base + rng.uniform(-8, 8, size=(4, 2)) + [100, 50])
        h = homography_from_quad((40, 60), quad)
        src = np.array([[-0.5, -0.5], [59.5, -0.5], [-0.5, 39.5], [59.5, 39.5]])
        np.testing.assert_allclose(apply_homography(h, src), quad.corners, atol=1e-6)
        assert np.linalg.det(h) > 0


def test_homography_singular():
    src = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], float)
    collinear = np.array([[0, 0], [1, 1], [2, 2], [3, 3]], float)
    with pytest.raises(DegeneratePlacementError):
        homography_from_points(src, collinear)


def test_bilinear_sample_exact_and_zero_padding():
    img = torch.arange(12, dtype=torch.float64).reshape(1, 3, 4)
    x = torch.tensor([[0.0, 3.0, 1.5, -1.0]])
    y = torch.tensor([[0.0, 2.0, 0.5, 0.0]])
    out = bilinear_sample(img, x, y)[0, 0]
    assert out[0] == 0 and out[1] == 11
    assert out[2] == pytest.approx((1 + 2 + 5 + 6) / 4)
    assert out[3] == 0


def test_quad_mask_box():
    mask = quad_mask(PixelQuad.from_box(3, 4, 10, 6), (20, 20))
    assert int(mask.sum()) == 60
    assert mask[4, 3] and mask[9, 12] and not mask[10, 12]


def test_composite_identity_quad_reproduces_region():
    scene = _scene()
    quad = PixelQuad.from_box(10, 12, 30, 20)
    region = scene.left[:, 12:32, 10:40].clone()
    dep = Deployment(quad, quad.translated(-5), quad_mask(quad, scene.size), 5.0)
    out = composite(scene, region, dep)
    assert torch.equal(out.left, scene.left)


def test_composite_identity_quad_then_extract_bit_exact():
    scene = _scene()
    patch = torch.rand(3, 20, 30, dtype=torch.float64, generator=torch.Generator().manual_seed(3))
    quad = PixelQuad.from_box(10, 12, 30, 20)
    left = warp_into(scene.left, patch, quad)
    assert torch.equal(extract_region(left, quad, (20, 30)), patch)
    assert torch.equal(extract_region(scene.left, quad, (20, 30)), scene.left[:, 12:32, 10:40])


def test_composite_general_quad_round_trip():
    # smooth patch so interpolation error stays small
    yy, xx = torch.meshgrid(torch.linspace(0, 1, 40, dtype=torch.float64),
                            torch.linspace(0, 1, 60, dtype=torch.float64), indexing="ij")
    patch = torch.stack([0.2 + 0.6 * xx, 0.2 + 0.6 * yy, 0.5 + 0.3 * torch.sin(3 * xx * yy)])
    quad = PixelQuad([[20.3, 10.1], [95.7, 14.2], [18.9, 62.4], [93.1, 58.8]])
    img = warp_into(torch.zeros(3, 80, 120, dtype=torch.float64), patch, quad)
    back = extract_region(img, quad, (40, 60))
    err = (back - patch).abs()[:, 2:-2, 2:-2]
    assert float(err.max()) < 0.05


def test_composite_black_patch_darkens_region(small_rig):
    scene = _scene(128, 256, rig=small_rig)
    dep = plan_deployment(small_rig, PatchPlacement(), scene.size)
    out = composite(scene, torch.zeros(3, 64, 91, dtype=torch.float64), dep)
    m = dep.region_mask_left
    assert out.left[:, m].mean() < scene.left[:, m].mean()
    assert float(out.left[:, m].max()) == 0.0


def test_composite_locality(small_rig):
    scene = _scene(128, 256, rig=small_rig)
    dep = plan_deployment(small_rig, PatchPlacement(rot_y_deg=20), scene.size)
    out = composite(scene, torch.rand(3, 64, 91, dtype=torch.float64), dep)
    for img_in, img_out, quad in ((scene.left, out.left, dep.quad_left), (scene.right, out.right, dep.quad_right)):
        x0, y0, x1, y1 = quad.bounds()
        keep = torch.ones(scene.size, dtype=torch.bool)
        keep[max(int(np.floor(y0)) - 2, 0):int(np.ceil(y1)) + 3, max(int(np.floor(x0)) - 2, 0):int(np.ceil(x1)) + 3] = False
        assert torch.equal(img_in[:, keep], img_out[:, keep])


def test_plan_deployment_frontal(kitti_rig):
    dep = plan_deployment(kitti_rig, PatchPlacement())
    assert dep.patch_gt_disparity == pytest.approx(77.76)
    np.testing.assert_allclose(dep.quad_right.corners, dep.quad_left.translated(-77.76).corners, atol=1e-3)
    assert torch.equal(dep.region_mask_left, quad_mask(dep.quad_left, (375, 1242)))
    assert dep.clipped_fraction == 0.0


def test_plan_deployment_clipping(small_rig, caplog):
    # patch pushed partly out of the frame
    with caplog.at_level(logging.WARNING):
        dep = plan_deployment(small_rig, PatchPlacement(shift_m=(1.3, 0.0)))
    assert 0 < dep.clipped_fraction <= 0.2
    assert "clipped" in caplog.text
    with pytest.raises(DeploymentError):
        plan_deployment(small_rig, PatchPlacement(shift_m=(2.0, 0.0)))
    with pytest.raises(DeploymentError):
        plan_deployment(small_rig, PatchPlacement(shift_m=(30.0, 0.0)))


def test_clipped_fraction_values():
    assert clipped_fraction(PixelQuad.from_box(0, 0, 10, 10), (20, 20)) == 0.0
    assert clipped_fraction(PixelQuad.from_box(-5, 0, 10, 10), (20, 20)) == pytest.approx(0.5)


def test_composite_gradient_fd(small_rig):
    scene = _scene(128, 256, rig=small_rig)
    dep = plan_deployment(small_rig, PatchPlacement(rot_x_deg=15, rot_y_deg=-10), scene.size)
    h_p, w_p = 64, 91
    spec = GridSpec((4, 5), mode="tiled")
    el = random_element(element_size(h_p, w_p, spec), 0, dtype=torch.float64).requires_grad_()

    def f(e):
        return composite(scene, assemble(e, spec, h_p, w_p), dep).left.mean()

    f(el).backward()
    base = el.detach()
    g = torch.Generator().manual_seed(0)
    for _ in range(8):
        idx = tuple(int(torch.randint(0, s, (1,), generator=g)) for s in base.shape)
        plus, minus = base.clone(), base.clone()
        plus[idx] += 1e-4
        minus[idx] -= 1e-4
        fd = float((f(plus) - f(minus)) / 2e-4)
        assert float(el.grad[idx]) == pytest.approx(fd, rel=1e-3, abs=1e-12)


def test_deployment_translation(small_rig):
    dep = plan_deployment(small_rig, PatchPlacement(), (128, 256))
    moved = dep.translated(-40, -10, (100, 200))
    np.testing.assert_allclose(moved.quad_left.corners, dep.quad_left.corners - [40, 10])
    assert int(moved.region_mask_left.sum()) == int(dep.region_mask_left.sum())

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stereopatch.errors import DegeneratePlacementError, DomainError, PatchTooSmallError, PlacementError
from stereopatch.geometry import (CameraRig, PatchPlacement, PixelQuad, corner_points_3d, depth_from_disparity,
                                  mirror_quad_x, patch_pixel_size, placement_quads, project_corners,
                                  quad_disparity, rotation_x, rotation_y)


def test_rig_invariants(kitti_rig):
    assert kitti_rig.rect_rotation.shape == (4, 4)
    assert kitti_rig.principal_point == (620.0, 187.0)
    bad = kitti_rig.proj_left.copy()
    bad[2, 0] = 0.1
    with pytest.raises(DomainError):
        CameraRig(bad, kitti_rig.proj_right, np.eye(4), 720.0, 0.54, (375, 1242))
    with pytest.raises(DomainError):
        CameraRig(kitti_rig.proj_left, kitti_rig.proj_right, np.eye(4), 700.0, 0.54, (375, 1242))
    with pytest.raises(DomainError):
        CameraRig(kitti_rig.proj_left, kitti_rig.proj_right, np.eye(4), 720.0, 0.0, (375, 1242))


def test_rig_disparity_from_both_projections(kitti_rig):
    for z in (3.0, 5.0, 17.5, 80.0):
        pt = np.array([0.3, -0.2, z, 1.0])
        ul = kitti_rig.proj_left @ pt
        ur = kitti_rig.proj_right @ pt
        assert abs(ul[0] / ul[2] - ur[0] / ur[2] - 720 * 0.54 / z) < 1e-4


def test_corner_points_frontal():
    pts = corner_points_3d(PatchPlacement(1.26, 0.891, 5.0))
    np.testing.assert_allclose(pts[0], [-0.63, -0.4455, 5.0, 1.0])
    np.testing.assert_allclose(pts[3], [0.63, 0.4455, 5.0, 1.0])
    assert np.all(pts[:, 2] == 5.0)


def test_corner_points_shift():
    pts = corner_points_3d(PatchPlacement(1.0, 0.5, 8.0, shift_m=(0.4, -0.1)))
    np.testing.assert_allclose(pts[:, :2].mean(0), [0.4, -0.1])


def test_corner_points_rotation_about_center():
    p = PatchPlacement(1.0, 1.0, 6.0, shift_m=(0.2, 0.1), rot_x_deg=20, rot_y_deg=-35)
    pts = corner_points_3d(p)[:, :3]
    np.testing.assert_allclose(pts.mean(0), [0.2, 0.1, 6.0], atol=1e-12)
    # X first, then Y
    local = np.array([-0.5, -0.5, 0.0])
    expected = rotation_y(-35) @ rotation_x(20) @ local + [0.2, 0.1, 6.0]
    np.testing.assert_allclose(pts[0], expected, atol=1e-12)


def test_corner_points_edge_on_is_degenerate():
    with pytest.raises(DegeneratePlacementError):
        corner_points_3d(PatchPlacement(rot_y_deg=90))
    with pytest.raises(DegeneratePlacementError):
        corner_points_3d(PatchPlacement(rot_x_deg=-90))


def test_corner_points_behind_camera():
    with pytest.raises(PlacementError):
        corner_points_3d(PatchPlacement(width_m=20.0, depth_m=1.0, rot_y_deg=60))


def test_project_hand_computed(kitti_rig):
    pts = np.tile([0.0, 0.0, 5.0, 1.0], (4, 1)) + np.array([[-1, -1, 0, 0], [1, -1, 0, 0],
                                                             [-1, 1, 0, 0], [1, 1, 0, 0]])
    ql = project_corners(kitti_rig, pts, "left")
    qr = project_corners(kitti_rig, pts, "right")
    # TL = (-1,-1,5): u = (720*-1 + 620*5)/5 = 476, v = (720*-1 + 187*5)/5 = 43
    np.testing.assert_allclose(ql.top_left, (476.0, 43.0), atol=1e-9)
    np.testing.assert_allclose(qr.top_left, (476.0 - 77.76, 43.0), atol=1e-9)
    np.testing.assert_allclose(quad_disparity(ql, qr), [77.76] * 4, atol=1e-9)


def test_project_homogeneous_scale_invariance(kitti_rig):
    pts = corner_points_3d(PatchPlacement(rot_y_deg=25))
    a = project_corners(kitti_rig, pts, "right")
    b = project_corners(kitti_rig, 2.0 * pts, "right")
    np.testing.assert_allclose(a.corners, b.corners, rtol=0, atol=1e-9)


def test_project_degenerate_quad(kitti_rig):
    tiny = corner_points_3d(PatchPlacement(0.01, 0.01, 5.0))
    with pytest.raises(DegeneratePlacementError):
        project_corners(kitti_rig, tiny, "left")


def test_project_rejects_bad_side(kitti_rig):
    with pytest.raises(DomainError):
        project_corners(kitti_rig, corner_points_3d(PatchPlacement()), "center")


def test_patch_pixel_size_examples(kitti_rig):
    ql, _ = placement_quads(kitti_rig, PatchPlacement(1.26, 0.891, 5.0))
    assert patch_pixel_size(ql) == (128, 181)
    ql, _ = placement_quads(kitti_rig, PatchPlacement(1.26, 0.891, 10.0))
    assert patch_pixel_size(ql) == (64, 91)
    assert patch_pixel_size(PixelQuad.from_box(0, 0, 100, 100)) == (100, 100)


def test_patch_pixel_size_too_small():
    with pytest.raises(PatchTooSmallError):
        patch_pixel_size(PixelQuad.from_box(0, 0, 7, 40))


def test_pixel_size_monotone_in_depth(kitti_rig):
    sizes = [patch_pixel_size(placement_quads(kitti_rig, PatchPlacement(depth_m=z))[0]) for z in range(4, 30)]
    for a, b in zip(sizes, sizes[1:]):
        assert b[0] <= a[0] and b[1] <= a[1]


def test_depth_from_disparity(kitti_rig):
    assert depth_from_disparity(77.76, kitti_rig) == pytest.approx(5.0, abs=1e-12)
    assert depth_from_disparity(0.0, kitti_rig) == math.inf
    assert depth_from_disparity(2 * 31.0, kitti_rig) == pytest.approx(depth_from_disparity(31.0, kitti_rig) / 2)
    np.testing.assert_allclose(depth_from_disparity(np.array([38.88, 77.76]), kitti_rig), [10.0, 5.0])
    with pytest.raises(DomainError):
        depth_from_disparity(-1.0, kitti_rig)


@settings(max_examples=60, deadline=None)
@given(z=st.floats(3.0, 60.0), sx=st.floats(-1.0, 1.0), sy=st.floats(-0.5, 0.5))
def test_frontal_round_trip_disparity(z, sx, sy):
    rig = CameraRig.from_intrinsics(720.0, 0.54, (375, 1242))
    ql, qr = placement_quads(rig, PatchPlacement(depth_m=z, shift_m=(sx, sy)))
    np.testing.assert_allclose(quad_disparity(ql, qr), [720 * 0.54 / z] * 4, atol=1e-3)
    np.testing.assert_allclose(ql.corners[:, 1], qr.corners[:, 1], atol=1e-9)


@pytest.mark.parametrize("axis", ["x", "y"])
def test_rotation_continuity(kitti_rig, axis):
    prev = None
    for deg in range(-60, 61):
        kw = {"rot_x_deg": deg} if axis == "x" else {"rot_y_deg": deg}
        quad = placement_quads(kitti_rig, PatchPlacement(**kw))[0]
        if prev is not None:
            assert np.abs(quad.corners - prev.corners).max() < 2.0
        prev = quad


def test_y_rotation_mirror_symmetry():
    rig = CameraRig.from_intrinsics(720.0, 0.54, (375, 1242))
    cx = rig.principal_point[0]
    a = placement_quads(rig, PatchPlacement(rot_y_deg=25))[0]
    b = placement_quads(rig, PatchPlacement(rot_y_deg=-25))[0]
    np.testing.assert_allclose(mirror_quad_x(a, cx).corners, b.corners, atol=1e-9)


def test_quad_properties():
    q = PixelQuad.from_box(10, 20, 30, 40)
    assert q.signed_area == pytest.approx(1200.0)
    assert q.is_simple()
    assert q.bounds() == (9.5, 19.5, 39.5, 59.5)
    bowtie = PixelQuad([[0, 0], [10, 0], [10, 10], [0, 10]])  # TL, TR, BL, BR crossed
    assert not bowtie.is_simple()

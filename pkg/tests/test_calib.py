import numpy as np
import pytest

from stereopatch.calib import describe_rig, parse_kitti_calibration, serialize_kitti_calibration
from stereopatch.errors import CalibrationParseError

MINIMAL = """\
P_rect_02: 720 0 620 0 0 720 187 0 0 0 1 0
P_rect_03: 720 0 620 -388.8 0 720 187 0 0 0 1 0
R_rect_00: 1 0 0 0 1 0 0 0 1
"""

# abbreviated real-world layout with the many unrelated keys KITTI files carry
FULL = """\
calib_time: 09-Jan-2012 13:57:47
corner_dist: 9.950000e-02
S_00: 1.392000e+03 5.120000e+02
K_00: 9.842439e+02 0.000000e+00 6.900000e+02 0.000000e+00 9.808141e+02 2.331966e+02 0.000000e+00 0.000000e+00 1.000000e+00
S_rect_02: 1.242000e+03 3.750000e+02
R_rect_00: 9.999239e-01 9.837760e-03 -7.445048e-03 -9.869795e-03 9.999421e-01 -4.278459e-03 7.402527e-03 4.351614e-03 9.999631e-01
P_rect_02: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03
P_rect_03: 7.215377e+02 0.000000e+00 6.095593e+02 -3.395242e+02 0.000000e+00 7.215377e+02 1.728540e+02 2.199936e+00 0.000000e+00 0.000000e+00 1.000000e+00 2.729905e-03
"""


def test_minimal_file():
    rig = parse_kitti_calibration(MINIMAL)
    assert rig.focal_px == 720.0
    assert rig.baseline_m == pytest.approx(388.8 / 720)
    assert rig.image_size == (375, 1242)
    np.testing.assert_array_equal(rig.rect_rotation, np.eye(4))


def test_full_file_ignores_unrelated_keys():
    rig = parse_kitti_calibration(FULL)
    assert rig.image_size == (375, 1242)
    assert rig.focal_px == pytest.approx(721.5377)
    assert rig.baseline_m == pytest.approx((44.85728 + 339.5242) / 721.5377)
    assert rig.rect_rotation[3, 3] == 1.0 and rig.rect_rotation[0, 1] == pytest.approx(9.837760e-03)


@pytest.mark.parametrize("text, needle", [
    (MINIMAL.replace("R_rect_00: 1 0 0 0 1 0 0 0 1", "R_rect_00: 1 0 0 0 1 0 0 0"), "line 3"),
    (MINIMAL.replace("-388.8", "abc"), "line 2"),
    ("\n".join(MINIMAL.splitlines()[:2]), "R_rect_00"),
    (MINIMAL + "garbage line\n", "line 4"),
])
def test_parse_errors_name_the_problem(text, needle):
    with pytest.raises(CalibrationParseError, match=needle):
        parse_kitti_calibration(text)


def test_arity_error_mentions_count():
    with pytest.raises(CalibrationParseError, match="9 values, found 8"):
        parse_kitti_calibration(MINIMAL.replace("R_rect_00: 1 0 0 0 1 0 0 0 1", "R_rect_00: 1 0 0 0 1 0 0 0"))


def test_round_trip_six_significant_digits():
    rig = parse_kitti_calibration(FULL)
    back = parse_kitti_calibration(serialize_kitti_calibration(rig))
    for a, b in ((rig.proj_left, back.proj_left), (rig.proj_right, back.proj_right),
                 (rig.rect_rotation, back.rect_rotation)):
        np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-12)
    assert back.image_size == rig.image_size
    text = serialize_kitti_calibration(rig)
    src = {l.split(":")[0]: l.split(":")[1].split() for l in FULL.splitlines()}
    out = {l.split(":")[0]: l.split(":")[1].split() for l in text.splitlines()}
    for key in ("P_rect_02", "P_rect_03", "R_rect_00", "S_rect_02"):
        assert [f"{float(v):.6g}" for v in src[key]] == [f"{float(v):.6g}" for v in out[key]]


def test_alternate_keys():
    text = MINIMAL.replace("P_rect_02", "P_rect_101").replace("P_rect_03", "P_rect_103")
    rig = parse_kitti_calibration(text, left_key="P_rect_101", right_key="P_rect_103")
    assert rig.baseline_m == pytest.approx(0.54)


def test_describe_rig():
    out = describe_rig(parse_kitti_calibration(MINIMAL))
    assert "baseline_m: 0.540000" in out and "375 x 1242" in out

import numpy as np
import pytest
import torch

from stereopatch.geometry import CameraRig

torch.set_num_threads(1)


@pytest.fixture
def kitti_rig():
    """f=720 px, B=0.54 m rig with the principal point of a KITTI frame."""
    left = np.array([[720.0, 0, 620, 0], [0, 720, 187, 0], [0, 0, 1, 0]])
    right = left.copy()
    right[0, 3] = -388.8
    return CameraRig(left, right, np.eye(3), 720.0, 0.54, (375, 1242))


@pytest.fixture
def small_rig():
    return CameraRig.from_intrinsics(360.0, 0.54, (128, 256))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# the desk-scale attack suite: half-resolution rig, background and mid planes,
# and a board at the patch depth behind the default 5 m placement
def suite_spec():
    from stereopatch.synthetic import PlaneLayer, SyntheticSceneSpec

    return SyntheticSceneSpec(height=128, width=256, focal_px=360.0, d_max=48,
                              planes=(PlaneLayer(25.0), PlaneLayer(12.0, (10, 5, 60, 50)),
                                      PlaneLayer(5.0, (72, 22, 112, 84))))


@pytest.fixture(scope="session")
def small_suite():
    from stereopatch.synthetic import generate_synthetic_scene

    return [generate_synthetic_scene(suite_spec(), s, f"suite-{s}") for s in range(8)]


@pytest.fixture(scope="session")
def suite_model():
    from stereopatch.matcher import BuiltinMatcher

    return BuiltinMatcher(d_max=48)


@pytest.fixture(scope="session")
def suite_placement():
    from stereopatch.geometry import PatchPlacement

    return PatchPlacement()


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(number, passed, detail)."""
    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])

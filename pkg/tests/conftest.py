import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from poseforge.geometry import CameraIntrinsics, Pose


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cam():
    return CameraIntrinsics(200.0, 200.0, 64.0, 64.0, 128, 128)


def random_pose(rng, depth=4.0, spread=0.3):
    R = Rotation.random(random_state=rng).as_matrix()
    t = np.array([rng.uniform(-spread, spread), rng.uniform(-spread, spread), depth])
    return Pose.from_matrix(R, t)

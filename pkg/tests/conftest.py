import numpy as np
import pytest

from fisheyemap.geometry import FisheyeCamera, Pose
from fisheyemap.pipeline import generate_dataset, preset_scene


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small urban dataset (256x136, 8 frames) shared by pipeline tests."""
    scene, rig, traj = preset_scene("urban", 256, 136)
    out = tmp_path_factory.mktemp("ds") / "urban8"
    generate_dataset(scene, rig, traj[:8], out)
    return out


@pytest.fixture
def cam512():
    return FisheyeCamera(xi=1.0, fx=220.0, fy=220.0, cx=256.0, cy=136.0,
                         width=512, height=272)


def random_pose(rng) -> Pose:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return Pose.from_quaternion(rng.normal(scale=2.0, size=3), *q)

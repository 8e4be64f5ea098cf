import numpy as np
import pytest

from twolayer_pose import geom, layers, scenes

LM_INTRINSICS = geom.CameraIntrinsics(572.4, 573.6, 325.3, 242.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def unit_cube():
    return scenes.make_box((1.0, 1.0, 1.0))


@pytest.fixture(scope="session")
def small_cube():
    return scenes.make_box((0.1, 0.1, 0.1))


@pytest.fixture(scope="session")
def sphere_mesh():
    return scenes.make_icosphere(0.1, 2)


@pytest.fixture(scope="session")
def center_cam():
    """64x64 camera whose principal point is exactly a pixel center."""
    return geom.CameraIntrinsics(100.0, 100.0, 31.5, 31.5)


@pytest.fixture(scope="session")
def render_cfg():
    return layers.RenderConfig(resolution=(64, 64))


@pytest.fixture(scope="session")
def scene_pool():
    """A reusable pool of 30 random rendered scenes."""
    rng = np.random.default_rng(7)
    return [scenes.sample_scene(rng) for _ in range(30)]


def random_rigid_pose(rng, t_z=(0.5, 5.0)):
    R = scenes.random_rotation(rng)
    t = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(*t_z)])
    return geom.RigidPose(R, t)

import numpy as np
import pytest

from archnerf.camera import RigConfig
from archnerf.scene import build_scene, render_rig


@pytest.fixture(scope="session")
def bedroom():
    return build_scene("bedroom_like", 0)


@pytest.fixture(scope="session")
def small_rig():
    return RigConfig(stations=(2, 1), width=40, height=72, seed=3)


@pytest.fixture(scope="session")
def small_views(bedroom, small_rig):
    return render_rig(bedroom, small_rig)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

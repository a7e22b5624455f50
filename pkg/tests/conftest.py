import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from qpguard.arm_model import default_arm, load_arm, data_path  # noqa: E402
from qpguard.geometry import Scene, load_scene  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def arm():
    return default_arm()


@pytest.fixture(scope="session")
def arm7():
    return load_arm(data_path("arm_7dof.json"))


@pytest.fixture(scope="session")
def middle_scene():
    return load_scene(data_path("scene_middle.json"))


@pytest.fixture(scope="session")
def empty_scene(middle_scene):
    return Scene(goal_center=middle_scene.goal_center, goal_half_extents=middle_scene.goal_half_extents)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

os.environ.setdefault("CONTACTAWARE_LOG_DIR", str(Path(tempfile.gettempdir()) / "contactaware-test-logs"))
os.environ.setdefault("CONTACTAWARE_OUTPUT_DIR", str(Path(tempfile.gettempdir()) / "contactaware-test-runs"))
os.environ.setdefault("CONTACTAWARE_LOG_LEVEL", "WARNING")

from contactaware.schemas import ScenarioSpec, load_scenario  # noqa: E402
from contactaware.services.geometry import Circle, HalfPlane, Scene  # noqa: E402
from contactaware.services.kinematics import BodyPoint, RobotModel, end_effector_point  # noqa: E402

PRESET_DIR = ROOT / "contactaware" / "scenarios"


@pytest.fixture()
def arm() -> RobotModel:
    """Three-link arm used across the unit tests."""

    return RobotModel(
        link_lengths=[0.5, 0.4, 0.3],
        joint_stiffness=[800.0, 600.0, 400.0],
        rate_bound=0.002,
    )


@pytest.fixture()
def tip(arm: RobotModel) -> BodyPoint:
    return end_effector_point(arm)


@pytest.fixture()
def floor_scene(arm: RobotModel) -> Scene:
    """A floor at y = -0.1 touched only by the end effector."""

    return Scene(obstacles=(HalfPlane((0.0, 1.0), -0.1),), collision_points=(end_effector_point(arm),))


@pytest.fixture()
def edge_scene() -> Scene:
    return Scene(
        obstacles=(Circle((0.7, -0.07), 0.03),),
        collision_points=(BodyPoint(2, (0.2, 0.0)),),
    )


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def _preset(name: str) -> ScenarioSpec:
    return load_scenario(PRESET_DIR / name)


@pytest.fixture()
def edge_press() -> ScenarioSpec:
    return _preset("edge_press.json")


@pytest.fixture()
def edge_press_task() -> ScenarioSpec:
    return _preset("edge_press_task.json")


@pytest.fixture()
def slide_and_release() -> ScenarioSpec:
    return _preset("slide_and_release.json")


@pytest.fixture()
def wall_slide() -> ScenarioSpec:
    return _preset("wall_slide.json")

import numpy as np
import pytest
from hypothesis import assume, given, settings as hypothesis_settings
from hypothesis import strategies as st

from contactaware.core.exceptions import ValidationError
from contactaware.services.geometry import (
    Capsule,
    Circle,
    HalfPlane,
    Scene,
    detect_contacts,
    min_signed_distance,
    signed_distance,
)
from contactaware.services.kinematics import BodyPoint, RobotModel, sample_link_points


def test_half_plane_distance_normal_and_witness() -> None:
    floor = HalfPlane((0.0, 2.0), -0.1)
    query = signed_distance(floor, (0.3, 0.2))
    assert query.distance == pytest.approx(0.3)
    np.testing.assert_allclose(query.normal, [0.0, 1.0])
    np.testing.assert_allclose(query.witness, [0.3, -0.1])


def test_circle_reports_negative_distance_inside() -> None:
    circle = Circle((0.0, 0.0), 0.5)
    query = circle.signed_distance((0.0, 0.2))
    assert query.distance == pytest.approx(-0.3)
    np.testing.assert_allclose(query.normal, [0.0, 1.0])
    np.testing.assert_allclose(query.witness, [0.0, 0.5])


def test_circle_centre_uses_deterministic_normal() -> None:
    query = Circle((1.0, 1.0), 0.2).signed_distance((1.0, 1.0))
    assert query.distance == pytest.approx(-0.2)
    np.testing.assert_allclose(query.normal, [1.0, 0.0])


def test_capsule_uses_closest_axis_point() -> None:
    capsule = Capsule((0.0, 0.0), (1.0, 0.0), 0.1)
    side = capsule.signed_distance((0.5, 0.3))
    assert side.distance == pytest.approx(0.2)
    np.testing.assert_allclose(side.normal, [0.0, 1.0])
    cap = capsule.signed_distance((1.3, 0.0))
    assert cap.distance == pytest.approx(0.2)
    np.testing.assert_allclose(cap.normal, [1.0, 0.0])


@pytest.mark.parametrize(
    "factory",
    [
        lambda: HalfPlane((0.0, 0.0), 0.0),
        lambda: Circle((0.0, 0.0), 0.0),
        lambda: Capsule((0.0, 0.0), (1.0, 0.0), -1.0),
        lambda: Circle((0.0, 0.0), 1.0, friction_coefficient=-0.1),
        lambda: Circle((0.0, 0.0), 1.0, contact_stiffness=0.0),
        lambda: Circle((0.0, 0.0), 1.0, tangential_stiffness=0.0),
    ],
)
def test_invalid_obstacles_raise(factory) -> None:
    with pytest.raises(ValidationError):
        factory()


def test_detect_contacts_orders_by_point_then_obstacle(arm) -> None:
    scene = Scene(
        obstacles=(HalfPlane((0.0, 1.0), 0.0), Circle((1.2, 0.0), 0.05)),
        collision_points=(BodyPoint(3, (0.3, 0.0)), BodyPoint(2, (0.4, 0.0))),
    )
    found = detect_contacts(scene, arm, [0.0, 0.0, 0.0], activation_distance=1e-4)
    assert [c.key for c in found] == [(0, 0), (0, 1), (1, 0)]
    assert found[1].signed_distance == pytest.approx(-0.05)
    assert found[1].penetration_depth == pytest.approx(0.05)


def test_detect_contacts_respects_activation_distance(arm, floor_scene) -> None:
    assert detect_contacts(floor_scene, arm, [0.0, 0.0, 0.0], activation_distance=0.05) == []
    assert len(detect_contacts(floor_scene, arm, [0.0, 0.0, 0.0], activation_distance=0.1)) == 1
    with pytest.raises(ValidationError):
        detect_contacts(floor_scene, arm, [0.0, 0.0, 0.0], activation_distance=-1.0)


def test_min_signed_distance(arm, floor_scene) -> None:
    assert min_signed_distance(floor_scene, arm, [0.0, 0.0, 0.0]) == pytest.approx(0.1)
    empty = Scene(obstacles=(), collision_points=())
    assert min_signed_distance(empty, arm, [0.0, 0.0, 0.0]) == float("inf")


def test_scene_rejects_points_on_missing_links(arm) -> None:
    scene = Scene(obstacles=(), collision_points=(BodyPoint(5, (0.0, 0.0)),))
    with pytest.raises(ValidationError):
        scene.validate_for(arm)


def test_mid_link_point_above_the_edge(arm, edge_scene) -> None:
    assert min_signed_distance(edge_scene, arm, [0.0, 0.0, 0.0]) == pytest.approx(0.04)
    found = detect_contacts(edge_scene, arm, [0.0, 0.0, 0.0], activation_distance=0.05)
    assert len(found) == 1
    assert (found[0].point_index, found[0].obstacle_index) == (0, 0)
    np.testing.assert_allclose(found[0].normal, [0.0, 1.0], atol=1e-12)
    assert found[0].signed_distance == pytest.approx(0.04)
    assert detect_contacts(edge_scene, arm, [0.0, 0.0, 0.0], activation_distance=0.01) == []


shapes = [
    HalfPlane((0.6, 0.8), 0.2),
    Circle((0.3, -0.2), 0.4),
    Capsule((-0.5, 0.1), (0.7, 0.4), 0.15),
]
points = st.tuples(st.floats(-2.0, 2.0, allow_nan=False), st.floats(-2.0, 2.0, allow_nan=False))


def _axis_distance(obstacle, point: np.ndarray) -> float:
    if isinstance(obstacle, Circle):
        return float(np.linalg.norm(point - obstacle.center))
    if isinstance(obstacle, Capsule):
        return signed_distance(obstacle, point).distance + obstacle.radius
    return float("inf")


@hypothesis_settings(max_examples=80, deadline=None)
@given(point=points, index=st.integers(0, len(shapes) - 1))
def test_normal_is_the_distance_gradient(point, index) -> None:
    obstacle = shapes[index]
    point = np.array(point)
    assume(_axis_distance(obstacle, point) > 0.05)
    step = 1e-6
    gradient = np.zeros(2)
    for k in range(2):
        bump = np.zeros(2)
        bump[k] = step
        gradient[k] = (
            signed_distance(obstacle, point + bump).distance - signed_distance(obstacle, point - bump).distance
        ) / (2 * step)
    np.testing.assert_allclose(gradient, signed_distance(obstacle, point).normal, atol=1e-6)


@hypothesis_settings(max_examples=80, deadline=None)
@given(point=points, index=st.integers(1, 2))
def test_witness_lies_on_the_boundary(point, index) -> None:
    obstacle = shapes[index]
    result = signed_distance(obstacle, np.array(point))
    assert abs(signed_distance(obstacle, result.witness).distance) <= 1e-9


@hypothesis_settings(max_examples=40, deadline=None)
@given(
    q=st.lists(st.floats(-np.pi, np.pi, allow_nan=False), min_size=3, max_size=3),
    near=st.floats(0.0, 0.5),
    extra=st.floats(0.0, 0.5),
)
def test_detection_grows_with_the_activation_distance(q, near, extra) -> None:
    model = RobotModel([0.5, 0.4, 0.3], [800.0, 600.0, 400.0], 0.002)
    scene = Scene(obstacles=tuple(shapes), collision_points=tuple(sample_link_points(model, 3)))
    small = {c.key for c in detect_contacts(scene, model, q, near)}
    large = {c.key for c in detect_contacts(scene, model, q, near + extra)}
    assert small <= large

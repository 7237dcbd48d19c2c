"""Pydantic models for scenario files (schema version 1)."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, field_validator, model_validator

from contactaware.core.exceptions import ContactAwareError, ScenarioError
from contactaware.services.artifacts import config_hash
from contactaware.services.contact_sensing import DampingState, SensingConfig
from contactaware.services.controllers import ControllerConfig, TrackingObjective
from contactaware.services.geometry import Capsule, Circle, HalfPlane, Obstacle, Scene
from contactaware.services.kinematics import BodyPoint, RobotModel, end_effector_point, sample_link_points
from contactaware.services.quasistatic import SimulatorConfig
from contactaware.services.trajectory import JointTrajectory, TaskTrajectory

SCHEMA_VERSION = 1

Point2 = tuple[float, float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RobotSpec(_Strict):
    link_lengths: list[float] = Field(min_length=1)
    joint_stiffness: list[float] = Field(min_length=1)
    rate_bound: Union[float, list[float]]
    joint_limits: Optional[list[tuple[float, float]]] = None
    base_pose: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @model_validator(mode="after")
    def validate_dimensions(self) -> "RobotSpec":
        n = len(self.link_lengths)
        if len(self.joint_stiffness) != n:
            raise ValueError("joint_stiffness must have one entry per link")
        if isinstance(self.rate_bound, list) and len(self.rate_bound) != n:
            raise ValueError("rate_bound must be a scalar or have one entry per link")
        if self.joint_limits is not None and len(self.joint_limits) != n:
            raise ValueError("joint_limits must have one interval per link")
        return self

    def build(self) -> RobotModel:
        return RobotModel(
            link_lengths=self.link_lengths,
            joint_stiffness=self.joint_stiffness,
            rate_bound=self.rate_bound,
            joint_limits=self.joint_limits,
            base_pose=self.base_pose,
        )


class _ObstacleBase(_Strict):
    friction_coefficient: float = Field(0.0, ge=0.0)
    contact_stiffness: float = Field(1e4, gt=0.0)
    tangential_stiffness: float = Field(1e4, gt=0.0)


class HalfPlaneSpec(_ObstacleBase):
    kind: Literal["half_plane"]
    normal: Point2
    offset: float

    def build(self) -> Obstacle:
        return HalfPlane(
            self.normal,
            self.offset,
            friction_coefficient=self.friction_coefficient,
            contact_stiffness=self.contact_stiffness,
            tangential_stiffness=self.tangential_stiffness,
        )


class CircleSpec(_ObstacleBase):
    kind: Literal["circle"]
    center: Point2
    radius: float = Field(gt=0.0)

    def build(self) -> Obstacle:
        return Circle(
            self.center,
            self.radius,
            friction_coefficient=self.friction_coefficient,
            contact_stiffness=self.contact_stiffness,
            tangential_stiffness=self.tangential_stiffness,
        )


class CapsuleSpec(_ObstacleBase):
    kind: Literal["capsule"]
    start: Point2
    end: Point2
    radius: float = Field(gt=0.0)

    def build(self) -> Obstacle:
        return Capsule(
            self.start,
            self.end,
            self.radius,
            friction_coefficient=self.friction_coefficient,
            contact_stiffness=self.contact_stiffness,
            tangential_stiffness=self.tangential_stiffness,
        )


ObstacleSpec = Annotated[Union[HalfPlaneSpec, CircleSpec, CapsuleSpec], Field(discriminator="kind")]


class PointSpec(_Strict):
    link: int = Field(ge=1)
    offset: Point2

    def build(self) -> BodyPoint:
        return BodyPoint(self.link, self.offset)


class CollisionSpec(_Strict):
    points_per_link: int = Field(4, ge=0)
    links: Optional[list[int]] = None
    points: list[PointSpec] = Field(default_factory=list)


class SceneSpec(_Strict):
    obstacles: list[ObstacleSpec] = Field(default_factory=list)
    collision: CollisionSpec = Field(default_factory=CollisionSpec)

    def build(self, model: RobotModel) -> Scene:
        points: list[BodyPoint] = []
        if self.collision.points_per_link:
            points.extend(sample_link_points(model, self.collision.points_per_link, self.collision.links))
        points.extend(point.build() for point in self.collision.points)
        scene = Scene(obstacles=tuple(o.build() for o in self.obstacles), collision_points=tuple(points))
        scene.validate_for(model)
        return scene


class JointKnot(_Strict):
    time: float = Field(ge=0.0)
    q: list[float]


class TaskWaypoint(_Strict):
    time: float = Field(ge=0.0)
    position: Point2


class ReferenceSpec(_Strict):
    mode: Literal["joint", "task"] = "joint"
    knots: list[JointKnot] = Field(default_factory=list)
    initial_q: Optional[list[float]] = None
    waypoints: list[TaskWaypoint] = Field(default_factory=list)
    body_point: Optional[PointSpec] = None

    @model_validator(mode="after")
    def validate_knots(self) -> "ReferenceSpec":
        times = [k.time for k in self.knots] if self.mode == "joint" else [w.time for w in self.waypoints]
        if not times:
            raise ValueError(f"{self.mode} reference needs at least one knot")
        if times[0] != 0.0:
            raise ValueError("reference knots must start at time 0")
        if any(later <= earlier for earlier, later in zip(times, times[1:])):
            raise ValueError("reference knot times must be strictly increasing")
        if self.mode == "task" and self.initial_q is None:
            raise ValueError("task references need initial_q")
        return self

    def dimension(self) -> int:
        if self.mode == "task":
            return len(self.initial_q or [])
        widths = {len(k.q) for k in self.knots}
        if len(widths) != 1:
            raise ValueError("all joint knots must have the same dimension")
        return widths.pop()

    def build(self) -> JointTrajectory | TaskTrajectory:
        if self.mode == "task":
            return TaskTrajectory(
                times=[w.time for w in self.waypoints],
                positions=[w.position for w in self.waypoints],
                initial_q=self.initial_q,
            )
        return JointTrajectory(times=[k.time for k in self.knots], knots=[k.q for k in self.knots])


class DampingSpec(_Strict):
    a: float = Field(5.0, gt=0.0)
    alpha: float = Field(0.9, gt=0.0, le=1.0)
    w_max: float = Field(10.0, ge=0.0)
    filter: Literal["fir", "iir"] = "fir"

    def build(self) -> DampingState:
        return DampingState(a=self.a, alpha=self.alpha, w_max=self.w_max, filter=self.filter)


ControllerName = Literal["greedy", "nullspace", "frictionless_qp", "frictional_qp"]


class ControllerSpec(_Strict):
    name: ControllerName = "frictional_qp"
    epsilon: float = Field(1e-2, gt=0.0)
    lambda_max: float = Field(15.0, gt=0.0)
    lambda_target: Optional[float] = Field(None, ge=0.0)
    damping: DampingSpec = Field(default_factory=DampingSpec)
    task_regularization: float = Field(1e-3, gt=0.0)
    dls_damping: float = Field(1e-2, gt=0.0)
    position_weight: float = Field(1.0, gt=0.0)

    def build(self, model: RobotModel, reference: ReferenceSpec) -> ControllerConfig:
        if reference.mode == "task":
            point = reference.body_point.build() if reference.body_point else end_effector_point(model)
            objective = TrackingObjective(mode="task", body_point=point, position_weight=self.position_weight)
        else:
            objective = TrackingObjective()
        return ControllerConfig(
            epsilon=self.epsilon,
            lambda_max=self.lambda_max,
            lambda_target=self.lambda_target,
            objective=objective,
            task_regularization=self.task_regularization,
            dls_damping=self.dls_damping,
        )


class SensingSpec(_Strict):
    f_threshold: float = Field(5.0, ge=0.0)
    direction_noise_std: float = Field(0.0, ge=0.0)
    magnitude_noise_std: float = Field(0.0, ge=0.0)
    point_noise_std: float = Field(0.0, ge=0.0)
    latency_ticks: int = Field(0, ge=0)

    def build(self, seed: int) -> SensingConfig:
        return SensingConfig(
            f_threshold=self.f_threshold,
            direction_noise_std=self.direction_noise_std,
            magnitude_noise_std=self.magnitude_noise_std,
            point_noise_std=self.point_noise_std,
            rng_seed=seed,
            latency_ticks=self.latency_ticks,
        )


class SimulationSpec(_Strict):
    activation_distance: Optional[float] = Field(None, ge=0.0)
    linearization_margin: Optional[float] = Field(None, gt=0.0)
    max_iterations: Optional[int] = Field(None, ge=1)
    tolerance: Optional[float] = Field(None, gt=0.0)

    def build(self) -> SimulatorConfig:
        overrides = {key: value for key, value in self.model_dump().items() if value is not None}
        return SimulatorConfig(**overrides)


class MetricsSpec(_Strict):
    settle_time: float = Field(0.25, ge=0.0)
    contact_window: Optional[tuple[float, float]] = None
    separation_window: Optional[tuple[float, float]] = None


class ScenarioSpec(_Strict):
    """A complete closed-loop experiment."""

    schema_version: Literal[1] = SCHEMA_VERSION
    name: str = Field(min_length=1)
    description: str = ""
    robot: RobotSpec
    scene: SceneSpec = Field(default_factory=SceneSpec)
    reference: ReferenceSpec
    controller: ControllerSpec = Field(default_factory=ControllerSpec)
    sensing: SensingSpec = Field(default_factory=SensingSpec)
    simulation: SimulationSpec = Field(default_factory=SimulationSpec)
    control_rate: float = Field(200.0, gt=0.0)
    duration: float = Field(gt=0.0)
    rng_seed: int = Field(0, ge=0)
    fault_abort_ticks: Optional[int] = Field(None, ge=1)
    metrics: MetricsSpec = Field(default_factory=MetricsSpec)

    @field_validator("name")
    @classmethod
    def validate_name(cls, value: str) -> str:
        if any(sep in value for sep in ("/", "\\")):
            raise ValueError("scenario name must not contain path separators")
        return value

    @model_validator(mode="after")
    def validate_reference_dimension(self) -> "ScenarioSpec":
        n = len(self.robot.link_lengths)
        if self.reference.dimension() != n:
            raise ValueError(f"reference has dimension {self.reference.dimension()}, robot has {n} joints")
        return self

    @property
    def ticks(self) -> int:
        return int(round(self.duration * self.control_rate))

    def config_hash(self) -> str:
        return config_hash(self.model_dump(mode="json"))

    def with_overrides(self, **changes: Any) -> "ScenarioSpec":
        """Copy with top-level or ``controller``-level overrides, re-validated."""

        data = self.model_dump(mode="json")
        controller_changes = changes.pop("controller", None)
        if controller_changes:
            data["controller"].update(controller_changes)
        data.update({key: value for key, value in changes.items() if value is not None})
        return ScenarioSpec.model_validate(data)


def load_scenario(path: str | Path) -> ScenarioSpec:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    return parse_scenario(data, source=str(path))


def parse_scenario(data: Any, source: str = "<scenario>") -> ScenarioSpec:
    if isinstance(data, dict) and data.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ScenarioError(f"{source}: unsupported schema_version {data.get('schema_version')!r}")
    try:
        scenario = ScenarioSpec.model_validate(data)
        model = scenario.robot.build()
        scenario.scene.build(model)
        scenario.reference.build()
        scenario.controller.build(model, scenario.reference)
        scenario.simulation.build()
    except PydanticValidationError as exc:
        raise ScenarioError(f"{source}: {exc}") from exc
    except ContactAwareError as exc:
        raise ScenarioError(f"{source}: {exc}") from exc
    return scenario

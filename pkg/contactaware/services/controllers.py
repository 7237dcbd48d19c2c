"""The four contact-aware command generators.

Every controller maps a :class:`ControllerInput` to the next joint command
q_cmd^{l+1}, the state the bi-lateral contact model predicts for it and the
predicted contact forces. All of them respect the per-tick rate bound
|q_cmd^{l+1} − q_cmd^l| ≤ Δq_max (intersected with joint limits when set).

QP controllers optimise over z = (q^{l+1}, q_cmd^{l+1}, λ^{l+1}) with the
equilibrium written as equalities::

    q^{l+1} − q_cmd^{l+1} − K⁻¹J_uᵀλ^{l+1} = 0
    J_u (q^{l+1} − q^l)                    = 0

so that the solution always satisfies the closed-form equilibrium.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Literal, NamedTuple, Optional, Sequence

import numpy as np

from contactaware.core.exceptions import ContactAwareError, ValidationError
from contactaware.core.types import ContactKey, FloatArray, SolverDiagnostics
from contactaware.services.contact_sensing import DampingState
from contactaware.services.kinematics import (
    BodyPoint,
    RobotModel,
    body_point_position,
    forward_kinematics,
    point_jacobian,
)
from contactaware.services.qp_solver import QpProblem, QpSolver
from contactaware.services.quasistatic import (
    ContactSet,
    equilibrium_step,
    force_bound_gain,
    stiffness_projector,
)

logger = logging.getLogger(__name__)

ObjectiveMode = Literal["joint", "task"]


@dataclass(frozen=True)
class TrackingObjective:
    mode: ObjectiveMode = "joint"
    body_point: Optional[BodyPoint] = None
    position_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in ("joint", "task"):
            raise ValidationError(f"unknown tracking mode {self.mode!r}")
        if self.mode == "task" and self.body_point is None:
            raise ValidationError("task-space tracking needs a body point")
        if not self.position_weight > 0:
            raise ValidationError("position_weight must be positive")


@dataclass(frozen=True)
class ControllerConfig:
    """Tuning shared by all controllers; ``lambda_target`` defaults to ``lambda_max``."""

    epsilon: float = 1e-2
    lambda_max: float = 15.0
    lambda_target: Optional[float] = None
    objective: TrackingObjective = field(default_factory=TrackingObjective)
    task_regularization: float = 1e-3
    dls_damping: float = 1e-2

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if not self.lambda_max > 0:
            raise ValidationError("lambda_max must be positive")
        if self.lambda_target is not None and not 0 <= self.lambda_target <= self.lambda_max:
            raise ValidationError("lambda_target must lie in [0, lambda_max]")
        if not self.task_regularization > 0 or not self.dls_damping > 0:
            raise ValidationError("task_regularization and dls_damping must be positive")

    @property
    def force_target(self) -> float:
        return self.lambda_max if self.lambda_target is None else self.lambda_target


@dataclass(frozen=True, eq=False)
class ControllerInput:
    """Everything a controller may see at tick ``l``; never the simulator's truth."""

    model: RobotModel
    tick: int
    q: FloatArray
    q_cmd: FloatArray
    q_ref: FloatArray
    contacts: ContactSet
    damping: DampingState = field(default_factory=DampingState)
    lambda_pred: Dict[ContactKey, float] = field(default_factory=dict)
    p_ref: Optional[FloatArray] = None

    def __post_init__(self) -> None:
        n = self.model.n_joints
        object.__setattr__(self, "q", self.model.check_configuration(self.q, "q"))
        object.__setattr__(self, "q_cmd", self.model.check_configuration(self.q_cmd, "q_cmd"))
        object.__setattr__(self, "q_ref", self.model.check_configuration(self.q_ref, "q_ref"))
        if len(self.contacts) and self.contacts.jacobian.shape != (len(self.contacts), n):
            raise ValidationError(f"contact Jacobian must be {len(self.contacts)}x{n}")
        if self.p_ref is not None:
            p_ref = np.asarray(self.p_ref, dtype=float)
            if p_ref.shape != (2,) or not np.all(np.isfinite(p_ref)):
                raise ValidationError("p_ref must be a finite 2-D point")
            object.__setattr__(self, "p_ref", p_ref)


@dataclass(frozen=True, eq=False)
class ControllerOutput:
    q_cmd: FloatArray
    q_pred: FloatArray
    lambda_pred: FloatArray
    contact_keys: tuple[ContactKey, ...] = ()
    diagnostics: SolverDiagnostics = field(default_factory=SolverDiagnostics)
    projection_residual: float = 0.0
    force_gain: float = 0.0
    fault: Optional[str] = None

    def lambda_map(self) -> dict[ContactKey, float]:
        return {key: float(value) for key, value in zip(self.contact_keys, self.lambda_pred)}


class QuadraticCost(NamedTuple):
    """½xᵀHx + gᵀx over q_cmd^{l+1}."""

    H: FloatArray
    g: FloatArray

    def minimizer(self) -> FloatArray:
        return np.linalg.solve(self.H, -self.g)


def _command_box(inp: ControllerInput) -> tuple[FloatArray, FloatArray]:
    rate = inp.model.rate_bound
    lower, upper = inp.q_cmd - rate, inp.q_cmd + rate
    limits = inp.model.joint_limits
    if limits is not None:
        lower = np.maximum(lower, limits[:, 0])
        upper = np.minimum(upper, limits[:, 1])
        upper = np.maximum(upper, lower)
    return lower, upper


def _require_task_reference(inp: ControllerInput, objective: TrackingObjective) -> tuple[BodyPoint, FloatArray]:
    if objective.mode != "task" or objective.body_point is None:
        raise ValidationError("task-space objective requested without task mode")
    if inp.p_ref is None:
        raise ValidationError("task-space tracking needs p_ref")
    return objective.body_point, inp.p_ref


def _dls_target(inp: ControllerInput, config: ControllerConfig, origin: FloatArray) -> FloatArray:
    """One damped-least-squares step from ``origin`` toward ``p_ref``."""

    point, p_ref = _require_task_reference(inp, config.objective)
    frames = forward_kinematics(inp.model, origin)
    position = body_point_position(inp.model, origin, point, frames)
    jacobian = point_jacobian(inp.model, origin, point, frames)
    gram = jacobian @ jacobian.T + config.dls_damping**2 * np.eye(2)
    return origin + jacobian.T @ np.linalg.solve(gram, p_ref - position)


def _joint_target(inp: ControllerInput, config: ControllerConfig, origin: FloatArray) -> FloatArray:
    if config.objective.mode == "task":
        return _dls_target(inp, config, origin)
    return inp.q_ref


def assemble_task_space_objective(
    inp: ControllerInput,
    objective: TrackingObjective,
    regularization: float = 1e-3,
) -> QuadraticCost:
    """Linearized end-effector tracking cost over q_cmd^{l+1}.

    ‖p(q^l) + J(q^l)(q_cmd − q^l) − p_ref‖²_w + ε‖q_cmd − q_cmd^l‖²; the
    regularizer keeps the cost strictly convex when J has a null space.
    """

    if not regularization > 0:
        raise ValidationError("regularization must be positive")
    point, p_ref = _require_task_reference(inp, objective)
    frames = forward_kinematics(inp.model, inp.q)
    position = body_point_position(inp.model, inp.q, point, frames)
    jacobian = point_jacobian(inp.model, inp.q, point, frames)
    weight = objective.position_weight
    target = p_ref - position + jacobian @ inp.q
    n = inp.model.n_joints
    H = 2.0 * (weight * jacobian.T @ jacobian + regularization * np.eye(n))
    g = -2.0 * (weight * jacobian.T @ target + regularization * inp.q_cmd)
    return QuadraticCost(H, g)


def _projection_residual(inp: ControllerInput, q_cmd: FloatArray, q_pred: FloatArray, jacobian: FloatArray) -> float:
    projector = stiffness_projector(jacobian, inp.model.joint_stiffness) if jacobian.shape[0] else np.eye(q_cmd.size)
    return float(np.max(np.abs((q_pred - inp.q) - projector @ (q_cmd - inp.q)), initial=0.0))


def _closed_form_output(
    inp: ControllerInput,
    q_cmd: FloatArray,
    contacts: ContactSet,
    diagnostics: Optional[SolverDiagnostics] = None,
    fault: Optional[str] = None,
) -> ControllerOutput:
    """Prediction for a fixed command through the closed-form equilibrium."""

    try:
        result = equilibrium_step(inp.q, q_cmd, inp.model.joint_stiffness, contacts)
        gain = force_bound_gain(contacts.jacobian, inp.model.joint_stiffness)
    except ContactAwareError as exc:
        logger.debug("Closed-form prediction unavailable", extra={"tick": inp.tick, "error": str(exc)})
        return ControllerOutput(
            q_cmd=q_cmd,
            q_pred=q_cmd.copy(),
            lambda_pred=np.zeros(0),
            diagnostics=diagnostics or SolverDiagnostics(),
            fault=fault,
        )
    return ControllerOutput(
        q_cmd=q_cmd,
        q_pred=result.q_next,
        lambda_pred=result.lam,
        contact_keys=contacts.keys,
        diagnostics=diagnostics or SolverDiagnostics(),
        projection_residual=_projection_residual(inp, q_cmd, result.q_next, contacts.jacobian),
        force_gain=gain,
        fault=fault,
    )


def hold_command(inp: ControllerInput, reason: str) -> ControllerOutput:
    """Fallback that repeats q_cmd^l and reports ``reason`` as a fault."""

    logger.warning("Holding last command", extra={"tick": inp.tick, "reason": reason})
    return _closed_form_output(
        inp,
        inp.q_cmd.copy(),
        inp.contacts,
        diagnostics=SolverDiagnostics(status="hold"),
        fault=reason,
    )


def control_greedy(
    inp: ControllerInput,
    config: Optional[ControllerConfig] = None,
    solver: Optional[QpSolver] = None,
) -> ControllerOutput:
    """Track the reference within the rate bound, ignoring contacts."""

    config = config or ControllerConfig()
    lower, upper = _command_box(inp)
    q_cmd = np.clip(_joint_target(inp, config, inp.q_cmd), lower, upper)
    return _closed_form_output(inp, q_cmd, inp.contacts)


def _breaking_away(inp: ControllerInput, reference: FloatArray) -> list[int]:
    """Rows whose reference motion moves the contact point along its force direction, off the obstacle."""

    motion = inp.contacts.jacobian @ (reference - inp.q)
    return [i for i, value in enumerate(motion) if value > 0.0]


def _limit_force_along_segment(
    inp: ControllerInput,
    start: FloatArray,
    end: FloatArray,
    contacts: ContactSet,
    lambda_max: float,
) -> FloatArray:
    """Largest step from ``start`` toward ``end`` whose predicted forces stay ≤ λ_max."""

    K = inp.model.joint_stiffness
    at_start = equilibrium_step(inp.q, start, K, contacts).lam
    at_end = equilibrium_step(inp.q, end, K, contacts).lam
    if np.all(at_end <= lambda_max):
        return end
    scale = 1.0
    for low, high in zip(at_start, at_end):
        if high > lambda_max and high > low:
            scale = min(scale, (lambda_max - low) / (high - low))
    scale = float(np.clip(scale, 0.0, 1.0))
    return start + scale * (end - start)


def control_nullspace(
    inp: ControllerInput,
    config: Optional[ControllerConfig] = None,
    solver: Optional[QpSolver] = None,
    *,
    lambda_target: Optional[float] = None,
) -> ControllerOutput:
    """Null-space projection baseline.

    Tracks the reference in the null space of the remaining contact rows and
    commands ``lambda_target`` through their range space; rows whose
    reference points away from the obstacle are dropped first.
    """

    config = config or ControllerConfig()
    if not len(inp.contacts):
        return control_greedy(inp, config)
    target = config.force_target if lambda_target is None else float(lambda_target)
    K = inp.model.joint_stiffness
    reference = _joint_target(inp, config, inp.q)

    released = _breaking_away(inp, reference)
    if released:
        logger.debug("Break-away rows removed", extra={"tick": inp.tick, "rows": released})
    kept = inp.contacts.subset([i for i in range(len(inp.contacts)) if i not in released])

    if len(kept):
        J = kept.jacobian
        projector = stiffness_projector(J, K)
        force_step = -(J.T @ np.full(len(kept), target)) / K
        desired = inp.q + projector @ (reference - inp.q) + force_step
    else:
        desired = reference
    lower, upper = _command_box(inp)
    q_cmd = np.clip(desired, lower, upper)
    if len(kept):
        q_cmd = _limit_force_along_segment(inp, inp.q_cmd, q_cmd, kept, config.lambda_max)
    return _closed_form_output(inp, q_cmd, kept)


class _Layout(NamedTuple):
    n: int
    m: int

    @property
    def q_next(self) -> slice:
        return slice(0, self.n)

    @property
    def q_cmd(self) -> slice:
        return slice(self.n, 2 * self.n)

    @property
    def lam(self) -> slice:
        return slice(2 * self.n, 2 * self.n + self.m)

    @property
    def size(self) -> int:
        return 2 * self.n + self.m


def _add_quadratic(P: FloatArray, c: FloatArray, block: slice, H: FloatArray, g: FloatArray) -> None:
    P[block, block] += H
    c[block] += g


def _distance_cost(n: int, weight: float, anchor: FloatArray) -> tuple[FloatArray, FloatArray]:
    """weight·‖x − anchor‖² as (H, g)."""

    return 2.0 * weight * np.eye(n), -2.0 * weight * anchor


def _build_qp(inp: ControllerInput, config: ControllerConfig, *, frictional: bool) -> tuple[QpProblem, _Layout]:
    n, m = inp.model.n_joints, len(inp.contacts)
    layout = _Layout(n, m)
    P = np.zeros((layout.size, layout.size))
    c = np.zeros(layout.size)
    objective = config.objective

    if objective.mode == "task":
        task = assemble_task_space_objective(inp, objective, config.task_regularization)
        _add_quadratic(P, c, layout.q_cmd if frictional else layout.q_next, task.H, task.g)
        if not frictional:
            _add_quadratic(P, c, layout.q_cmd, *_distance_cost(n, config.epsilon, inp.q_cmd))
    elif frictional:
        _add_quadratic(P, c, layout.q_cmd, *_distance_cost(n, 1.0, inp.q_ref))
    else:
        _add_quadratic(P, c, layout.q_next, *_distance_cost(n, 1.0, inp.q_ref))
        _add_quadratic(P, c, layout.q_cmd, *_distance_cost(n, config.epsilon, inp.q_ref))
    if frictional and inp.damping.w > 0:
        _add_quadratic(P, c, layout.q_cmd, *_distance_cost(n, inp.damping.w, inp.q_cmd))

    J = inp.contacts.jacobian if m else np.zeros((0, n))
    K = inp.model.joint_stiffness
    equilibrium = np.zeros((n, layout.size))
    equilibrium[:, layout.q_next] = np.eye(n)
    equilibrium[:, layout.q_cmd] = -np.eye(n)
    equilibrium[:, layout.lam] = -(J.T / K[:, None])
    motion = np.zeros((m, layout.size))
    motion[:, layout.q_next] = J
    A_eq = np.vstack([equilibrium, motion])
    b_eq = np.concatenate([np.zeros(n), J @ inp.q])

    lower, upper = _command_box(inp)
    force_rows = np.zeros((m, layout.size))
    force_rows[:, layout.lam] = np.eye(m)
    upper_rows = np.zeros((n, layout.size))
    upper_rows[:, layout.q_cmd] = np.eye(n)
    A_in = np.vstack([force_rows, upper_rows, -upper_rows])
    b_in = np.concatenate([np.full(m, config.lambda_max), upper, -lower])
    return QpProblem(P=P, c=c, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in), layout


def _solve_qp(
    inp: ControllerInput,
    config: ControllerConfig,
    solver: Optional[QpSolver],
    *,
    frictional: bool,
) -> ControllerOutput:
    solver = solver or QpSolver(warm_start=False)
    try:
        problem, layout = _build_qp(inp, config, frictional=frictional)
        solution = solver.solve(problem)
    except ContactAwareError as exc:
        solver.reset()
        return hold_command(inp, f"qp error: {exc}")
    if not solution.optimal:
        solver.reset()
        return hold_command(inp, f"qp {solution.status}")

    diagnostics = SolverDiagnostics(
        status="optimal",
        iterations=solution.iterations,
        kkt_residual=solution.kkt_residual,
        runtime_s=solution.runtime_s,
    )
    q_pred = solution.x[layout.q_next]
    q_cmd = solution.x[layout.q_cmd]
    lam = solution.x[layout.lam]
    J = inp.contacts.jacobian
    gain = force_bound_gain(J, inp.model.joint_stiffness) if layout.m else 0.0
    return ControllerOutput(
        q_cmd=q_cmd,
        q_pred=q_pred,
        lambda_pred=lam,
        contact_keys=inp.contacts.keys,
        diagnostics=diagnostics,
        projection_residual=_projection_residual(inp, q_cmd, q_pred, J),
        force_gain=gain,
    )


def control_frictionless_qp(
    inp: ControllerInput,
    config: Optional[ControllerConfig] = None,
    solver: Optional[QpSolver] = None,
) -> ControllerOutput:
    """Force-bounded QP: ‖q^{l+1} − q_ref‖² + ε‖q_cmd^{l+1} − q_ref‖²."""

    return _solve_qp(inp, config or ControllerConfig(), solver, frictional=False)


def control_frictional_qp(
    inp: ControllerInput,
    config: Optional[ControllerConfig] = None,
    solver: Optional[QpSolver] = None,
) -> ControllerOutput:
    """Force-bounded QP with adaptive damping: ‖q_cmd^{l+1} − q_ref‖² + w^l‖q_cmd^{l+1} − q_cmd^l‖²."""

    return _solve_qp(inp, config or ControllerConfig(), solver, frictional=True)


ControlLaw = Callable[[ControllerInput, Optional[ControllerConfig], Optional[QpSolver]], ControllerOutput]

CONTROLLERS: Dict[str, ControlLaw] = {
    "greedy": control_greedy,
    "nullspace": control_nullspace,
    "frictionless_qp": control_frictionless_qp,
    "frictional_qp": control_frictional_qp,
}


class Controller:
    """One controller instance per run; owns the QP solver and its warm-start state."""

    def __init__(self, name: str, config: Optional[ControllerConfig] = None, solver: Optional[QpSolver] = None) -> None:
        if name not in CONTROLLERS:
            raise ValidationError(f"unknown controller {name!r}; expected one of {sorted(CONTROLLERS)}")
        self.name = name
        self.config = config or ControllerConfig()
        self.solver = solver or QpSolver()
        self._law = CONTROLLERS[name]

    @property
    def uses_qp(self) -> bool:
        return self.name.endswith("_qp")

    def reset(self) -> None:
        self.solver.reset()

    def step(self, inp: ControllerInput) -> ControllerOutput:
        started = time.perf_counter()
        try:
            output = self._law(inp, self.config, self.solver)
        except ContactAwareError as exc:
            output = hold_command(inp, f"{self.name}: {exc}")
        runtime = time.perf_counter() - started
        if output.fault:
            logger.warning(
                "Controller fault",
                extra={"tick": inp.tick, "controller": self.name, "fault": output.fault},
            )
        return replace(output, diagnostics=replace(output.diagnostics, runtime_s=runtime))


def available_controllers() -> Sequence[str]:
    return tuple(CONTROLLERS)

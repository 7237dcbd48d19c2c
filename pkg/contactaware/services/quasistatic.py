"""Quasistatic dynamics of a stiffness-controlled arm in contact.

The controller-side model is bi-lateral and frictionless: the next state is
the minimizer of the spring energy ½‖q_cmd − q‖²_K subject to
J_u (q − q_now) = 0, with contact forces λ as its multipliers. The same model
is available in closed form (:func:`equilibrium_step`), through the
stiffness-consistent projector (:func:`projection_step`) and as a QP
(:func:`solve_equilibrium_qp`).

The simulator side (:func:`simulate_step`) plays the physical robot: the
contacts are uni-lateral, detected from the scene geometry, and carry
regularized Coulomb friction.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from contactaware.core.config import settings
from contactaware.core.exceptions import RankDeficiencyError, SimulationError, ValidationError
from contactaware.core.types import ContactKey, FloatArray
from contactaware.services.geometry import Scene, detect_contacts, min_signed_distance
from contactaware.services.kinematics import (
    BodyPoint,
    RobotModel,
    body_point_position,
    forward_kinematics,
    point_jacobian,
)
from contactaware.services.qp_solver import QpProblem, QpSolver

logger = logging.getLogger(__name__)

_FORCE_FLOOR = 1e-9


@dataclass(frozen=True, eq=False)
class Contact:
    """One point contact: the force on the arm is ``magnitude · direction``."""

    key: ContactKey
    body_point: BodyPoint
    world_point: FloatArray
    direction: FloatArray
    magnitude: float = 0.0

    def __post_init__(self) -> None:
        direction = np.asarray(self.direction, dtype=float)
        norm = float(np.linalg.norm(direction))
        if direction.shape != (2,) or norm == 0.0 or not np.isfinite(norm):
            raise ValidationError(f"contact {self.key} needs a non-zero 2-D direction")
        if self.magnitude < 0 or not np.isfinite(self.magnitude):
            raise ValidationError(f"contact {self.key} magnitude must be finite and >= 0")
        if abs(norm - 1.0) > 1e-12:
            direction = direction / norm
        object.__setattr__(self, "direction", direction)
        object.__setattr__(self, "world_point", np.asarray(self.world_point, dtype=float))
        object.__setattr__(self, "magnitude", float(self.magnitude))


@dataclass(frozen=True, eq=False)
class ContactSet:
    """Active contacts and their stacked scalar Jacobian J_u (one row per contact)."""

    contacts: tuple[Contact, ...]
    jacobian: FloatArray
    dropped: tuple[int, ...] = ()

    @classmethod
    def empty(cls, n_joints: int) -> "ContactSet":
        return cls(contacts=(), jacobian=np.zeros((0, n_joints)))

    def __len__(self) -> int:
        return len(self.contacts)

    @property
    def keys(self) -> tuple[ContactKey, ...]:
        return tuple(contact.key for contact in self.contacts)

    @property
    def magnitudes(self) -> FloatArray:
        return np.array([contact.magnitude for contact in self.contacts])

    def force_map(self) -> dict[ContactKey, float]:
        return {contact.key: contact.magnitude for contact in self.contacts}

    def subset(self, rows: Sequence[int]) -> "ContactSet":
        rows = list(rows)
        return ContactSet(
            contacts=tuple(self.contacts[i] for i in rows),
            jacobian=self.jacobian[rows] if rows else np.zeros((0, self.jacobian.shape[1])),
        )


@dataclass(frozen=True, eq=False)
class EquilibriumResult:
    q_next: FloatArray
    lam: FloatArray
    jacobian: FloatArray
    q_now: FloatArray


def build_contact_jacobian(
    model: RobotModel,
    q: Sequence[float] | FloatArray,
    contacts: Sequence[Contact],
    rank_tolerance: Optional[float] = None,
) -> ContactSet:
    """Stack rows u_iᵀ J_p(q) and drop rows that would make J_u rank deficient.

    Earlier rows win; the indices of dropped contacts are kept in ``dropped``.
    """

    q = model.check_configuration(q)
    tolerance = rank_tolerance if rank_tolerance is not None else settings.rank_tolerance
    frames = forward_kinematics(model, q)
    kept: list[Contact] = []
    rows: list[FloatArray] = []
    dropped: list[int] = []
    for index, contact in enumerate(contacts):
        row = contact.direction @ point_jacobian(model, q, contact.body_point, frames)
        if _adds_rank(rows, row, tolerance):
            kept.append(contact)
            rows.append(row)
        else:
            dropped.append(index)
    if dropped:
        logger.debug("Dropped dependent contact rows", extra={"dropped": dropped, "kept": len(kept)})
    jacobian = np.array(rows) if rows else np.zeros((0, model.n_joints))
    return ContactSet(contacts=tuple(kept), jacobian=jacobian, dropped=tuple(dropped))


def _adds_rank(rows: list[FloatArray], row: FloatArray, tolerance: float) -> bool:
    norm = float(np.linalg.norm(row))
    if norm <= tolerance:
        return False
    if not rows:
        return True
    normalized = np.array([r / np.linalg.norm(r) for r in rows] + [row / norm])
    singular = np.linalg.svd(normalized, compute_uv=False)
    return bool(singular[-1] > tolerance)


def _diagonal(weights: Sequence[float] | FloatArray, n: int, name: str) -> FloatArray:
    array = np.asarray(weights, dtype=float)
    if array.ndim == 2:
        array = np.diag(array)
    if array.shape != (n,):
        raise ValidationError(f"{name} must have {n} diagonal entries")
    if np.any(array <= 0):
        raise ValidationError(f"{name} must be positive")
    return array


def _as_rows(J: FloatArray) -> FloatArray:
    J = np.asarray(J, dtype=float)
    return J.reshape(1, -1) if J.ndim == 1 else J


def _inverse_weight(W: Sequence[float] | FloatArray, n: int) -> FloatArray:
    """W⁻¹ for a positive diagonal (vector) or a symmetric positive-definite matrix."""

    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        return np.diag(1.0 / _diagonal(W, n, "W"))
    if W.shape != (n, n):
        raise ValidationError(f"W must be {n}x{n}")
    try:
        np.linalg.cholesky(0.5 * (W + W.T))
    except np.linalg.LinAlgError as exc:
        raise ValidationError("W must be positive definite") from exc
    return np.linalg.inv(W)


def _gram_inverse(J: FloatArray, W_inv: FloatArray) -> FloatArray:
    gram = J @ W_inv @ J.T
    try:
        np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError("J W⁻¹ Jᵀ is singular; J must have full row rank") from exc
    if np.linalg.cond(gram) > 1e12:
        raise RankDeficiencyError("J W⁻¹ Jᵀ is numerically singular")
    return np.linalg.inv(gram)


def weighted_pseudoinverse(J: FloatArray, W: Sequence[float] | FloatArray) -> FloatArray:
    """J^{W+} = W⁻¹Jᵀ(JW⁻¹Jᵀ)⁻¹, a right inverse of J."""

    J = _as_rows(J)
    W_inv = _inverse_weight(W, J.shape[1])
    return W_inv @ J.T @ _gram_inverse(J, W_inv)


def null_space_projectors(J: FloatArray, W: Sequence[float] | FloatArray) -> tuple[FloatArray, FloatArray]:
    """Torque-space projectors P_R(W) = Jᵀ(J^{W+})ᵀ and P_N(W) = I − P_R(W)."""

    J = _as_rows(J)
    range_projector = J.T @ weighted_pseudoinverse(J, W).T
    return range_projector, np.eye(J.shape[1]) - range_projector


def stiffness_projector(J: FloatArray, K: Sequence[float] | FloatArray) -> FloatArray:
    """Joint-displacement projector I − J^{K+}J onto N(J); equals P_N(K)ᵀ."""

    J = _as_rows(J)
    n = J.shape[1]
    if J.shape[0] == 0:
        return np.eye(n)
    return np.eye(n) - weighted_pseudoinverse(J, K) @ J


def force_bound_gain(J: FloatArray, K: Sequence[float] | FloatArray) -> float:
    """‖(J K⁻¹ Jᵀ)⁻¹ J‖_∞: contact force per radian of command error."""

    J = _as_rows(J)
    if J.shape[0] == 0:
        return 0.0
    K_inv = _inverse_weight(K, J.shape[1])
    return float(np.max(np.sum(np.abs(_gram_inverse(J, K_inv) @ J), axis=1)))


def _prepare(
    q_now: Sequence[float] | FloatArray,
    q_cmd_next: Sequence[float] | FloatArray,
    K_q: Sequence[float] | FloatArray,
    contact_set: ContactSet,
) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
    q_now = np.asarray(q_now, dtype=float)
    q_cmd_next = np.asarray(q_cmd_next, dtype=float)
    n = q_now.size
    if q_cmd_next.shape != (n,):
        raise ValidationError("q_now and q_cmd_next must have the same length")
    K = _diagonal(K_q, n, "K_q")
    J = contact_set.jacobian
    if J.shape[0] and J.shape[1] != n:
        raise ValidationError(f"contact Jacobian has {J.shape[1]} columns, expected {n}")
    return q_now, q_cmd_next, K, J


def equilibrium_step(
    q_now: Sequence[float] | FloatArray,
    q_cmd_next: Sequence[float] | FloatArray,
    K_q: Sequence[float] | FloatArray,
    contact_set: ContactSet,
) -> EquilibriumResult:
    """Closed-form equilibrium: λ = −(J K⁻¹ Jᵀ)⁻¹ J (q_cmd − q) and
    q_next = q + (I − K⁻¹Jᵀ(J K⁻¹ Jᵀ)⁻¹J)(q_cmd − q)."""

    q_now, q_cmd_next, K, J = _prepare(q_now, q_cmd_next, K_q, contact_set)
    if J.shape[0] == 0:
        return EquilibriumResult(q_cmd_next.copy(), np.zeros(0), J, q_now)
    K_inv = np.diag(1.0 / K)
    gram_inv = _gram_inverse(J, K_inv)
    command = q_cmd_next - q_now
    lam = -gram_inv @ J @ command
    q_next = q_now + (np.eye(q_now.size) - K_inv @ J.T @ gram_inv @ J) @ command
    return EquilibriumResult(q_next, lam, J, q_now)


def projection_step(
    q_now: Sequence[float] | FloatArray,
    q_cmd_next: Sequence[float] | FloatArray,
    K_q: Sequence[float] | FloatArray,
    contact_set: ContactSet,
) -> EquilibriumResult:
    """The same equilibrium through the stiffness-consistent pseudo-inverse:
    q_next = q + (I − J^{K+}J)(q_cmd − q), λ = −(J^{K+})ᵀ K (q_cmd − q)."""

    q_now, q_cmd_next, K, J = _prepare(q_now, q_cmd_next, K_q, contact_set)
    if J.shape[0] == 0:
        return EquilibriumResult(q_cmd_next.copy(), np.zeros(0), J, q_now)
    pinv = weighted_pseudoinverse(J, K)
    command = q_cmd_next - q_now
    q_next = q_now + (np.eye(q_now.size) - pinv @ J) @ command
    lam = -pinv.T @ (K * command)
    return EquilibriumResult(q_next, lam, J, q_now)


def equilibrium_qp(
    q_now: Sequence[float] | FloatArray,
    q_cmd_next: Sequence[float] | FloatArray,
    K_q: Sequence[float] | FloatArray,
    contact_set: ContactSet,
) -> QpProblem:
    """min ½(q_cmd − q)ᵀK(q_cmd − q) s.t. J_u(q − q_now) = 0, up to a constant."""

    q_now, q_cmd_next, K, J = _prepare(q_now, q_cmd_next, K_q, contact_set)
    return QpProblem(P=np.diag(K), c=-K * q_cmd_next, A_eq=J, b_eq=J @ q_now)


def solve_equilibrium_qp(
    q_now: Sequence[float] | FloatArray,
    q_cmd_next: Sequence[float] | FloatArray,
    K_q: Sequence[float] | FloatArray,
    contact_set: ContactSet,
    solver: Optional[QpSolver] = None,
) -> EquilibriumResult:
    """Equilibrium through the QP solver.

    The solver's stationarity reads K(q − q_cmd) + J_uᵀ y_eq = 0 while the
    contact model reads K(q − q_cmd) − J_uᵀ λ = 0, hence λ = −y_eq.
    """

    problem = equilibrium_qp(q_now, q_cmd_next, K_q, contact_set)
    solution = (solver or QpSolver(warm_start=False)).solve(problem)
    if not solution.optimal:
        raise SimulationError(f"equilibrium QP ended with status {solution.status}")
    return EquilibriumResult(solution.x, -solution.y_eq, contact_set.jacobian, np.asarray(q_now, dtype=float))


def spring_energy(q: FloatArray, q_cmd: FloatArray, K_q: Sequence[float] | FloatArray) -> float:
    stretch = np.asarray(q_cmd, dtype=float) - np.asarray(q, dtype=float)
    return 0.5 * float(stretch @ (np.asarray(K_q, dtype=float) * stretch))


def spring_energy_gradient(q: FloatArray, q_cmd: FloatArray, K_q: Sequence[float] | FloatArray) -> FloatArray:
    return np.asarray(K_q, dtype=float) * (np.asarray(q, dtype=float) - np.asarray(q_cmd, dtype=float))


@dataclass(frozen=True)
class SimulatorConfig:
    activation_distance: float = field(default_factory=lambda: settings.activation_distance)
    linearization_margin: float = field(default_factory=lambda: settings.linearization_margin)
    max_iterations: int = field(default_factory=lambda: settings.sqp_max_iterations)
    tolerance: float = field(default_factory=lambda: settings.sqp_tolerance)

    def __post_init__(self) -> None:
        if self.activation_distance < 0 or self.linearization_margin < self.activation_distance:
            raise ValidationError("need 0 <= activation_distance <= linearization_margin")
        if self.linearization_margin <= 0:
            raise ValidationError("linearization_margin must be positive")
        if self.max_iterations < 1 or self.tolerance <= 0:
            raise ValidationError("SQP iteration cap and tolerance must be positive")


@dataclass(frozen=True, eq=False)
class SimulationState:
    q: FloatArray
    contacts: ContactSet


def simulate_step(
    scene: Scene,
    model: RobotModel,
    q_now: Sequence[float] | FloatArray,
    q_cmd_next: Sequence[float] | FloatArray,
    substeps: Optional[int] = None,
    *,
    config: Optional[SimulatorConfig] = None,
    solver: Optional[QpSolver] = None,
) -> tuple[FloatArray, ContactSet]:
    """Ground-truth quasistatic step by sequential QP.

    Each iteration linearizes the signed distances of every (point, obstacle)
    pair within the linearization margin, φ + ∇φ·Δq ≥ 0, and minimizes the
    spring energy over Δq. Collision points move at most half the margin per
    iteration. Normal forces are the multipliers of the final iteration.

    With no pair inside the margin the arm moves in free space: straight to
    ``q_cmd_next`` when the swept bound of every collision point stays short
    of the clearance, otherwise up to half a margin short of the nearest
    obstacle. Free-space moves do not count against the iteration cap.
    """

    config = config or SimulatorConfig()
    cap = int(substeps if substeps is not None else config.max_iterations)
    if cap < 1:
        raise ValidationError("substeps must be >= 1")
    q_start = model.check_configuration(q_now, "q_now")
    q_cmd = model.check_configuration(q_cmd_next, "q_cmd_next")
    solver = solver or QpSolver()
    K = model.joint_stiffness
    limit = 0.5 * config.linearization_margin

    q = q_start.copy()
    pairs: list = []
    normal_forces = np.zeros(0)
    step_norm = float("inf")
    iteration = 0
    while True:
        pairs = detect_contacts(scene, model, q, config.linearization_margin)
        if not pairs:
            remaining = q_cmd - q
            sweep = _swept_distance_bound(scene, model, remaining)
            clearance = min_signed_distance(scene, model, q)
            normal_forces = np.zeros(0)
            if sweep < clearance:
                q = q_cmd.copy()
                break
            q = q + remaining * (max(clearance - limit, limit) / sweep)
            continue

        iteration += 1
        if iteration > cap:
            raise SimulationError(
                f"SQP did not converge in {cap} iterations (last step {step_norm:.3e} rad)"
            )
        frames = forward_kinematics(model, q)
        rows = np.array([-(pair.normal @ point_jacobian(model, q, pair.body_point, frames)) for pair in pairs])
        gaps = np.array([pair.signed_distance for pair in pairs])
        problem = QpProblem(P=np.diag(K), c=K * (q - q_cmd), A_in=rows, b_in=gaps)
        solution = solver.solve(problem)
        if not solution.optimal:
            raise SimulationError(
                f"contact QP ended with status {solution.status} at SQP iteration {iteration}"
            )
        delta, normal_forces = solution.x, solution.y_in
        reach = np.max(np.abs(rows @ delta), initial=0.0)
        if reach > limit:
            delta = delta * (limit / reach)
        q = q + delta
        step_norm = float(np.max(np.abs(delta), initial=0.0))
        if step_norm <= config.tolerance:
            break

    contacts = _true_contacts(scene, model, q_start, q, pairs, normal_forces, config)
    return q, build_contact_jacobian(model, q, contacts)


def _swept_distance_bound(scene: Scene, model: RobotModel, delta: FloatArray) -> float:
    """Upper bound on how far any collision point travels while q moves linearly by ``delta``.

    Joint j turns a point on link i about a pivot at most L_j + … + L_{i−1} + ‖offset‖ away.
    """

    lengths = model.link_lengths
    bound = 0.0
    for point in scene.collision_points:
        link = point.link_index
        radius = float(np.linalg.norm(point.local_offset))
        travel = 0.0
        for joint in range(link - 1, -1, -1):
            travel += abs(float(delta[joint])) * radius
            if joint > 0:
                radius += float(lengths[joint - 1])
        bound = max(bound, travel)
    return bound


def _true_contacts(
    scene: Scene,
    model: RobotModel,
    q_start: FloatArray,
    q_end: FloatArray,
    pairs: list,
    normal_forces: FloatArray,
    config: SimulatorConfig,
) -> list[Contact]:
    """Contacts carrying force, with regularized Coulomb friction added.

    The tangential force opposes the tangential displacement of the contact
    point over the whole step, -clamp(k_t·δ_t, ±μ·f_n), with k_t the
    obstacle's tangential stiffness. It shapes the reported force only; the
    motion is the frictionless minimizer.
    """

    start_frames = forward_kinematics(model, q_start)
    end_frames = forward_kinematics(model, q_end)
    contacts: list[Contact] = []
    for pair, normal_force in zip(pairs, normal_forces):
        if normal_force <= _FORCE_FLOOR:
            continue
        obstacle = scene.obstacles[pair.obstacle_index]
        end_point = body_point_position(model, q_end, pair.body_point, end_frames)
        start_point = body_point_position(model, q_start, pair.body_point, start_frames)
        query = obstacle.signed_distance(end_point)
        if query.distance > config.activation_distance:
            continue
        normal = query.normal
        tangent = np.array([-normal[1], normal[0]])
        slip = float(tangent @ (end_point - start_point))
        cone = obstacle.friction_coefficient * normal_force
        tangential = -float(np.clip(obstacle.tangential_stiffness * slip, -cone, cone))
        force = normal_force * normal + tangential * tangent
        contacts.append(
            Contact(
                key=pair.key,
                body_point=pair.body_point,
                world_point=end_point,
                direction=force,
                magnitude=float(np.linalg.norm(force)),
            )
        )
    return contacts

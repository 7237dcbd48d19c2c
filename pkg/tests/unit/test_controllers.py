import os
import time
from types import SimpleNamespace

import numpy as np
import pytest

from contactaware.core.config import settings
from contactaware.core.exceptions import QpSolverError, ValidationError
from contactaware.services.contact_sensing import DampingState
from contactaware.services.controllers import (
    Controller,
    ControllerConfig,
    ControllerInput,
    TrackingObjective,
    assemble_task_space_objective,
    available_controllers,
    control_frictional_qp,
    control_frictionless_qp,
    control_greedy,
    control_nullspace,
)
from contactaware.services.kinematics import BodyPoint, RobotModel, body_point_position, end_effector_point
from contactaware.services.quasistatic import Contact, ContactSet, build_contact_jacobian, equilibrium_step

ZERO = np.zeros(3)
PRESS = np.array([-1.0, 0.0, 0.0])


@pytest.fixture()
def floor_contact(arm, tip):
    contact = Contact((3, 0), tip, (1.2, 0.0), (0.0, 1.0))
    return build_contact_jacobian(arm, ZERO, [contact])


def _input(model, contacts=None, *, q=ZERO, q_cmd=ZERO, q_ref=ZERO, **kwargs) -> ControllerInput:
    contacts = contacts if contacts is not None else ContactSet.empty(model.n_joints)
    return ControllerInput(model=model, tick=0, q=q, q_cmd=q_cmd, q_ref=q_ref, contacts=contacts, **kwargs)


def _gram(arm, contacts) -> float:
    J = contacts.jacobian
    return float(J[0] @ (J[0] / arm.joint_stiffness))


class _BrokenSolver:
    def __init__(self, error: bool) -> None:
        self.error = error
        self.resets = 0

    def solve(self, problem):
        if self.error:
            raise QpSolverError("reduced Hessian is not positive definite")
        return SimpleNamespace(optimal=False, status="max_iterations")

    def reset(self) -> None:
        self.resets += 1


def test_registry_lists_the_four_controllers() -> None:
    assert available_controllers() == ("greedy", "nullspace", "frictionless_qp", "frictional_qp")
    with pytest.raises(ValidationError):
        Controller("impedance")


def test_greedy_moves_at_the_rate_bound_in_free_space(arm) -> None:
    output = control_greedy(_input(arm, q_ref=np.ones(3)))
    np.testing.assert_allclose(output.q_cmd, np.full(3, 0.002))
    np.testing.assert_allclose(output.q_pred, output.q_cmd)
    assert output.lambda_pred.size == 0
    assert output.fault is None


def test_greedy_ignores_contacts_and_presses(arm, floor_contact) -> None:
    output = control_greedy(_input(arm, floor_contact, q_ref=PRESS))
    np.testing.assert_allclose(output.q_cmd, [-0.002, 0.0, 0.0])
    expected = 1.2 * 0.002 / _gram(arm, floor_contact)
    assert output.lambda_pred[0] == pytest.approx(expected)
    assert output.contact_keys == ((3, 0),)
    assert output.projection_residual <= 1e-12


def test_nullspace_commands_the_target_force() -> None:
    fast = RobotModel([0.5, 0.4, 0.3], [800.0, 600.0, 400.0], 0.1)
    contact = Contact((3, 0), body_point=end_effector_point(fast), world_point=(1.2, 0.0), direction=(0.0, 1.0))
    contacts = build_contact_jacobian(fast, ZERO, [contact])
    config = ControllerConfig(lambda_max=15.0, lambda_target=10.0)
    output = control_nullspace(_input(fast, contacts), config)
    assert output.lambda_pred[0] == pytest.approx(10.0, rel=1e-9)
    assert abs(float(contacts.jacobian[0] @ output.q_pred)) <= 1e-12
    np.testing.assert_allclose(output.q_cmd, -10.0 * contacts.jacobian[0] / fast.joint_stiffness)


def test_nullspace_limits_force_to_lambda_max() -> None:
    fast = RobotModel([0.5, 0.4, 0.3], [800.0, 600.0, 400.0], 0.1)
    contact = Contact((3, 0), end_effector_point(fast), (1.2, 0.0), (0.0, 1.0))
    contacts = build_contact_jacobian(fast, ZERO, [contact])
    output = control_nullspace(_input(fast, contacts, q_ref=PRESS), ControllerConfig(lambda_max=5.0))
    assert output.lambda_pred[0] <= 5.0 + 1e-9
    assert np.all(np.abs(output.q_cmd) <= 0.1 + 1e-12)


def test_nullspace_drops_rows_that_break_away(arm, floor_contact) -> None:
    output = control_nullspace(_input(arm, floor_contact, q_ref=np.array([0.5, 0.0, 0.0])))
    assert output.contact_keys == ()
    np.testing.assert_allclose(output.q_cmd, [0.002, 0.0, 0.0])


def test_nullspace_without_contacts_is_greedy(arm) -> None:
    inp = _input(arm, q_ref=np.array([0.5, -0.5, 0.0]))
    np.testing.assert_allclose(control_nullspace(inp).q_cmd, control_greedy(inp).q_cmd)


@pytest.mark.parametrize("law", [control_frictionless_qp, control_frictional_qp])
def test_qp_free_space_step_reaches_the_rate_bound(arm, law) -> None:
    output = law(_input(arm, q_ref=np.ones(3)))
    np.testing.assert_allclose(output.q_cmd, np.full(3, 0.002), atol=1e-9)
    np.testing.assert_allclose(output.q_pred, output.q_cmd, atol=1e-9)
    assert output.diagnostics.status == "optimal"


@pytest.mark.parametrize("law", [control_frictionless_qp, control_frictional_qp])
def test_qp_bounds_force_and_satisfies_equilibrium(arm, floor_contact, law) -> None:
    config = ControllerConfig(lambda_max=0.5)
    inp = _input(arm, floor_contact, q_ref=PRESS)
    output = law(inp, config)

    assert output.lambda_pred[0] <= 0.5 + 1e-8
    assert np.all(np.abs(output.q_cmd - inp.q_cmd) <= arm.rate_bound + 1e-12)
    assert output.projection_residual <= 1e-8
    closed = equilibrium_step(inp.q, output.q_cmd, arm.joint_stiffness, floor_contact)
    np.testing.assert_allclose(output.q_pred, closed.q_next, atol=1e-8)
    np.testing.assert_allclose(output.lambda_pred, closed.lam, atol=1e-6)
    assert output.force_gain == pytest.approx(2.2 / _gram(arm, floor_contact))


def test_frictional_qp_saturates_the_force_bound_when_greedy_would_exceed_it(arm, floor_contact) -> None:
    inp = _input(arm, floor_contact, q_ref=PRESS)
    assert control_greedy(inp).lambda_pred[0] > 0.5
    output = control_frictional_qp(inp, ControllerConfig(lambda_max=0.5))
    assert output.lambda_pred[0] == pytest.approx(0.5, abs=1e-7)


def test_frictional_qp_damping_slows_the_command(arm) -> None:
    q_ref = np.full(3, 0.01)
    undamped = control_frictional_qp(_input(arm, q_ref=q_ref))
    damped = control_frictional_qp(_input(arm, q_ref=q_ref, damping=DampingState(w=10.0)))
    np.testing.assert_allclose(undamped.q_cmd, np.full(3, 0.002), atol=1e-9)
    np.testing.assert_allclose(damped.q_cmd, np.full(3, 0.01 / 11.0), atol=1e-9)


@pytest.mark.parametrize("error", [True, False])
def test_qp_failure_holds_the_last_command(arm, floor_contact, error) -> None:
    solver = _BrokenSolver(error)
    q_cmd = np.array([-0.001, 0.0, 0.0])
    output = control_frictional_qp(_input(arm, floor_contact, q_cmd=q_cmd, q_ref=PRESS), None, solver)
    np.testing.assert_array_equal(output.q_cmd, q_cmd)
    assert output.diagnostics.status == "hold"
    assert output.fault.startswith("qp error" if error else "qp max_iterations")
    assert solver.resets == 1
    assert output.lambda_pred[0] == pytest.approx(1.2 * 0.001 / _gram(arm, floor_contact))


def test_controller_step_turns_errors_into_a_hold(arm, tip, floor_contact) -> None:
    config = ControllerConfig(objective=TrackingObjective("task", tip))
    controller = Controller("nullspace", config)
    output = controller.step(_input(arm, floor_contact, q_ref=PRESS))
    assert output.fault is not None and "p_ref" in output.fault
    np.testing.assert_array_equal(output.q_cmd, ZERO)
    assert output.diagnostics.runtime_s > 0.0


def test_task_objective_minimizer_keeps_a_reached_target(arm, tip) -> None:
    q = np.array([0.3, 0.3, 0.3])
    p_ref = body_point_position(arm, q, tip)
    inp = _input(arm, q=q, q_cmd=q, q_ref=q, p_ref=p_ref)
    cost = assemble_task_space_objective(inp, TrackingObjective("task", tip))
    np.testing.assert_allclose(cost.minimizer(), q, atol=1e-10)
    with pytest.raises(ValidationError):
        assemble_task_space_objective(inp, TrackingObjective("task", tip), regularization=0.0)
    with pytest.raises(ValidationError):
        assemble_task_space_objective(inp, TrackingObjective())


@pytest.mark.parametrize("name", ["greedy", "frictionless_qp", "frictional_qp"])
def test_task_tracking_moves_the_tip_toward_the_target(arm, tip, name) -> None:
    q = np.array([0.3, 0.3, 0.3])
    start = body_point_position(arm, q, tip)
    p_ref = start + np.array([0.01, 0.01])
    controller = Controller(name, ControllerConfig(objective=TrackingObjective("task", tip)))
    output = controller.step(_input(arm, q=q, q_cmd=q, q_ref=q, p_ref=p_ref))
    assert output.fault is None
    after = body_point_position(arm, output.q_pred, tip)
    assert np.linalg.norm(after - p_ref) < np.linalg.norm(start - p_ref)


def test_task_tracking_requires_p_ref(arm, tip) -> None:
    controller = Controller("frictional_qp", ControllerConfig(objective=TrackingObjective("task", tip)))
    output = controller.step(_input(arm, q_ref=np.ones(3)))
    assert output.fault is not None


def test_controller_input_validation(arm, floor_contact) -> None:
    with pytest.raises(ValidationError):
        _input(arm, q=np.zeros(2))
    with pytest.raises(ValidationError):
        _input(arm, p_ref=np.zeros(3))
    with pytest.raises(ValidationError):
        _input(RobotModel([1.0, 1.0], [100.0, 100.0], 0.01), floor_contact, q=np.zeros(2), q_cmd=np.zeros(2), q_ref=np.zeros(2))


@pytest.mark.parametrize(
    "kwargs",
    [{"epsilon": 0.0}, {"lambda_max": -1.0}, {"lambda_max": 5.0, "lambda_target": 6.0}, {"dls_damping": 0.0}],
)
def test_controller_config_validation(kwargs) -> None:
    with pytest.raises(ValidationError):
        ControllerConfig(**kwargs)


def test_tracking_objective_validation(tip) -> None:
    with pytest.raises(ValidationError):
        TrackingObjective("task")
    with pytest.raises(ValidationError):
        TrackingObjective("cartesian", tip)  # type: ignore[arg-type]
    with pytest.raises(ValidationError):
        TrackingObjective("task", tip, position_weight=0.0)


def test_lambda_map_pairs_keys_and_forces(arm, floor_contact) -> None:
    output = control_greedy(_input(arm, floor_contact, q_ref=PRESS))
    assert output.lambda_map() == {(3, 0): pytest.approx(float(output.lambda_pred[0]))}


def test_qp_force_changes_by_at_most_the_rate_bound_per_tick(arm, floor_contact) -> None:
    controller = Controller("frictional_qp", ControllerConfig(lambda_max=0.5))
    q_cmd, previous = ZERO, 0.0
    for tick in range(100):
        q_ref = PRESS if tick < 50 else -PRESS
        inp = ControllerInput(arm, tick, ZERO, q_cmd, q_ref, floor_contact, damping=DampingState(w=1.0))
        output = controller.step(inp)
        assert output.fault is None
        lam = float(output.lambda_pred[0])
        assert abs(lam - previous) <= output.force_gain * float(np.max(arm.rate_bound)) + 1e-9
        q_cmd, previous = output.q_cmd, lam


@pytest.mark.skipif(os.getenv("CONTACTAWARE_SKIP_TIMING") == "1", reason="timing checks disabled for this machine")
def test_median_tick_fits_the_budget_at_six_joints_and_three_contacts() -> None:
    model = RobotModel(
        link_lengths=[0.35, 0.3, 0.25, 0.2, 0.15, 0.1],
        joint_stiffness=[900.0, 800.0, 700.0, 600.0, 500.0, 400.0],
        rate_bound=0.002,
    )
    q = np.array([0.2, -0.3, 0.4, -0.2, 0.3, -0.1])
    contacts = []
    for key, (link, direction) in enumerate([(2, (0.0, 1.0)), (4, (0.6, 0.8)), (6, (-0.8, 0.6))]):
        point = BodyPoint(link, (float(model.link_lengths[link - 1]), 0.0))
        contacts.append(Contact((key, 0), point, body_point_position(model, q, point), direction))
    contact_set = build_contact_jacobian(model, q, contacts)
    assert len(contact_set) == 3

    controller = Controller("frictional_qp", ControllerConfig(lambda_max=5.0))
    q_cmd = q.copy()
    elapsed = []
    for tick in range(220):
        q_ref = q + 0.3 * np.sin(0.05 * tick + np.arange(6))
        inp = ControllerInput(model, tick, q, q_cmd, q_ref, contact_set, damping=DampingState(w=1.0))
        started = time.perf_counter()
        output = controller.step(inp)
        elapsed.append(time.perf_counter() - started)
        assert output.fault is None
        q_cmd = output.q_cmd
    assert float(np.median(elapsed[20:])) <= settings.tick_budget_ms / 1000.0

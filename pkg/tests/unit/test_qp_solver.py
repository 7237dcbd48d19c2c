import itertools

import numpy as np
import pytest

from contactaware.core.exceptions import QpSolverError, ValidationError
from contactaware.services.qp_solver import QpProblem, QpSolver, kkt_residual, solve


def _random_problem(rng: np.random.Generator, n: int = 6, m_eq: int = 1, m_in: int = 4) -> QpProblem:
    root = rng.normal(size=(n, n))
    P = root @ root.T + 0.5 * np.eye(n)
    c = rng.normal(size=n)
    A_eq = rng.normal(size=(m_eq, n))
    A_in = rng.normal(size=(m_in, n))
    # x = 0 is strictly feasible, so the problem always has a unique optimum
    b_in = rng.uniform(0.1, 1.0, size=m_in)
    return QpProblem(P=P, c=c, A_eq=A_eq, b_eq=np.zeros(m_eq), A_in=A_in, b_in=b_in)


def _enumerate(problem: QpProblem) -> np.ndarray:
    """Brute force: the optimum is the feasible, dual-feasible point of some active set."""

    n = problem.n
    for size in range(problem.m_in + 1):
        for active in itertools.combinations(range(problem.m_in), size):
            A = np.vstack([problem.A_eq, problem.A_in[list(active)]])
            b = np.concatenate([problem.b_eq, problem.b_in[list(active)]])
            m = A.shape[0]
            kkt = np.block([[problem.P, A.T], [A, np.zeros((m, m))]])
            try:
                solution = np.linalg.solve(kkt, np.concatenate([-problem.c, b]))
            except np.linalg.LinAlgError:
                continue
            x, y = solution[:n], solution[n + problem.m_eq :]
            if np.all(problem.A_in @ x <= problem.b_in + 1e-10) and np.all(y >= -1e-10):
                return x
    raise AssertionError("no active set satisfies the KKT conditions")


def test_unconstrained_minimum() -> None:
    P = np.array([[4.0, 1.0], [1.0, 3.0]])
    c = np.array([1.0, -2.0])
    result = solve(QpProblem(P=P, c=c))
    assert result.optimal
    np.testing.assert_allclose(result.x, np.linalg.solve(P, -c), atol=1e-12)


def test_equality_multiplier_sign_convention() -> None:
    result = solve(QpProblem(P=[[1.0]], c=[0.0], A_eq=[[1.0]], b_eq=[1.0]))
    assert result.x[0] == pytest.approx(1.0)
    # P x + c + A_eqᵀ y_eq = 0
    assert result.y_eq[0] == pytest.approx(-1.0)


def test_inequality_multiplier_is_nonnegative() -> None:
    result = solve(QpProblem(P=np.eye(2), c=[-2.0, -2.0], A_in=[[1.0, 0.0]], b_in=[0.5]))
    np.testing.assert_allclose(result.x, [0.5, 2.0], atol=1e-12)
    assert result.y_in[0] == pytest.approx(1.5)
    assert result.active_set == (0,)
    assert result.kkt_residual <= 1e-9


def test_matches_active_set_enumeration_on_random_problems() -> None:
    rng = np.random.default_rng(20240611)
    solver = QpSolver(warm_start=False)
    for _ in range(200):
        problem = _random_problem(rng)
        result = solver.solve(problem)
        assert result.optimal
        assert result.kkt_residual <= 1e-8
        assert np.max(np.abs(result.x - _enumerate(problem))) <= 1e-8


@pytest.mark.parametrize("scale", [1e-3, 1.0, 10.0, 100.0, 1e3])
def test_phase_one_recovers_from_infeasible_start(scale) -> None:
    lower = scale * np.array([1.0, 2.0])
    problem = QpProblem(P=np.eye(2), c=[0.0, 0.0], A_in=-np.eye(2), b_in=-lower)
    result = solve(problem)
    assert result.optimal
    assert result.iterations < 20
    np.testing.assert_allclose(result.x, lower, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(result.y_in, lower, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("scale", [0.01, 1.0, 100.0])
def test_phase_one_on_a_shifted_box(scale) -> None:
    # the cold start x = 0 sits outside the box [2, 3] x [-3, -2] scaled
    box = QpProblem(
        P=np.eye(2),
        c=[0.0, 0.0],
        A_in=np.vstack([np.eye(2), -np.eye(2)]),
        b_in=scale * np.array([3.0, -2.0, -2.0, 3.0]),
    )
    result = solve(box)
    assert result.optimal
    np.testing.assert_allclose(result.x, scale * np.array([2.0, -2.0]), rtol=1e-9, atol=1e-12)
    assert result.kkt_residual <= 1e-9 * max(1.0, scale)


def test_contradictory_inequalities_report_infeasible() -> None:
    problem = QpProblem(P=[[1.0]], c=[0.0], A_in=[[1.0], [-1.0]], b_in=[-1.0, -1.0])
    assert solve(problem).status == "infeasible"


def test_inconsistent_equalities_report_infeasible() -> None:
    problem = QpProblem(P=np.eye(2), c=[0.0, 0.0], A_eq=[[1.0, 0.0], [1.0, 0.0]], b_eq=[0.0, 1.0])
    assert solve(problem).status == "infeasible"


def test_redundant_consistent_equalities_raise() -> None:
    problem = QpProblem(P=np.eye(2), c=[0.0, 0.0], A_eq=[[1.0, 0.0], [1.0, 0.0]], b_eq=[1.0, 1.0])
    with pytest.raises(QpSolverError):
        solve(problem)


def test_indefinite_hessian_raises() -> None:
    with pytest.raises(QpSolverError):
        solve(QpProblem(P=np.diag([1.0, -1.0]), c=[0.0, 0.0]))


def test_iteration_cap_is_a_status() -> None:
    problem = QpProblem(P=np.eye(2), c=[-2.0, -2.0], A_in=np.eye(2), b_in=[0.0, 0.0])
    result = QpSolver(max_iterations=1, warm_start=False).solve(problem)
    assert result.status == "max_iterations"
    assert not result.optimal
    # the first row blocked the only step taken and joined the working set
    assert result.active_set == (0,)
    assert result.y_in.shape == (2,)
    np.testing.assert_allclose(result.x, [0.0, 0.0])
    assert QpSolver(max_iterations=2, warm_start=False).solve(problem).status == "max_iterations"
    assert QpSolver(max_iterations=3, warm_start=False).solve(problem).optimal


def test_warm_start_reuses_previous_active_set() -> None:
    rng = np.random.default_rng(7)
    problem = _random_problem(rng, m_in=6)
    solver = QpSolver()
    cold = solver.solve(problem)
    warm = solver.solve(problem)
    assert warm.iterations <= cold.iterations
    np.testing.assert_allclose(warm.x, cold.x, atol=1e-10)
    solver.reset()
    assert solver.solve(problem).iterations == cold.iterations


def test_kkt_residual_flags_each_violation() -> None:
    problem = QpProblem(P=[[1.0]], c=[-1.0], A_in=[[1.0]], b_in=[0.5])
    assert kkt_residual(problem, [0.5], [], [0.5]) == pytest.approx(0.0)
    assert kkt_residual(problem, [0.7], [], [0.3]) == pytest.approx(0.2)
    assert kkt_residual(problem, [1.0], [], [0.0]) == pytest.approx(0.5)


def test_problem_dimension_checks() -> None:
    with pytest.raises(ValidationError):
        QpProblem(P=np.eye(2), c=[1.0])
    with pytest.raises(ValidationError):
        QpProblem(P=np.eye(2), c=[1.0, 1.0], A_in=[[1.0, 0.0, 0.0]], b_in=[0.0])


@pytest.mark.parametrize("s", [1e-3, 0.5, 40.0])
def test_scaling_the_objective_scales_only_the_duals(s) -> None:
    rng = np.random.default_rng(31)
    for _ in range(20):
        problem = _random_problem(rng)
        scaled = QpProblem(
            P=s * problem.P,
            c=s * problem.c,
            A_eq=problem.A_eq,
            b_eq=problem.b_eq,
            A_in=problem.A_in,
            b_in=problem.b_in,
        )
        base, other = solve(problem), solve(scaled)
        assert np.max(np.abs(other.x - base.x)) <= 1e-8
        np.testing.assert_allclose(other.y_in, s * base.y_in, rtol=1e-6, atol=1e-8 * max(1.0, s))
        np.testing.assert_allclose(other.y_eq, s * base.y_eq, rtol=1e-6, atol=1e-8 * max(1.0, s))


def test_equality_only_problems_match_the_kkt_system() -> None:
    rng = np.random.default_rng(43)
    for _ in range(50):
        n, m = 6, 3
        root = rng.normal(size=(n, n))
        P = root @ root.T + np.eye(n)
        c = rng.normal(size=n)
        A = rng.normal(size=(m, n))
        b = rng.normal(size=m)
        kkt = np.block([[P, A.T], [A, np.zeros((m, m))]])
        expected = np.linalg.solve(kkt, np.concatenate([-c, b]))
        result = solve(QpProblem(P=P, c=c, A_eq=A, b_eq=b))
        assert result.optimal
        assert np.max(np.abs(result.x - expected[:n])) <= 1e-10
        np.testing.assert_allclose(result.y_eq, expected[n:], atol=1e-9)


def test_warm_start_from_a_different_problem_matches_a_cold_solve() -> None:
    rng = np.random.default_rng(59)
    solver = QpSolver()
    previous = _random_problem(rng, m_in=6)
    solver.solve(previous)
    for _ in range(30):
        problem = _random_problem(rng, m_in=6)
        warm = solver.solve(problem)
        cold = solve(problem)
        assert warm.optimal and cold.optimal
        assert np.max(np.abs(warm.x - cold.x)) <= 1e-8


def test_residual_grows_with_a_perturbation_off_the_optimum() -> None:
    problem = QpProblem(P=np.diag([2.0, 1.0]), c=[-2.0, -1.0], A_in=[[1.0, 0.0]], b_in=[0.5])
    result = solve(problem)
    np.testing.assert_allclose(result.x, [0.5, 1.0], atol=1e-12)
    # x_1 is unconstrained; moving it by 1e-3 leaves stationarity error P[1, 1]·1e-3
    perturbed = result.x + np.array([0.0, 1e-3])
    residual = kkt_residual(problem, perturbed, result.y_eq, result.y_in)
    assert residual >= 1e-3 - 1e-15
    assert result.kkt_residual <= 1e-10

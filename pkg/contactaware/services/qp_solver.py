"""Dense convex QP solver for small control problems.

Problems have the standard form::

    minimize    ½ xᵀPx + cᵀx
    subject to  A_eq x = b_eq,   A_in x ≤ b_in

and the Lagrangian convention is
``L = ½xᵀPx + cᵀx + y_eqᵀ(A_eq x − b_eq) + y_inᵀ(A_in x − b_in)`` with
``y_in ≥ 0``. The solver is a primal active-set method: equality rows are
always in the working set, one inequality enters (lowest row index on ties) or
leaves (most negative multiplier, lowest row index on ties) per iteration.
An infeasible starting point is repaired by an elastic phase one with a single
slack variable.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from contactaware.core.config import settings
from contactaware.core.exceptions import QpSolverError, ValidationError
from contactaware.core.types import FloatArray

logger = logging.getLogger(__name__)

QpStatus = Literal["optimal", "infeasible", "max_iterations"]

_RANK_TOLERANCE = 1e-10
_MAX_PENALTY = 1e12


def _matrix(values: Optional[FloatArray], cols: int, name: str) -> FloatArray:
    """Constraint block as a (rows, cols) array; ``None`` and empty inputs become zero rows."""

    if values is None:
        return np.zeros((0, cols))
    array = np.asarray(values, dtype=float)
    if array.size == 0:
        return np.zeros((0, cols))
    array = np.atleast_2d(array)
    if array.ndim != 2 or array.shape[1] != cols:
        raise ValidationError(f"{name} must have {cols} columns, got shape {array.shape}")
    return array


def _vector(values: Optional[FloatArray], size: int, name: str) -> FloatArray:
    if values is None:
        return np.zeros(size)
    array = np.asarray(values, dtype=float).reshape(-1)
    if array.size != size:
        raise ValidationError(f"{name} must have {size} entries, got {array.size}")
    return array


@dataclass(frozen=True, eq=False)
class QpProblem:
    P: FloatArray
    c: FloatArray
    A_eq: FloatArray = field(default=None)  # type: ignore[assignment]
    b_eq: FloatArray = field(default=None)  # type: ignore[assignment]
    A_in: FloatArray = field(default=None)  # type: ignore[assignment]
    b_in: FloatArray = field(default=None)  # type: ignore[assignment]
    warm_x: Optional[FloatArray] = None
    warm_active: Optional[tuple[int, ...]] = None

    def __post_init__(self) -> None:
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        n = P.shape[0]
        if P.shape != (n, n):
            raise ValidationError(f"P must be square, got shape {P.shape}")
        P = 0.5 * (P + P.T)
        c = _vector(self.c, n, "c")
        A_eq = _matrix(self.A_eq, n, "A_eq")
        b_eq = _vector(self.b_eq, A_eq.shape[0], "b_eq")
        A_in = _matrix(self.A_in, n, "A_in")
        b_in = _vector(self.b_in, A_in.shape[0], "b_in")
        for name, value in (("P", P), ("c", c), ("A_eq", A_eq), ("b_eq", b_eq), ("A_in", A_in), ("b_in", b_in)):
            if not np.all(np.isfinite(value)):
                raise ValidationError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        if self.warm_x is not None:
            object.__setattr__(self, "warm_x", _vector(self.warm_x, n, "warm_x"))

    @property
    def n(self) -> int:
        return int(self.P.shape[0])

    @property
    def m_eq(self) -> int:
        return int(self.A_eq.shape[0])

    @property
    def m_in(self) -> int:
        return int(self.A_in.shape[0])


@dataclass(frozen=True, eq=False)
class QpSolution:
    x: FloatArray
    y_eq: FloatArray
    y_in: FloatArray
    status: QpStatus
    kkt_residual: float
    iterations: int = 0
    active_set: tuple[int, ...] = ()
    runtime_s: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def kkt_residual(
    problem: QpProblem,
    x: FloatArray,
    y_eq: FloatArray,
    y_in: FloatArray,
) -> float:
    """Max-norm of stationarity, primal and dual feasibility and complementarity."""

    x = _vector(x, problem.n, "x")
    y_eq = _vector(y_eq, problem.m_eq, "y_eq")
    y_in = _vector(y_in, problem.m_in, "y_in")

    stationarity = problem.P @ x + problem.c + problem.A_eq.T @ y_eq + problem.A_in.T @ y_in
    terms = [float(np.max(np.abs(stationarity), initial=0.0))]
    terms.append(float(np.max(np.abs(problem.A_eq @ x - problem.b_eq), initial=0.0)))
    slack = problem.A_in @ x - problem.b_in
    terms.append(float(max(0.0, np.max(slack, initial=0.0))))
    terms.append(float(max(0.0, -np.min(y_in, initial=0.0))))
    terms.append(float(np.max(np.abs(y_in * slack), initial=0.0)))
    return max(terms)


@dataclass
class _Iterate:
    x: FloatArray
    y_eq: FloatArray
    y_working: FloatArray
    working: list[int]
    iterations: int
    converged: bool


class QpSolver:
    """Active-set QP solver holding warm-start state for one consumer.

    Instances are not shared between concurrent runs; each controller and the
    simulator own one.
    """

    def __init__(
        self,
        tolerance: Optional[float] = None,
        max_iterations: Optional[int] = None,
        *,
        penalty: Optional[float] = None,
        warm_start: bool = True,
    ) -> None:
        self.tolerance = float(tolerance if tolerance is not None else settings.qp_tolerance)
        self.max_iterations = int(max_iterations if max_iterations is not None else settings.qp_max_iterations)
        self.penalty = float(penalty if penalty is not None else settings.qp_penalty)
        if self.tolerance <= 0 or self.max_iterations < 1 or self.penalty <= 0:
            raise ValidationError("tolerance, max_iterations and penalty must be positive")
        self.warm_start = warm_start
        self._last_x: Optional[FloatArray] = None
        self._last_active: tuple[int, ...] = ()

    def reset(self) -> None:
        self._last_x = None
        self._last_active = ()

    def solve(self, problem: QpProblem) -> QpSolution:
        started = time.perf_counter()
        solution = self._solve(problem)
        runtime = time.perf_counter() - started
        if solution.status == "optimal" and self.warm_start:
            self._last_x = solution.x.copy()
            self._last_active = solution.active_set
        logger.debug(
            "QP solved",
            extra={
                "status": solution.status,
                "iterations": solution.iterations,
                "kkt_residual": solution.kkt_residual,
                "n": problem.n,
            },
        )
        return QpSolution(
            x=solution.x,
            y_eq=solution.y_eq,
            y_in=solution.y_in,
            status=solution.status,
            kkt_residual=solution.kkt_residual,
            iterations=solution.iterations,
            active_set=solution.active_set,
            runtime_s=runtime,
        )

    # ------------------------------------------------------------------ setup

    def _solve(self, problem: QpProblem) -> QpSolution:
        n, m_eq, m_in = problem.n, problem.m_eq, problem.m_in
        tol = self.tolerance

        if m_eq:
            singular = np.linalg.svd(problem.A_eq, compute_uv=False)
            rank = int(np.sum(singular > _RANK_TOLERANCE * max(1.0, float(singular[0]))))
            if rank < m_eq:
                x_ls = np.linalg.lstsq(problem.A_eq, problem.b_eq, rcond=None)[0]
                if np.max(np.abs(problem.A_eq @ x_ls - problem.b_eq)) > tol * (1.0 + np.max(np.abs(problem.b_eq))):
                    return self._infeasible(problem, x_ls, 0)
                raise QpSolverError(f"equality constraints are rank deficient (rank {rank} < {m_eq})")

        self._check_reduced_hessian(problem)

        x0, working = self._starting_point(problem)
        iterations = 0
        if m_in:
            violation = float(np.max(problem.A_in @ x0 - problem.b_in))
            if violation > tol:
                phase_one = self._phase_one(problem, x0, violation)
                if phase_one is None:
                    return self._infeasible(problem, x0, self.max_iterations)
                x0, working, iterations = phase_one

        iterate = _active_set_loop(
            problem.P,
            problem.c,
            problem.A_eq,
            problem.b_eq,
            problem.A_in,
            problem.b_in,
            x0,
            working,
            self.max_iterations - iterations,
            tol,
        )
        iterations += iterate.iterations
        x, y_eq, y_in = iterate.x, iterate.y_eq, np.zeros(m_in)
        y_in[iterate.working] = np.maximum(iterate.y_working, 0.0)
        residual = kkt_residual(problem, x, y_eq, y_in)
        if iterate.converged and residual > tol:
            x, y_eq, y_in = _refine(problem, x, y_eq, y_in, iterate.working)
            residual = kkt_residual(problem, x, y_eq, y_in)
        status: QpStatus = "optimal" if iterate.converged else "max_iterations"
        if status == "optimal" and residual > tol:
            raise QpSolverError(f"KKT residual {residual:.3e} exceeds tolerance {tol:.1e}")
        if status == "max_iterations":
            logger.warning("QP hit the iteration cap", extra={"iterations": iterations, "kkt_residual": residual})
        return QpSolution(
            x=x,
            y_eq=y_eq,
            y_in=y_in,
            status=status,
            kkt_residual=residual,
            iterations=iterations,
            active_set=tuple(sorted(iterate.working)),
        )

    def _infeasible(self, problem: QpProblem, x: FloatArray, iterations: int) -> QpSolution:
        y_eq, y_in = np.zeros(problem.m_eq), np.zeros(problem.m_in)
        return QpSolution(
            x=x,
            y_eq=y_eq,
            y_in=y_in,
            status="infeasible",
            kkt_residual=kkt_residual(problem, x, y_eq, y_in),
            iterations=iterations,
        )

    @staticmethod
    def _check_reduced_hessian(problem: QpProblem) -> None:
        if problem.m_eq:
            _, singular, vt = np.linalg.svd(problem.A_eq)
            basis = vt[problem.m_eq :].T
        else:
            basis = np.eye(problem.n)
        if basis.shape[1] == 0:
            return
        reduced = basis.T @ problem.P @ basis
        try:
            factor = np.linalg.cholesky(reduced)
        except np.linalg.LinAlgError as exc:
            raise QpSolverError("reduced Hessian is not positive definite") from exc
        pivots = np.diag(factor) ** 2
        if np.min(pivots) <= 1e-12 * max(1.0, float(np.max(pivots))):
            raise QpSolverError("reduced Hessian is numerically singular")

    def _starting_point(self, problem: QpProblem) -> tuple[FloatArray, list[int]]:
        n, tol = problem.n, self.tolerance
        warm_x = problem.warm_x
        warm_active = problem.warm_active
        if warm_x is None and self.warm_start and self._last_x is not None and self._last_x.size == n:
            warm_x = self._last_x
            warm_active = self._last_active
        x = np.zeros(n) if warm_x is None else np.array(warm_x, dtype=float)

        if problem.m_eq:
            gram = problem.A_eq @ problem.A_eq.T
            x = x - problem.A_eq.T @ np.linalg.solve(gram, problem.A_eq @ x - problem.b_eq)

        return x, _select_working(problem, x, warm_active or (), tol)

    def _phase_one(
        self,
        problem: QpProblem,
        x0: FloatArray,
        violation: float,
    ) -> Optional[tuple[FloatArray, list[int], int]]:
        """Elastic problem over (x, t): min f(x) + M·t + ½t², A_in x − t ≤ b_in, t ≥ 0."""

        n, m_in, tol = problem.n, problem.m_in, self.tolerance
        P = np.zeros((n + 1, n + 1))
        P[:n, :n] = problem.P
        P[n, n] = 1.0
        A_eq = np.hstack([problem.A_eq, np.zeros((problem.m_eq, 1))])
        A_in = np.vstack(
            [
                np.hstack([problem.A_in, -np.ones((m_in, 1))]),
                np.hstack([np.zeros((1, n)), -np.ones((1, 1))]),
            ]
        )
        b_in = np.concatenate([problem.b_in, [0.0]])

        z = np.concatenate([x0, [violation]])
        working: list[int] = []
        used = 0
        penalty = self.penalty
        while penalty <= _MAX_PENALTY:
            c = np.concatenate([problem.c, [penalty]])
            iterate = _active_set_loop(P, c, A_eq, problem.b_eq, A_in, b_in, z, working, self.max_iterations - used, tol)
            used += iterate.iterations
            z, working = iterate.x, iterate.working
            if not iterate.converged:
                logger.warning("QP phase one hit the iteration cap", extra={"iterations": used})
                return None
            if z[n] <= tol:
                x = z[:n]
                return x, _select_working(problem, x, [i for i in working if i < m_in], tol), used
            penalty *= 100.0
        logger.debug("QP phase one left a residual violation", extra={"violation": float(z[n])})
        return None


def _select_working(problem: QpProblem, x: FloatArray, candidates: Sequence[int], tol: float) -> list[int]:
    """Near-active candidate rows, kept in ascending order while they stay independent."""

    working: list[int] = []
    rows = problem.A_eq
    for index in sorted(i for i in candidates if 0 <= i < problem.m_in):
        if abs(float(problem.A_in[index] @ x - problem.b_in[index])) > tol:
            continue
        if _independent(rows, problem.A_in[index]):
            working.append(index)
            rows = np.vstack([rows, problem.A_in[index]])
    return working


def _independent(rows: FloatArray, candidate: FloatArray) -> bool:
    norm = float(np.linalg.norm(candidate))
    if norm == 0.0:
        return False
    if rows.shape[0] == 0:
        return True
    coefficients = np.linalg.lstsq(rows.T, candidate, rcond=None)[0]
    return float(np.linalg.norm(rows.T @ coefficients - candidate)) > 1e-9 * norm


def _kkt_solve(P: FloatArray, A_W: FloatArray, rhs_top: FloatArray, rhs_bottom: FloatArray) -> FloatArray:
    n, m = P.shape[0], A_W.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = P
    kkt[:n, n:] = A_W.T
    kkt[n:, :n] = A_W
    try:
        return np.linalg.solve(kkt, np.concatenate([rhs_top, rhs_bottom]))
    except np.linalg.LinAlgError as exc:
        raise QpSolverError("KKT system of the working set is singular") from exc


def _active_set_loop(
    P: FloatArray,
    c: FloatArray,
    A_eq: FloatArray,
    b_eq: FloatArray,
    A_in: FloatArray,
    b_in: FloatArray,
    x: FloatArray,
    working: Sequence[int],
    max_iterations: int,
    tol: float,
) -> _Iterate:
    """Primal active-set iterations from a feasible ``x``.

    A full step lands on the minimizer of the working set, so optimality is
    decided by the multipliers of that step alone and never by a step-length
    threshold.
    """

    n, m_eq = P.shape[0], A_eq.shape[0]
    x = np.array(x, dtype=float)
    working = sorted(working)
    y_eq = np.zeros(m_eq)
    duals: dict[int, float] = {}

    for iteration in range(1, max(max_iterations, 0) + 1):
        A_W = np.vstack([A_eq, A_in[working]]) if working else A_eq
        b_W = np.concatenate([b_eq, b_in[working]]) if working else b_eq
        gradient = P @ x + c
        solution = _kkt_solve(P, A_W, -gradient, b_W - A_W @ x)
        step, multipliers = solution[:n], solution[n:]
        y_eq, y_working = multipliers[:m_eq], multipliers[m_eq:]
        duals = dict(zip(working, y_working.tolist()))

        blocking, alpha = _blocking_row(A_in, b_in, A_W, x, step, working)
        x = x + alpha * step
        if blocking is not None:
            working = sorted(working + [blocking])
            continue

        dual_tol = max(min(tol, 1e-10), 1e-12 * float(np.max(np.abs(multipliers), initial=0.0)))
        if not working or np.min(y_working) >= -dual_tol:
            return _Iterate(x, y_eq, y_working, working, iteration, True)
        # most negative multiplier leaves; ties go to the lowest row index
        leaving = min(range(len(working)), key=lambda k: (y_working[k], working[k]))
        working.pop(leaving)

    y_working = np.array([duals.get(index, 0.0) for index in working])
    return _Iterate(x, y_eq, y_working, working, max(max_iterations, 0), False)


def _blocking_row(
    A_in: FloatArray,
    b_in: FloatArray,
    A_W: FloatArray,
    x: FloatArray,
    step: FloatArray,
    working: Sequence[int],
) -> tuple[Optional[int], float]:
    """Ratio test: the first independent row hit along ``step`` and the step fraction that reaches it."""

    scale = float(np.max(np.abs(step), initial=0.0))
    if scale == 0.0:
        return None, 1.0
    candidates: list[tuple[float, int]] = []
    for index in range(A_in.shape[0]):
        if index in working:
            continue
        rate = float(A_in[index] @ step)
        if rate <= 1e-14 * (1.0 + float(np.linalg.norm(A_in[index]))) * scale:
            continue
        ratio = max(float(b_in[index] - A_in[index] @ x), 0.0) / rate
        if ratio < 1.0:
            candidates.append((ratio, index))
    for ratio, index in sorted(candidates):
        if _independent(A_W, A_in[index]):
            return index, ratio
    return None, 1.0


def _refine(
    problem: QpProblem,
    x: FloatArray,
    y_eq: FloatArray,
    y_in: FloatArray,
    working: Sequence[int],
) -> tuple[FloatArray, FloatArray, FloatArray]:
    """One Newton correction of the working-set KKT system."""

    working = list(working)
    A_W = np.vstack([problem.A_eq, problem.A_in[working]]) if working else problem.A_eq
    b_W = np.concatenate([problem.b_eq, problem.b_in[working]]) if working else problem.b_eq
    multipliers = np.concatenate([y_eq, y_in[working]])
    stationarity = problem.P @ x + problem.c + A_W.T @ multipliers
    correction = _kkt_solve(problem.P, A_W, -stationarity, b_W - A_W @ x)
    n = problem.n
    x = x + correction[:n]
    multipliers = multipliers + correction[n:]
    y_in = np.zeros(problem.m_in)
    y_in[working] = np.maximum(multipliers[problem.m_eq :], 0.0)
    return x, multipliers[: problem.m_eq], y_in


def solve(
    problem: QpProblem,
    tolerance: Optional[float] = None,
    max_iterations: Optional[int] = None,
) -> QpSolution:
    """Cold single-shot solve."""

    return QpSolver(tolerance, max_iterations, warm_start=False).solve(problem)

"""Sequential quadratic programming with a Gauss-Newton objective model.

Problems have the form::

    minimize    ||r(z)||^2 + g . z
    subject to  c(z) = 0,  lower <= z <= upper

Each iteration linearizes r and c, solves the bound-constrained equality QP
with a primal active set, and takes a backtracking step on the l1 exact
penalty merit function.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import DimensionMismatchError

logger = logging.getLogger(__name__)

ArrayFn = Callable[[np.ndarray], np.ndarray]
MatrixFn = Callable[[np.ndarray], "np.ndarray | sparse.spmatrix"]

_ARMIJO = 1e-4
_MIN_STEP = 1e-10
_MAX_ACTIVE_SET_ROUNDS = 50


class SolverStatus(str, Enum):
    """Termination status of a solve."""

    CONVERGED = "Converged"
    ITERATION_LIMIT = "IterationLimit"
    TIME_LIMIT = "TimeLimit"
    NUMERICAL_FAILURE = "NumericalFailure"
    STALLED = "Stalled"  # line search could not reduce the merit function


class HessianStrategy(str, Enum):
    """Objective curvature model."""

    GAUSS_NEWTON = "gauss_newton"
    DIAGONAL_REGULARIZED = "diagonal_regularized"  # Gauss-Newton plus Marquardt diagonal scaling


@dataclass(frozen=True)
class SolverSettings:
    kkt_tolerance: float = 1e-6
    max_iterations: int = 100
    max_wall_time: float | None = 0.05
    hessian_strategy: HessianStrategy = HessianStrategy.GAUSS_NEWTON
    regularization: float = 1e-8
    marquardt: float = 1e-3

    def __post_init__(self) -> None:
        if not self.kkt_tolerance > 0:
            raise ValueError("kkt_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.max_wall_time is not None and not self.max_wall_time > 0:
            raise ValueError("max_wall_time must be positive")


@dataclass(frozen=True)
class StageBlocks:
    """Decision-vector indices grouped by shooting stage (states, inputs, slacks)."""

    states: tuple[np.ndarray, ...]
    inputs: tuple[np.ndarray, ...]
    slacks: np.ndarray


@dataclass
class NLPProblem:
    """Least-squares-plus-linear objective with equality constraints and bounds."""

    dimension: int
    residuals: ArrayFn
    residual_jacobian: MatrixFn
    linear_cost: np.ndarray
    lower_bounds: np.ndarray
    upper_bounds: np.ndarray
    constraints: ArrayFn | None = None
    constraint_jacobian: MatrixFn | None = None
    sparsity: StageBlocks | None = None

    def __post_init__(self) -> None:
        for name in ("linear_cost", "lower_bounds", "upper_bounds"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (self.dimension,):
                raise DimensionMismatchError(
                    f"{name} has shape {arr.shape}, expected ({self.dimension},)"
                )
            setattr(self, name, arr)
        if (self.constraints is None) != (self.constraint_jacobian is None):
            raise DimensionMismatchError("constraints and constraint_jacobian go together")

    def objective(self, z: np.ndarray) -> float:
        r = self.residuals(z)
        return float(r @ r + self.linear_cost @ z)

    def gradient(self, z: np.ndarray) -> np.ndarray:
        return 2.0 * (self.residual_csr(z).T @ self.residuals(z)) + self.linear_cost

    def constraint_values(self, z: np.ndarray) -> np.ndarray:
        if self.constraints is None:
            return np.zeros(0)
        return np.asarray(self.constraints(z), dtype=float)

    def constraint_matrix(self, z: np.ndarray) -> np.ndarray:
        return self.constraint_csr(z).toarray()

    def residual_csr(self, z: np.ndarray) -> sparse.csr_matrix:
        return _as_csr(self.residual_jacobian(z))

    def constraint_csr(self, z: np.ndarray) -> sparse.csr_matrix:
        if self.constraint_jacobian is None:
            return sparse.csr_matrix((0, self.dimension))
        return _as_csr(self.constraint_jacobian(z))


@dataclass
class Solution:
    point: np.ndarray
    objective_value: float
    kkt_residual: float
    constraint_violation: float
    iterations: int
    wall_time: float
    status: SolverStatus
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # (merit before, merit after) per accepted step, both at that step's penalty
    merit_steps: list[tuple[float, float]] = field(default_factory=list)


def _as_csr(matrix: np.ndarray | sparse.spmatrix) -> sparse.csr_matrix:
    if sparse.issparse(matrix):
        return sparse.csr_matrix(matrix, dtype=float)
    return sparse.csr_matrix(np.atleast_2d(np.asarray(matrix, dtype=float)))


def _at_bounds(z: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    at_lower = z <= lower + 1e-10 * (1.0 + np.abs(lower))
    at_upper = z >= upper - 1e-10 * (1.0 + np.abs(upper))
    return at_lower, at_upper


def _sparse_solve(matrix: sparse.spmatrix, rhs: np.ndarray) -> np.ndarray:
    """Sparse LU solve, least squares when the matrix is singular."""
    try:
        sol = splu(sparse.csc_matrix(matrix)).solve(rhs)
        scale = 1.0 + float(np.max(np.abs(rhs), initial=0.0))
        if np.all(np.isfinite(sol)) and np.max(np.abs(matrix @ sol - rhs), initial=0.0) <= 1e-8 * scale:
            return sol
    except RuntimeError:
        pass
    return np.linalg.lstsq(matrix.toarray(), rhs, rcond=None)[0]


def _kkt_measures(
    z: np.ndarray,
    grad: np.ndarray,
    c: np.ndarray,
    jac_c: sparse.csr_matrix,
    lower: np.ndarray,
    upper: np.ndarray,
) -> tuple[float, float, np.ndarray]:
    at_lower, at_upper = _at_bounds(z, lower, upper)
    free = np.flatnonzero(~(at_lower | at_upper))
    lam = np.zeros(c.size)
    if c.size and free.size:
        # least-squares multipliers from the normal equations of the free columns
        a_free = jac_c.tocsc()[:, free]
        gram = (a_free @ a_free.T).tocsc()
        gram = gram + sparse.identity(c.size, format="csc") * (1e-12 * (1.0 + abs(gram).max()))
        lam = _sparse_solve(gram, -(a_free @ grad[free]))
    grad_l = grad + jac_c.T @ lam if c.size else grad
    projected = z - np.clip(z - grad_l, lower, upper)
    stationarity = float(np.max(np.abs(projected))) if z.size else 0.0

    violation = 0.0
    if c.size:
        violation = float(np.max(np.abs(c)))
    violation = max(
        violation,
        float(np.max(lower - z, initial=0.0)),
        float(np.max(z - upper, initial=0.0)),
    )
    return stationarity, violation, lam


def kkt_residual(problem: NLPProblem, candidate: np.ndarray) -> tuple[float, float]:
    """Max-norm projected Lagrangian gradient and max-norm constraint/bound violation."""
    z = np.asarray(candidate, dtype=float)
    if z.shape != (problem.dimension,):
        raise DimensionMismatchError(f"Candidate has shape {z.shape}, expected ({problem.dimension},)")
    stationarity, violation, _ = _kkt_measures(
        z,
        problem.gradient(z),
        problem.constraint_values(z),
        problem.constraint_csr(z),
        problem.lower_bounds,
        problem.upper_bounds,
    )
    return stationarity, violation


def _equality_qp(
    hess: sparse.csr_matrix,
    grad: np.ndarray,
    jac_c: sparse.csc_matrix,
    c: np.ndarray,
    fixed: np.ndarray,
    target: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    free = np.flatnonzero(~fixed)
    m = c.size
    step = np.where(fixed, target, 0.0)
    if free.size == 0:
        return step, np.zeros(m)

    rhs_top = -(grad + hess @ step)[free]
    h_ff = hess[free][:, free]
    if m == 0:
        step[free] = _sparse_solve(h_ff, rhs_top)
        return step, np.zeros(0)

    c_free = jac_c[:, free]
    rhs_bottom = -(c + jac_c @ step)
    kkt = sparse.bmat([[h_ff, c_free.T], [c_free, None]], format="csc")
    sol = _sparse_solve(kkt, np.concatenate([rhs_top, rhs_bottom]))
    step[free] = sol[: free.size]
    return step, sol[free.size :]


def _qp_step(
    hess: sparse.csr_matrix,
    grad: np.ndarray,
    jac_c: sparse.csr_matrix,
    c: np.ndarray,
    z: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Primal active-set solve of the bound-constrained QP subproblem."""
    lo = lower - z
    hi = upper - z
    at_lower, at_upper = _at_bounds(z, lower, upper)
    jac_c_cols = jac_c.tocsc()

    fixed = (at_lower & (grad > 0)) | (at_upper & (grad < 0))
    side = np.where(at_lower & (grad > 0), -1, np.where(at_upper & (grad < 0), 1, 0))
    target = np.where(side < 0, lo, np.where(side > 0, hi, 0.0))
    dual_tol = 1e-9 * (1.0 + float(np.max(np.abs(grad), initial=0.0)))

    step, lam = np.zeros_like(z), np.zeros(c.size)
    for _ in range(_MAX_ACTIVE_SET_ROUNDS):
        step, lam = _equality_qp(hess, grad, jac_c_cols, c, fixed, target)
        below = ~fixed & (step < lo - 1e-12)
        above = ~fixed & (step > hi + 1e-12)
        if below.any() or above.any():
            fixed = fixed | below | above
            side = np.where(below, -1, np.where(above, 1, side))
            target = np.where(below, lo, np.where(above, hi, target))
            continue

        lagrangian_grad = hess @ step + grad
        if c.size:
            lagrangian_grad = lagrangian_grad + jac_c.T @ lam
        wrong = fixed & (
            ((side < 0) & (lagrangian_grad < -dual_tol)) | ((side > 0) & (lagrangian_grad > dual_tol))
        )
        if not wrong.any():
            break
        worst = int(np.argmax(np.where(wrong, np.abs(lagrangian_grad), -np.inf)))
        fixed[worst] = False
        side[worst] = 0

    return np.clip(step, lo, hi), lam


def _hessian(jac_r: sparse.csr_matrix, settings: SolverSettings) -> sparse.csr_matrix:
    hess = (2.0 * (jac_r.T @ jac_r)).tocsr()
    diagonal = hess.diagonal()
    if settings.hessian_strategy == HessianStrategy.DIAGONAL_REGULARIZED:
        diagonal = diagonal * settings.marquardt
    else:
        diagonal = np.zeros_like(diagonal)
    return (hess + sparse.diags(diagonal + settings.regularization)).tocsr()


def solve(problem: NLPProblem, guess: np.ndarray, settings: SolverSettings | None = None) -> Solution:
    """Solve ``problem`` from ``guess``. Deterministic unless the wall-time budget triggers."""
    settings = settings or SolverSettings()
    guess = np.asarray(guess, dtype=float)
    if guess.shape != (problem.dimension,):
        raise DimensionMismatchError(f"Guess has shape {guess.shape}, expected ({problem.dimension},)")

    start = time.perf_counter()
    lower, upper = problem.lower_bounds, problem.upper_bounds
    z = np.clip(guess, lower, upper)
    penalty = 1.0
    merit_steps: list[tuple[float, float]] = []
    status = SolverStatus.ITERATION_LIMIT
    stationarity = violation = np.inf
    lam = np.zeros(0)
    objective = np.nan
    iteration = 0

    while True:
        r = problem.residuals(z)
        jac_r = problem.residual_csr(z)
        c = problem.constraint_values(z)
        jac_c = problem.constraint_csr(z)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(c)) and np.all(np.isfinite(jac_r.data))):
            status = SolverStatus.NUMERICAL_FAILURE
            break
        grad = 2.0 * (jac_r.T @ r) + problem.linear_cost
        objective = float(r @ r + problem.linear_cost @ z)
        stationarity, violation, lam = _kkt_measures(z, grad, c, jac_c, lower, upper)

        if stationarity <= settings.kkt_tolerance and violation <= settings.kkt_tolerance:
            status = SolverStatus.CONVERGED
            break
        if iteration >= settings.max_iterations:
            status = SolverStatus.ITERATION_LIMIT
            break
        if settings.max_wall_time is not None and time.perf_counter() - start > settings.max_wall_time:
            status = SolverStatus.TIME_LIMIT
            break

        step, qp_lam = _qp_step(_hessian(jac_r, settings), grad, jac_c, c, z, lower, upper)
        if not np.all(np.isfinite(step)):
            status = SolverStatus.NUMERICAL_FAILURE
            break
        if qp_lam.size:
            penalty = max(penalty, 1.1 * float(np.max(np.abs(qp_lam))) + 1e-3)

        c_norm = float(np.sum(np.abs(c)))
        merit = objective + penalty * c_norm
        slope = min(float(grad @ step) - penalty * c_norm, 0.0)

        alpha = 1.0
        accepted = False
        while alpha >= _MIN_STEP:
            trial = np.clip(z + alpha * step, lower, upper)
            r_t = problem.residuals(trial)
            c_t = problem.constraint_values(trial)
            merit_t = float(r_t @ r_t + problem.linear_cost @ trial) + penalty * float(np.sum(np.abs(c_t)))
            if np.isfinite(merit_t) and merit_t <= merit + _ARMIJO * alpha * slope:
                accepted = True
                break
            alpha *= 0.5

        if not accepted:
            status = SolverStatus.STALLED
            break
        merit_steps.append((merit, merit_t))
        z = trial
        iteration += 1

    wall_time = time.perf_counter() - start
    if status != SolverStatus.CONVERGED:
        logger.debug(
            f"Solve ended with {status.value} after {iteration} iterations "
            f"(kkt={stationarity:.2e}, violation={violation:.2e})"
        )
    return Solution(
        point=z,
        objective_value=objective,
        kkt_residual=stationarity,
        constraint_violation=violation,
        iterations=iteration,
        wall_time=wall_time,
        status=status,
        multipliers=lam,
        merit_steps=merit_steps,
    )

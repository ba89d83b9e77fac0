"""
Small linear-programming core.

Every problem has the shape

    min  c.x   s.t.   A_eq x = b_eq,   A_ge x >= b_ge,   lo <= x <= hi

Duals come back eq rows first, then geq rows. For a minimization the dual of a
geq row is >= 0 and equals the derivative of the optimal value with respect to
that row's right-hand side; eq-row duals are free with the same meaning.

Two backends share this contract:

* ``simplex``: an in-process bounded revised simplex (dense, explicit basis
  inverse with rank-one updates, Dantzig pricing that falls back to Bland's
  rule). Deterministic pivoting, used for the small subproblem LPs when
  ``LP_METHOD=simplex`` and as the reference in the property tests.
* ``highs``: ``scipy.optimize.linprog(method="highs")``. Accepts
  ``scipy.sparse`` matrices, so the extensive-form oracle goes through it.
"""
import enum
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from dualdp import config
from dualdp.app_log_config import logger
from dualdp.services.exceptions import DimensionError, NumericalFailure, StatusError


FEAS_TOL = 1e-9
CERT_TOL = 1e-7
PIVOT_TOL = 1e-11
REFACTOR_EVERY = 50
PERTURBATION = 1e-10


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


def _as_matrix(matrix, n_cols: int):
    if matrix is None:
        return np.zeros((0, n_cols))
    if sparse.issparse(matrix):
        return sparse.csr_matrix(matrix, dtype=float)
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim == 1 and matrix.size == 0:
        return np.zeros((0, n_cols))
    return np.atleast_2d(matrix)


def _has_nan(matrix) -> bool:
    data = matrix.data if sparse.issparse(matrix) else matrix
    return bool(np.isnan(data).any())


@dataclass(frozen=True)
class LpProblem:
    objective: np.ndarray
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    geq_matrix: np.ndarray
    geq_rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).ravel()
        n = c.size
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "eq_matrix", _as_matrix(self.eq_matrix, n))
        object.__setattr__(self, "geq_matrix", _as_matrix(self.geq_matrix, n))
        object.__setattr__(self, "eq_rhs", np.asarray(self.eq_rhs, dtype=float).ravel())
        object.__setattr__(self, "geq_rhs", np.asarray(self.geq_rhs, dtype=float).ravel())
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float).ravel())
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float).ravel())

        for name, matrix, rhs in (
            ("eq", self.eq_matrix, self.eq_rhs),
            ("geq", self.geq_matrix, self.geq_rhs),
        ):
            if matrix.shape[1] != n:
                raise DimensionError(f"{name} matrix has {matrix.shape[1]} columns, expected {n}")
            if matrix.shape[0] != rhs.size:
                raise DimensionError(f"{name} matrix has {matrix.shape[0]} rows but rhs has {rhs.size}")
            if _has_nan(matrix) or np.isnan(rhs).any():
                raise ValueError(f"NaN entry in {name} rows")
        if self.lower.size != n or self.upper.size != n:
            raise DimensionError("variable bounds do not match the objective length")
        if np.isnan(c).any() or np.isnan(self.lower).any() or np.isnan(self.upper).any():
            raise ValueError("NaN entry in objective or bounds")
        if (self.lower > self.upper).any():
            raise ValueError("lower bound above upper bound")

    @classmethod
    def build(cls, objective, eq=None, geq=None, lower=None, upper=None) -> "LpProblem":
        """Convenience constructor; rows are (matrix, rhs) pairs, bounds default to [0, inf)."""
        n = np.asarray(objective).size
        eq_matrix, eq_rhs = eq if eq is not None else (None, np.zeros(0))
        geq_matrix, geq_rhs = geq if geq is not None else (None, np.zeros(0))
        lower = np.zeros(n) if lower is None else np.broadcast_to(np.asarray(lower, dtype=float), (n,))
        upper = np.full(n, np.inf) if upper is None else np.broadcast_to(np.asarray(upper, dtype=float), (n,))
        return cls(objective, eq_matrix, eq_rhs, geq_matrix, geq_rhs, lower, upper)

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_eq(self) -> int:
        return self.eq_rhs.size

    @property
    def n_geq(self) -> int:
        return self.geq_rhs.size

    @property
    def n_rows(self) -> int:
        return self.n_eq + self.n_geq

    @property
    def rhs(self) -> np.ndarray:
        return np.concatenate([self.eq_rhs, self.geq_rhs])

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        eq = self.eq_matrix.toarray() if sparse.issparse(self.eq_matrix) else self.eq_matrix
        geq = self.geq_matrix.toarray() if sparse.issparse(self.geq_matrix) else self.geq_matrix
        return eq, geq


@dataclass(frozen=True)
class LpSolution:
    status: LpStatus
    x: np.ndarray
    objective_value: float
    duals: np.ndarray
    reduced_costs: np.ndarray
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


# --- Bounded revised simplex ---

_AT_LOWER, _AT_UPPER, _FREE_ZERO = 0, 1, 2


class _Stalled(Exception):
    pass


class BoundedSimplex:
    """
    Two-phase bounded revised simplex on the standard form

        [A_eq  0 ] [x]   [b_eq]
        [A_ge -I ] [s] = [b_ge],   s >= 0,

    with one artificial column per row that starts infeasible. Artificial
    bounds are [0, inf) in phase I and [0, 0] in phase II.
    """

    def __init__(self, p: LpProblem, rhs_shift: np.ndarray | None = None):
        eq, geq = p.dense()
        self.n = p.n_vars
        self.m_eq, self.m_ge = p.n_eq, p.n_geq
        self.m = self.m_eq + self.m_ge
        n, m_ge, m = self.n, self.m_ge, self.m

        self.n_cols = n + m_ge + m
        self.art0 = n + m_ge
        A = np.zeros((m, self.n_cols))
        A[: self.m_eq, :n] = eq
        A[self.m_eq:, :n] = geq
        A[self.m_eq:, n: n + m_ge] = -np.eye(m_ge)
        self.A = A
        self.b = p.rhs if rhs_shift is None else p.rhs + rhs_shift

        self.cost = np.concatenate([p.objective, np.zeros(m_ge + m)])
        self.lo = np.concatenate([p.lower, np.zeros(m_ge), np.zeros(m)])
        self.hi = np.concatenate([p.upper, np.full(m_ge, np.inf), np.zeros(m)])
        self.iterations = 0

    # -- setup --

    def _initial_basis(self):
        n, m_eq = self.n, self.m_eq
        z = np.zeros(self.n_cols)
        state = np.full(self.n_cols, _AT_LOWER)
        for j in range(self.art0):
            if np.isfinite(self.lo[j]):
                z[j] = self.lo[j]
            elif np.isfinite(self.hi[j]):
                z[j], state[j] = self.hi[j], _AT_UPPER
            else:
                state[j] = _FREE_ZERO

        residual = self.b - self.A[:, :n] @ z[:n]
        basis = np.empty(self.m, dtype=int)
        diag = np.empty(self.m)
        phase_one_cost = np.zeros(self.n_cols)
        for i in range(self.m):
            art = self.art0 + i
            if i >= m_eq and -residual[i] >= 0.0:
                # slack a.x - b_i is already nonnegative
                basis[i] = n + (i - m_eq)
                diag[i] = -1.0
                continue
            sign = 1.0 if residual[i] >= 0.0 else -1.0
            self.A[i, art] = sign
            self.hi[art] = np.inf
            phase_one_cost[art] = 1.0
            basis[i] = art
            diag[i] = sign
        self.basis = basis
        self.Binv = np.diag(1.0 / diag) if self.m else np.zeros((0, 0))
        self.z, self.state = z, state
        return phase_one_cost

    def _refactor(self):
        if self.m == 0:
            return
        try:
            self.Binv = np.linalg.inv(self.A[:, self.basis])
        except np.linalg.LinAlgError as exc:
            raise _Stalled("singular basis on refactorization") from exc

    def _basic_values(self) -> np.ndarray:
        nonbasic = self.z.copy()
        nonbasic[self.basis] = 0.0
        return self.Binv @ (self.b - self.A @ nonbasic)

    # -- main loop --

    def _iterate(self, cost: np.ndarray) -> str:
        bland_after = 10 * (self.m + self.n_cols)
        limit = 50 * (self.m + self.n_cols) + 1000
        local = 0
        is_basic = np.zeros(self.n_cols, dtype=bool)
        while True:
            local += 1
            self.iterations += 1
            if local > limit:
                raise _Stalled(f"no progress after {limit} pivots")
            if local % REFACTOR_EVERY == 0:
                self._refactor()

            is_basic[:] = False
            is_basic[self.basis] = True
            xB = self._basic_values()
            y = cost[self.basis] @ self.Binv if self.m else np.zeros(0)
            d = cost - y @ self.A if self.m else cost.copy()
            d[is_basic] = 0.0

            movable = (~is_basic) & (self.hi > self.lo)
            up = movable & (((self.state == _AT_LOWER) & (d < -FEAS_TOL))
                            | ((self.state == _FREE_ZERO) & (d < -FEAS_TOL)))
            down = movable & (((self.state == _AT_UPPER) & (d > FEAS_TOL))
                              | ((self.state == _FREE_ZERO) & (d > FEAS_TOL)))
            eligible = np.flatnonzero(up | down)
            if eligible.size == 0:
                self.xB = xB
                return "optimal"

            if local > bland_after:
                j = int(eligible[0])
            else:
                j = int(eligible[np.argmax(np.abs(d[eligible]))])
            direction = 1.0 if up[j] else -1.0

            alpha = self.Binv @ self.A[:, j] if self.m else np.zeros(0)
            rate = direction * alpha
            ratios = np.full(self.m, np.inf)
            lo_B, hi_B = self.lo[self.basis], self.hi[self.basis]
            dec = rate > PIVOT_TOL
            inc = rate < -PIVOT_TOL
            with np.errstate(invalid="ignore", divide="ignore"):
                ratios[dec] = (xB[dec] - lo_B[dec]) / rate[dec]
                ratios[inc] = (hi_B[inc] - xB[inc]) / -rate[inc]
            ratios[np.isnan(ratios)] = np.inf
            ratios = np.maximum(ratios, 0.0)

            step_enter = self.hi[j] - self.lo[j]
            step_basic = ratios.min() if self.m else np.inf
            if step_enter <= step_basic:
                if not np.isfinite(step_enter):
                    self.xB = xB
                    return "unbounded"
                self.z[j] = self.hi[j] if direction > 0 else self.lo[j]
                self.state[j] = _AT_UPPER if direction > 0 else _AT_LOWER
                continue

            ties = np.flatnonzero(ratios <= step_basic + 1e-12)
            if local > bland_after:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(alpha[ties]))])

            leaving = self.basis[r]
            if rate[r] > 0:
                self.z[leaving], self.state[leaving] = self.lo[leaving], _AT_LOWER
            else:
                self.z[leaving], self.state[leaving] = self.hi[leaving], _AT_UPPER
            self.basis[r] = j

            pivot_row = self.Binv[r] / alpha[r]
            self.Binv -= np.outer(alpha, pivot_row)
            self.Binv[r] = pivot_row

    def solve(self, p: LpProblem) -> LpSolution:
        phase_one_cost = self._initial_basis()
        scale = 1.0 + (np.abs(self.b).max() if self.m else 0.0)

        if phase_one_cost.any():
            self._iterate(phase_one_cost)
            infeasibility = float(phase_one_cost[self.basis] @ self.xB)
            if infeasibility > 10 * FEAS_TOL * scale:
                return self._result(p, LpStatus.INFEASIBLE)
        self.hi[self.art0:] = 0.0

        outcome = self._iterate(self.cost)
        if outcome == "unbounded":
            return self._result(p, LpStatus.UNBOUNDED)
        return self._result(p, LpStatus.OPTIMAL)

    def _result(self, p: LpProblem, status: LpStatus) -> LpSolution:
        z = self.z.copy()
        if self.m:
            z[self.basis] = self.xB
        x = z[: self.n]
        if status is LpStatus.OPTIMAL and self.m:
            y = self.cost[self.basis] @ self.Binv
        else:
            y = np.zeros(self.m)
        eq, geq = p.dense()
        reduced = p.objective - eq.T @ y[: self.m_eq] - geq.T @ y[self.m_eq:]
        return LpSolution(
            status=status,
            x=x,
            objective_value=float(p.objective @ x) if status is LpStatus.OPTIMAL else np.nan,
            duals=y,
            reduced_costs=reduced,
            iterations=self.iterations,
        )


def _solve_simplex(p: LpProblem) -> LpSolution:
    try:
        return BoundedSimplex(p).solve(p)
    except _Stalled as exc:
        logger.warning(f"Simplex stalled ({exc}); retrying with a perturbed right-hand side")

    rows = np.arange(p.n_rows)
    shift = PERTURBATION * (1.0 + np.abs(p.rhs)) * ((rows % 7) + 1) / 7.0
    try:
        return BoundedSimplex(p, rhs_shift=shift).solve(p)
    except _Stalled as exc:
        raise NumericalFailure(f"simplex failed after perturbation retry: {exc}") from exc


# --- HiGHS backend ---

def _bounds(p: LpProblem) -> list[tuple]:
    lo = [None if np.isneginf(v) else float(v) for v in p.lower]
    hi = [None if np.isposinf(v) else float(v) for v in p.upper]
    return list(zip(lo, hi))


def _solve_highs(p: LpProblem) -> LpSolution:
    kwargs = {"bounds": _bounds(p), "method": "highs"}
    if p.n_eq:
        kwargs["A_eq"], kwargs["b_eq"] = p.eq_matrix, p.eq_rhs
    if p.n_geq:
        kwargs["A_ub"], kwargs["b_ub"] = -p.geq_matrix, -p.geq_rhs

    res = linprog(p.objective, **kwargs)
    if res.status not in (0, 2, 3):
        logger.warning(f"HiGHS returned status {res.status} ({res.message}); retrying without presolve")
        res = linprog(p.objective, options={"presolve": False}, **kwargs)
    if res.status == 2:
        return LpSolution(LpStatus.INFEASIBLE, np.full(p.n_vars, np.nan), np.nan,
                          np.zeros(p.n_rows), np.zeros(p.n_vars))
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED, np.full(p.n_vars, np.nan), -np.inf,
                          np.zeros(p.n_rows), np.zeros(p.n_vars))
    if res.status != 0:
        raise NumericalFailure(f"HiGHS failed: {res.message}")

    eq_duals = np.asarray(res.eqlin.marginals) if p.n_eq else np.zeros(0)
    geq_duals = -np.asarray(res.ineqlin.marginals) if p.n_geq else np.zeros(0)
    reduced = np.asarray(res.lower.marginals) + np.asarray(res.upper.marginals)
    return LpSolution(
        status=LpStatus.OPTIMAL,
        x=np.asarray(res.x, dtype=float),
        objective_value=float(res.fun),
        duals=np.concatenate([eq_duals, geq_duals]),
        reduced_costs=reduced,
        iterations=int(getattr(res, "nit", 0)),
    )


_BACKENDS = {"simplex": _solve_simplex, "highs": _solve_highs}


def solve_lp(p: LpProblem, method: str | None = None) -> LpSolution:
    method = (method or config.LP_METHOD).lower()
    try:
        backend = _BACKENDS[method]
    except KeyError:
        raise ValueError(f"unknown LP method '{method}'") from None
    return backend(p)


def parametric_dual(p: LpProblem, sol: LpSolution, rhs_direction) -> float:
    """Directional derivative of the optimal value along a right-hand-side perturbation."""
    if not sol.optimal:
        raise StatusError(f"parametric dual needs an optimal solution, got {sol.status.value}")
    direction = np.asarray(rhs_direction, dtype=float).ravel()
    if direction.size != p.n_rows:
        raise DimensionError(f"direction has {direction.size} entries, problem has {p.n_rows} rows")
    return float(sol.duals @ direction)


def solution_residuals(p: LpProblem, sol: LpSolution) -> dict[str, float]:
    """Primal residual, complementary slackness and duality gap of an optimal solution."""
    eq, geq = p.dense()
    x, y = sol.x, sol.duals
    y_eq, y_ge = y[: p.n_eq], y[p.n_eq:]

    eq_res = np.abs(eq @ x - p.eq_rhs).max(initial=0.0)
    ge_slack = geq @ x - p.geq_rhs
    bound_res = max(np.maximum(p.lower - x, 0.0).max(initial=0.0),
                    np.maximum(x - p.upper, 0.0).max(initial=0.0))
    primal = max(eq_res, np.maximum(-ge_slack, 0.0).max(initial=0.0), bound_res)

    d = p.objective - eq.T @ y_eq - geq.T @ y_ge
    d_pos, d_neg = np.maximum(d, 0.0), np.maximum(-d, 0.0)
    with np.errstate(invalid="ignore"):
        at_lo = np.where(d_pos > 0, d_pos * (x - p.lower), 0.0)
        at_hi = np.where(d_neg > 0, d_neg * (p.upper - x), 0.0)
    complementarity = max(np.abs(y_ge * ge_slack).max(initial=0.0),
                          np.abs(at_lo).max(initial=0.0), np.abs(at_hi).max(initial=0.0))

    with np.errstate(invalid="ignore"):
        bound_terms = (np.where(d_pos > 0, d_pos * p.lower, 0.0).sum()
                       - np.where(d_neg > 0, d_neg * p.upper, 0.0).sum())
    dual_obj = float(p.eq_rhs @ y_eq + p.geq_rhs @ y_ge + bound_terms)
    gap = abs(sol.objective_value - dual_obj)
    return {
        "primal_residual": float(primal),
        "complementarity": float(complementarity),
        "duality_gap": float(gap),
        "dual_objective": dual_obj,
    }

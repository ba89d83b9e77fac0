"""
Upper model of the cost-to-go function.

Per scenario i the bound is the bounded-slope interpolation of the stored
(point, value) pairs. Written as a minimization over convex weights,

    vbar_i(x) = min_{w in simplex}  sum_j w_j v_j + C * ||x - sum_j w_j x_j||_inf,

with C = sqrt(n) * M0bar. In the dual form the slopes rho range over the
l1-ball ||rho||_1 <= C, which contains the Euclidean ball of radius M0bar, so
the interpolation stays a valid upper bound. The model value is the scenario
average, capped by the constant vbar0.
"""
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from loguru import logger

from dualdp.models.problem_model import StationaryInstance
from dualdp.services.lp_solver import LpProblem, solve_lp


@dataclass(eq=False)
class UpperModel:
    vbar0: float
    M0bar: float
    n: int
    N: int
    points: list[list[tuple[np.ndarray, float]]] = field(default_factory=list)

    def __post_init__(self):
        if self.M0bar <= 0:
            raise ValueError("M0bar must be positive")
        if not self.points:
            self.points = [[] for _ in range(self.N)]

    @property
    def slope_cap(self) -> float:
        return float(np.sqrt(self.n) * self.M0bar)

    @property
    def ready(self) -> bool:
        return all(self.points)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for scenario, pts in enumerate(self.points, start=1):
            for x, value in pts:
                row = {"scenario": scenario, "value": value}
                row.update({f"x{j}": v for j, v in enumerate(x)})
                rows.append(row)
        return pd.DataFrame(rows, columns=["scenario", "value"] + [f"x{j}" for j in range(self.n)])


@dataclass(frozen=True, eq=False)
class InterpolationBlock:
    """Rows over (x, aux) whose minimal aux objective equals the averaged interpolation at x."""

    n_aux: int
    objective: np.ndarray
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    geq_matrix: np.ndarray
    geq_rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def interpolation_block(m: UpperModel) -> InterpolationBlock:
    n, C = m.n, m.slope_cap
    sizes = [len(pts) for pts in m.points]
    n_aux = sum(sizes) + m.N
    objective = np.zeros(n_aux)
    eq_rows, ge_rows = [], []
    ge_rhs = []

    offset = 0
    for scenario, pts in enumerate(m.points):
        L = len(pts)
        X = np.column_stack([p[0] for p in pts])          # n x L
        values = np.array([p[1] for p in pts])
        w_cols = slice(offset, offset + L)
        sigma = offset + L
        objective[w_cols] = values / m.N
        objective[sigma] = C / m.N

        row = np.zeros(n + n_aux)
        row[n + offset: n + offset + L] = 1.0
        eq_rows.append(row)

        # sigma >= x - Xw  and  sigma >= Xw - x
        block = np.zeros((2 * n, n + n_aux))
        block[:n, :n] = -np.eye(n)
        block[:n, n + offset: n + offset + L] = X
        block[n:, :n] = np.eye(n)
        block[n:, n + offset: n + offset + L] = -X
        block[:, n + sigma] = 1.0
        ge_rows.append(block)
        ge_rhs.append(np.zeros(2 * n))
        offset = sigma + 1

    return InterpolationBlock(
        n_aux=n_aux,
        objective=objective,
        eq_matrix=np.vstack(eq_rows),
        eq_rhs=np.ones(m.N),
        geq_matrix=np.vstack(ge_rows),
        geq_rhs=np.concatenate(ge_rhs),
        lower=np.zeros(n_aux),
        upper=np.full(n_aux, np.inf),
    )


def default_M0bar(inst: StationaryInstance) -> float:
    slope = 2.0 * inst.effective_lipschitz / (1.0 - inst.discount)
    return slope if slope > 0 else 1.0


def init_upper(inst: StationaryInstance, M0bar: float | None = None) -> UpperModel:
    """vbar0 = average over scenarios 1..N of the stage-cost maximum, divided by (1 - discount)."""
    M0bar = default_M0bar(inst) if M0bar is None else float(M0bar)
    if M0bar <= 0:
        raise ValueError("M0bar must be positive")
    vbar0 = float(np.sum(inst.cost_hi[1:])) / (inst.N * (1.0 - inst.discount))
    if len(inst.cost_hi) != inst.N + 1 or not np.isfinite(vbar0):
        v0 = float(np.sum(inst.cost_lo[1:])) / (inst.N * (1.0 - inst.discount))
        vbar0 = crude_upper_bound(inst, v0)
        logger.warning(f"Stage-cost maxima unavailable for '{inst.name}', using crude upper bound {vbar0:.6g}")
    return UpperModel(vbar0=vbar0, M0bar=M0bar, n=inst.n, N=inst.N)


def crude_upper_bound(inst: StationaryInstance, v0: float) -> float:
    """Cost spread over the discounted horizon on top of the lower constant v0."""
    return inst.cost_span / (1.0 - inst.discount) + v0


def evaluate_upper(m: UpperModel, x, method: str | None = None) -> float:
    if not m.ready:
        return m.vbar0
    x = np.asarray(x, dtype=float).ravel()
    block = interpolation_block(m)
    objective = np.concatenate([np.zeros(m.n), block.objective])
    lp = LpProblem.build(
        objective,
        eq=(block.eq_matrix, block.eq_rhs),
        geq=(block.geq_matrix, block.geq_rhs),
        lower=np.concatenate([x, block.lower]),
        upper=np.concatenate([x, block.upper]),
    )
    value = solve_lp(lp, method).objective_value
    return float(min(m.vbar0, value))


def add_upper_point(m: UpperModel, scenario: int, x, value: float) -> None:
    """scenario is 1-based, matching the scenario numbering of the instance."""
    if not np.isfinite(value):
        raise ValueError("upper point value must be finite")
    if not 1 <= scenario <= m.N:
        raise IndexError(f"scenario {scenario} outside 1..{m.N}")
    m.points[scenario - 1].append((np.asarray(x, dtype=float).copy(), float(value)))

"""
Stationary stochastic programs and the data attached to them.

A stage decision is a state vector x (length n) plus, optionally, stage-local
variables w that do not carry over to the next stage. Scenario rows read

    A x + E w  (= or >=)  B x_prev + b          (row-wise sense)
    R x       <=          Q x_prev - r          (affine functional block)

and the stage cost is h(x) + c_w.w with h a max of affine pieces.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from dualdp.app_log_config import logger
from dualdp.services.exceptions import DimensionError, InfeasibleRoot, OutOfDomain
from dualdp.services.lp_solver import LpProblem, solve_lp


BOX_TOL = 1e-9


def _vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if not np.isfinite(arr).all() and name not in ("lower", "upper"):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def _matrix(values, rows: int, cols: int, name: str) -> np.ndarray:
    if values is None:
        return np.zeros((rows, cols))
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        arr = arr.reshape(0, cols) if rows == 0 else arr
    arr = np.atleast_2d(arr)
    if arr.shape != (rows, cols):
        raise DimensionError(f"{name} has shape {arr.shape}, expected {(rows, cols)}")
    return arr


@dataclass(frozen=True, eq=False)
class PiecewiseLinearCost:
    """h(x) = max_p (gradients[p].x + offsets[p])."""

    gradients: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        gradients = np.atleast_2d(np.asarray(self.gradients, dtype=float))
        offsets = np.asarray(self.offsets, dtype=float).ravel()
        if gradients.shape[0] == 0:
            raise DimensionError("a piecewise-linear cost needs at least one piece")
        if gradients.shape[0] != offsets.size:
            raise DimensionError("one offset per cost piece is required")
        if not (np.isfinite(gradients).all() and np.isfinite(offsets).all()):
            raise ValueError("cost pieces must be finite")
        object.__setattr__(self, "gradients", gradients)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def linear(cls, gradient, offset: float = 0.0) -> "PiecewiseLinearCost":
        return cls(np.atleast_2d(gradient), np.array([offset]))

    @classmethod
    def zero(cls, dim: int) -> "PiecewiseLinearCost":
        return cls(np.zeros((1, dim)), np.zeros(1))

    @property
    def dim(self) -> int:
        return self.gradients.shape[1]

    @property
    def n_pieces(self) -> int:
        return self.offsets.size

    @property
    def is_affine(self) -> bool:
        return self.n_pieces == 1

    @cached_property
    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.gradients, axis=1).max())

    def evaluate(self, x) -> float:
        return float((self.gradients @ np.asarray(x, dtype=float) + self.offsets).max())

    def subgradient(self, x) -> np.ndarray:
        values = self.gradients @ np.asarray(x, dtype=float) + self.offsets
        return self.gradients[int(np.argmax(values))].copy()

    def box_max(self, lower, upper) -> float:
        # each piece is maximized at a vertex chosen by the gradient signs
        vertex_values = [
            float(g @ np.where(g > 0, upper, lower) + o) for g, o in zip(self.gradients, self.offsets)
        ]
        return max(vertex_values)

    def box_min(self, lower, upper) -> float:
        if self.is_affine:
            g = self.gradients[0]
            return float(g @ np.where(g > 0, lower, upper) + self.offsets[0])
        # epigraph LP over (x, t)
        n = self.dim
        objective = np.concatenate([np.zeros(n), [1.0]])
        rows = np.hstack([-self.gradients, np.ones((self.n_pieces, 1))])
        lp = LpProblem.build(objective, geq=(rows, self.offsets),
                             lower=np.concatenate([lower, [-np.inf]]),
                             upper=np.concatenate([upper, [np.inf]]))
        return solve_lp(lp).objective_value


@dataclass(frozen=True, eq=False)
class Scenario:
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    is_equality: np.ndarray
    cost: PiecewiseLinearCost
    Q: np.ndarray | None = None
    R: np.ndarray | None = None
    r: np.ndarray | None = None
    E: np.ndarray | None = None
    local_cost: np.ndarray | None = None
    local_lower: np.ndarray | None = None
    local_upper: np.ndarray | None = None

    def __post_init__(self):
        b = _vector(self.b, "b")
        m = b.size
        n = self.cost.dim
        A = _matrix(self.A, m, n, "A")
        B = _matrix(self.B, m, n, "B")

        senses = np.asarray(self.is_equality, dtype=bool).ravel()
        if senses.size != m:
            raise DimensionError(f"row senses have {senses.size} entries, expected {m}")

        r = np.zeros(0) if self.r is None else _vector(self.r, "r")
        Q = _matrix(self.Q, r.size, n, "Q")
        R = _matrix(self.R, r.size, n, "R")

        local_cost = np.zeros(0) if self.local_cost is None else _vector(self.local_cost, "local_cost")
        p = local_cost.size
        E = _matrix(self.E, m, p, "E")
        local_lower = np.zeros(p) if self.local_lower is None else _vector(self.local_lower, "lower")
        local_upper = np.zeros(p) if self.local_upper is None else _vector(self.local_upper, "upper")
        if local_lower.size != p or local_upper.size != p:
            raise DimensionError("local bounds must match the local cost length")
        if p and not (np.isfinite(local_lower).all() and np.isfinite(local_upper).all()):
            raise ValueError("local variables need finite bounds")
        if (local_lower > local_upper).any():
            raise ValueError("local lower bound above upper bound")
        for name, value in (("A", A), ("B", B), ("is_equality", senses), ("Q", Q), ("R", R),
                            ("r", r), ("E", E), ("local_cost", local_cost),
                            ("local_lower", local_lower), ("local_upper", local_upper)):
            object.__setattr__(self, name, value)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.b.size

    @property
    def m_phi(self) -> int:
        return self.r.size

    @property
    def n_local(self) -> int:
        return self.local_cost.size

    @property
    def coupling(self) -> np.ndarray:
        """Right-hand-side map x_prev -> rows, for the scenario rows then the functional rows in >= form."""
        return np.vstack([self.B, -self.Q])


@dataclass(frozen=True, eq=False)
class LinearConstraintBlock:
    """Rows over a variable vector: matrix @ v (= or >=) rhs, with bounds on v.

    `coupling` (rows x n) records how rhs moves with x_prev, when it does.
    """

    matrix: np.ndarray
    rhs: np.ndarray
    is_equality: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    coupling: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        return self.rhs.size

    @property
    def n_vars(self) -> int:
        return self.lower.size

    def split(self):
        eq = self.is_equality
        return (self.matrix[eq], self.rhs[eq]), (self.matrix[~eq], self.rhs[~eq])


@dataclass(frozen=True, eq=False)
class StationaryInstance:
    lower: np.ndarray
    upper: np.ndarray
    x0: np.ndarray
    scenario0: Scenario
    scenarios: tuple[Scenario, ...]
    discount: float
    cost_lo: tuple[float, ...] = field(default=())
    cost_hi: tuple[float, ...] = field(default=())
    name: str = "instance"

    @property
    def n(self) -> int:
        return self.lower.size

    @property
    def N(self) -> int:
        return len(self.scenarios)

    @property
    def D(self) -> float:
        return float((self.upper - self.lower).max())

    @cached_property
    def M_h(self) -> float:
        return max(s.cost.lipschitz for s in self.all_scenarios)

    @property
    def all_scenarios(self) -> tuple[Scenario, ...]:
        return (self.scenario0, *self.scenarios)

    @property
    def has_local(self) -> bool:
        return any(s.n_local for s in self.all_scenarios)

    @property
    def cost_span(self) -> float:
        """Stage-cost spread used in tail and schedule bounds (M_h * D without local variables)."""
        if not self.has_local:
            return self.M_h * self.D
        return max(self.cost_hi) - min(self.cost_lo)

    @property
    def effective_lipschitz(self) -> float:
        if not self.has_local:
            return self.M_h
        return self.cost_span / self.D

    def scenario(self, index: int) -> Scenario:
        if not 0 <= index <= self.N:
            raise IndexError(f"scenario index {index} outside 0..{self.N}")
        return self.all_scenarios[index]

    def check_in_box(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.n:
            raise DimensionError(f"state has {x.size} entries, expected {self.n}")
        if (x < self.lower - BOX_TOL).any() or (x > self.upper + BOX_TOL).any():
            raise OutOfDomain(f"state {x} outside the box")
        return np.clip(x, self.lower, self.upper)


# --- Two-stage lower level (hierarchical problems) ---

@dataclass(frozen=True, eq=False)
class StageBlock:
    """One lower-level stage: A z (= or >=) B z_up + b over a box, cost f(z)."""

    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    is_equality: np.ndarray
    cost: PiecewiseLinearCost
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        b = _vector(self.b, "b")
        lower = _vector(self.lower, "lower")
        upper = _vector(self.upper, "upper")
        n_own = lower.size
        A = _matrix(self.A, b.size, n_own, "A")
        n_up = np.atleast_2d(np.asarray(self.B, dtype=float)).shape[1]
        B = _matrix(self.B, b.size, n_up, "B")
        senses = np.asarray(self.is_equality, dtype=bool).ravel()
        if senses.size != b.size:
            raise DimensionError("row senses do not match the row count")
        if upper.size != n_own:
            raise DimensionError("box bounds differ in length")
        if not (np.isfinite(lower).all() and np.isfinite(upper).all()):
            raise ValueError("lower-level boxes must be bounded")
        if self.cost.dim != n_own:
            raise DimensionError("lower-level cost dimension mismatch")
        for name, value in (("A", A), ("B", B), ("b", b), ("is_equality", senses),
                            ("lower", lower), ("upper", upper)):
            object.__setattr__(self, name, value)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def dim_up(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True, eq=False)
class TwoStageLowerLevel:
    """First stage per top-level scenario (or one shared) plus N2 second-stage samples."""

    first: tuple[StageBlock, ...]
    second_samples: tuple[StageBlock, ...]

    def __post_init__(self):
        if not self.first or not self.second_samples:
            raise DimensionError("lower level needs a first stage and at least one second-stage sample")
        n1 = self.first[0].dim
        if any(f.dim != n1 or f.dim_up != self.first[0].dim_up for f in self.first):
            raise DimensionError("first-stage blocks disagree in dimension")
        if any(s.dim_up != n1 for s in self.second_samples):
            raise DimensionError("second-stage coupling does not match the first-stage dimension")

    @property
    def n1(self) -> int:
        return self.first[0].dim

    @property
    def N2(self) -> int:
        return len(self.second_samples)

    def first_for(self, scenario_index: int) -> StageBlock:
        if len(self.first) == 1:
            return self.first[0]
        return self.first[scenario_index]


# --- Construction and queries ---

def stage_feasible_set(inst: StationaryInstance, scenario_index: int, x_prev) -> LinearConstraintBlock:
    """Constraint block over (x, w) for one scenario at a given previous state."""
    scenario = inst.scenario(scenario_index)
    x_prev = inst.check_in_box(x_prev)

    scenario_rows = np.hstack([scenario.A, scenario.E])
    blocks = [scenario_rows]
    rhs = [scenario.B @ x_prev + scenario.b]
    senses = [scenario.is_equality]
    if scenario.m_phi:
        # R x <= Q x_prev - r  as  -R x >= -Q x_prev + r
        blocks.append(np.hstack([-scenario.R, np.zeros((scenario.m_phi, scenario.n_local))]))
        rhs.append(-scenario.Q @ x_prev + scenario.r)
        senses.append(np.zeros(scenario.m_phi, dtype=bool))

    return LinearConstraintBlock(
        matrix=np.vstack(blocks),
        rhs=np.concatenate(rhs),
        is_equality=np.concatenate(senses),
        lower=np.concatenate([inst.lower, scenario.local_lower]),
        upper=np.concatenate([inst.upper, scenario.local_upper]),
        coupling=scenario.coupling,
    )


def _relaxed_cost_range(inst_lower, inst_upper, scenario: Scenario) -> tuple[float, float]:
    """Min and max of h(x) + c_w.w over {x_prev, x in box, w in bounds, rows hold}."""
    n, p = scenario.n, scenario.n_local
    # variables: x_prev (n), x (n), w (p), t (1)
    eq_idx, ge_idx = scenario.is_equality, ~scenario.is_equality
    rows = np.hstack([-scenario.B, scenario.A, scenario.E, np.zeros((scenario.m, 1))])
    geq_rows = [rows[ge_idx]]
    geq_rhs = [scenario.b[ge_idx]]
    if scenario.m_phi:
        geq_rows.append(np.hstack([scenario.Q, -scenario.R, np.zeros((scenario.m_phi, p + 1))]))
        geq_rhs.append(scenario.r)
    lower = np.concatenate([inst_lower, inst_lower, scenario.local_lower, [-np.inf]])
    upper = np.concatenate([inst_upper, inst_upper, scenario.local_upper, [np.inf]])
    eq = (rows[eq_idx], scenario.b[eq_idx])

    epigraph = np.hstack([np.zeros((scenario.cost.n_pieces, n)), -scenario.cost.gradients,
                          np.zeros((scenario.cost.n_pieces, p)), np.ones((scenario.cost.n_pieces, 1))])
    objective = np.concatenate([np.zeros(2 * n), scenario.local_cost, [1.0]])
    lp = LpProblem.build(objective, eq=eq,
                         geq=(np.vstack(geq_rows + [epigraph]),
                              np.concatenate(geq_rhs + [scenario.cost.offsets])),
                         lower=lower, upper=upper)
    low = solve_lp(lp)
    if not low.optimal:
        raise InfeasibleRoot(f"stage rows admit no point in the box ({low.status.value})")

    # the max of a max of affine pieces: one LP per piece, epigraph column pinned at 0
    lower[-1], upper[-1] = 0.0, 0.0
    highs = []
    for g, o in zip(scenario.cost.gradients, scenario.cost.offsets):
        objective = -np.concatenate([np.zeros(n), g, scenario.local_cost, [0.0]])
        lp = LpProblem.build(objective, eq=eq, geq=(np.vstack(geq_rows), np.concatenate(geq_rhs)),
                             lower=lower, upper=upper)
        highs.append(o - solve_lp(lp).objective_value)
    return low.objective_value, max(highs)


def stage_cost_range(inst_lower, inst_upper, scenario: Scenario) -> tuple[float, float]:
    if scenario.n_local == 0:
        return scenario.cost.box_min(inst_lower, inst_upper), scenario.cost.box_max(inst_lower, inst_upper)
    return _relaxed_cost_range(inst_lower, inst_upper, scenario)


def build_instance(lower, upper, x0, scenario0: Scenario, scenarios, discount: float,
                   name: str = "instance", check_root: bool = True) -> StationaryInstance:
    """Validates the data, fills the derived stage-cost ranges and checks root feasibility."""
    lower = np.asarray(lower, dtype=float).ravel()
    upper = np.asarray(upper, dtype=float).ravel()
    x0 = np.asarray(x0, dtype=float).ravel()
    scenarios = tuple(scenarios)

    if not 0.0 < discount < 1.0:
        raise ValueError(f"discount must lie in (0, 1), got {discount}")
    if not scenarios:
        raise ValueError("at least one scenario beyond the deterministic first stage is required")
    if lower.size != upper.size or x0.size != lower.size:
        raise DimensionError("box bounds and x0 must share the state dimension")
    if not (np.isfinite(lower).all() and np.isfinite(upper).all()):
        raise ValueError("the state box must be bounded")
    if (lower > upper).any() or (x0 < lower - BOX_TOL).any() or (x0 > upper + BOX_TOL).any():
        raise ValueError("x0 must lie inside the box")
    for index, scenario in enumerate((scenario0, *scenarios)):
        if scenario.n != lower.size:
            raise DimensionError(f"scenario {index} has state dimension {scenario.n}, expected {lower.size}")

    ranges = [stage_cost_range(lower, upper, s) for s in (scenario0, *scenarios)]
    inst = StationaryInstance(
        lower=lower, upper=upper, x0=np.clip(x0, lower, upper), scenario0=scenario0,
        scenarios=scenarios, discount=float(discount),
        cost_lo=tuple(r[0] for r in ranges), cost_hi=tuple(r[1] for r in ranges), name=name,
    )
    if check_root:
        check_root_feasible(inst)
    logger.debug(f"Built instance '{name}' n={inst.n} N={inst.N} D={inst.D:.6g} M_h={inst.M_h:.6g}")
    return inst


def check_root_feasible(inst: StationaryInstance) -> None:
    block = stage_feasible_set(inst, 0, inst.x0)
    (eq_a, eq_b), (ge_a, ge_b) = block.split()
    lp = LpProblem.build(np.zeros(block.n_vars), eq=(eq_a, eq_b), geq=(ge_a, ge_b),
                         lower=block.lower, upper=block.upper)
    sol = solve_lp(lp)
    if not sol.optimal:
        raise InfeasibleRoot(f"stage-1 problem from x0 is {sol.status.value}")


def load_instance(path) -> StationaryInstance:
    from dualdp.storage import read_instance

    inst = read_instance(path)
    logger.info(f"Loaded instance '{inst.name}' from {path} (n={inst.n}, N={inst.N}, discount={inst.discount})")
    return inst

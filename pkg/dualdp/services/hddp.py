"""
Hierarchical dual dynamic programming.

Each top-level stage decision x also fixes a two-stage lower level: a first
stage z1 coupled to x and N2 second-stage samples coupled to z1. Subproblems
are solved inexactly by PDSA on the saddle form whose primal block is
(x, z1) and whose dualized rows are the top rows and the first-stage rows.
The second stage and the discounted lower model enter through a sampled
oracle. Cuts come from the averaged dual of the top rows.
"""
import math
from dataclasses import dataclass

import numpy as np

from dualdp.app_log_config import logger
from dualdp.models.cut_model import LowerModel, add_averaged_cut, evaluate, init_lower
from dualdp.models.problem_model import (
    PiecewiseLinearCost,
    Scenario,
    StageBlock,
    StationaryInstance,
    TwoStageLowerLevel,
    build_instance,
)
from dualdp.schemas.results import RunResult
from dualdp.schemas.schemas import RunConfig
from dualdp.services.ddp_engine import (
    DdpEngine,
    SubproblemResult,
    compute_epsilon_schedule,
    evaluate_policy,
    solve_subproblem,
)
from dualdp.services.exceptions import ConfigError, DimensionError, SubproblemInfeasible
from dualdp.services.lp_solver import LpProblem, LpStatus, solve_lp
from dualdp.services.pdsa import SaddleProblem, default_params, diagnostics_frame, run_pdsa
from dualdp.workers import WorkerPool


@dataclass(frozen=True, eq=False)
class HierarchicalInstance:
    top: StationaryInstance
    lower: TwoStageLowerLevel
    eps_lo: float
    rho: float
    eps0: float
    M_D_estimate: float | None = None
    G_bar: float | None = None

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if self.eps_lo <= 0:
            raise ValueError("eps_lo must be positive")
        if self.eps_lo > self.eps0:
            raise ValueError(f"eps_lo={self.eps_lo} exceeds the declared regularity constant eps0={self.eps0}")
        if self.top.has_local:
            raise DimensionError("the top level of a hierarchical instance carries no local variables")
        if len(self.lower.first) not in (1, self.top.N + 1):
            raise DimensionError(f"expected 1 or {self.top.N + 1} first-stage blocks, got {len(self.lower.first)}")
        if self.lower.first[0].dim_up != self.top.n:
            raise DimensionError("first-stage coupling does not match the top-level state dimension")

    @property
    def N1(self) -> int:
        return self.top.N

    @property
    def N2(self) -> int:
        return self.lower.N2


# --- second stage ---

def _stage_block_lp(block: StageBlock, z_up, weight: float = 1.0):
    """LP over (z, e) minimizing the block cost; returns it with the rhs sensitivity to z_up."""
    dim, pieces = block.dim, block.cost.n_pieces
    rhs = block.B @ np.asarray(z_up, dtype=float) + block.b
    eq = block.is_equality
    rows = np.hstack([block.A, np.zeros((block.b.size, 1))])
    epigraph = np.hstack([-block.cost.gradients, np.ones((pieces, 1))])
    lp = LpProblem.build(
        np.concatenate([np.zeros(dim), [weight]]),
        eq=(rows[eq], rhs[eq]),
        geq=(np.vstack([rows[~eq], epigraph]), np.concatenate([rhs[~eq], block.cost.offsets])),
        lower=np.concatenate([block.lower, [-np.inf]]),
        upper=np.concatenate([block.upper, [np.inf]]),
    )
    sensitivity = np.vstack([block.B[eq], block.B[~eq], np.zeros((pieces, block.dim_up))])
    return lp, sensitivity


def second_stage_value(block: StageBlock, z_up, method: str | None = None) -> tuple[float, np.ndarray, np.ndarray]:
    """Optimal value, subgradient with respect to z_up, and the row duals."""
    lp, sensitivity = _stage_block_lp(block, z_up)
    sol = solve_lp(lp, method)
    if sol.status is not LpStatus.OPTIMAL:
        raise SubproblemInfeasible(f"lower-level stage from {np.asarray(z_up).tolist()} is {sol.status.value}")
    return sol.objective_value, sensitivity.T @ sol.duals, sol.duals


def estimate_second_stage_bound(hinst: HierarchicalInstance, method: str | None = None) -> float:
    """
    Twice the largest second-stage subgradient norm seen on each first-stage box.

    The second stage is convex in z1, so its largest subgradient norm sits on
    the box boundary. Each box is sampled at both corners, the centre and the
    centre of every face.
    """
    largest = 0.0
    for first in hinst.lower.first:
        centre = (first.lower + first.upper) / 2.0
        points = [first.lower, first.upper, centre]
        for i in range(first.dim):
            for end in (first.lower[i], first.upper[i]):
                face = centre.copy()
                face[i] = end
                points.append(face)
        for z in points:
            for block in hinst.lower.second_samples:
                _, gradient, _ = second_stage_value(block, z, method)
                largest = max(largest, float(np.linalg.norm(gradient)))
    return 2.0 * largest


class SecondStageOracle:
    """Returns (value, subgradient) of discount * lower model + sample j's second stage at a primal point."""

    def __init__(self, hinst: HierarchicalInstance, lower: LowerModel, method: str | None = None):
        self.hinst = hinst
        self.lower = lower
        self.method = method
        self.n = hinst.top.n
        self.n1 = hinst.lower.n1

    def __call__(self, v, sample: int):
        n, n1 = self.n, self.n1
        lam = self.hinst.top.discount
        x, z1 = v[:n], v[n: n + n1]
        value, z_gradient, _ = second_stage_value(self.hinst.lower.second_samples[sample], z1, self.method)
        gradient = np.zeros(v.size)
        gradient[:n] = lam * self.lower.active_gradient(x)
        gradient[n: n + n1] = z_gradient
        return lam * evaluate(self.lower, x) + value, gradient


# --- saddle form ---

def _split_cost(cost: PiecewiseLinearCost, lower, upper):
    """Affine costs fold into the linear term; others get an epigraph column (gradient, offset, bounds)."""
    if cost.is_affine:
        return cost.gradients[0], float(cost.offsets[0]), None
    return None, 0.0, (cost.box_min(lower, upper), cost.box_max(lower, upper))


def build_saddle(hinst: HierarchicalInstance, scenario_index: int, x_prev, lower_model: LowerModel,
                 second_bound: float | None = None, method: str | None = None) -> SaddleProblem:
    top = hinst.top
    scenario = top.scenario(scenario_index)
    first = hinst.lower.first_for(scenario_index)
    x_prev = top.check_in_box(x_prev)
    n, n1 = top.n, first.dim

    h_grad, h_off, h_epi = _split_cost(scenario.cost, top.lower, top.upper)
    f_grad, f_off, f_epi = _split_cost(first.cost, first.lower, first.upper)
    extra = [bounds for bounds in (h_epi, f_epi) if bounds is not None]
    d = n + n1 + len(extra)
    e_h = n + n1 if h_epi is not None else None
    e_f = n + n1 + (1 if h_epi is not None else 0) if f_epi is not None else None

    c = np.zeros(d)
    c[:n] = h_grad if h_grad is not None else 0.0
    c[n: n + n1] = f_grad if f_grad is not None else 0.0
    if e_h is not None:
        c[e_h] = 1.0
    if e_f is not None:
        c[e_f] = 1.0

    W_rows, U_rows, q, free = [], [], [], []

    def add(rows_W, rows_U, rows_q, rows_free):
        W_rows.append(rows_W)
        U_rows.append(rows_U)
        q.append(rows_q)
        free.append(rows_free)

    top_W = np.zeros((scenario.m, d))
    top_W[:, :n] = scenario.A
    add(top_W, scenario.B, scenario.b, scenario.is_equality)
    if scenario.m_phi:
        phi_W = np.zeros((scenario.m_phi, d))
        phi_W[:, :n] = -scenario.R
        add(phi_W, -scenario.Q, scenario.r, np.zeros(scenario.m_phi, dtype=bool))

    first_W = np.zeros((first.b.size, d))
    first_W[:, :n] = -first.B
    first_W[:, n: n + n1] = first.A
    add(first_W, np.zeros((first.b.size, n)), first.b, first.is_equality)

    if e_h is not None:
        rows = np.zeros((scenario.cost.n_pieces, d))
        rows[:, :n] = -scenario.cost.gradients
        rows[:, e_h] = 1.0
        add(rows, np.zeros((scenario.cost.n_pieces, n)), scenario.cost.offsets,
            np.zeros(scenario.cost.n_pieces, dtype=bool))
    if e_f is not None:
        rows = np.zeros((first.cost.n_pieces, d))
        rows[:, n: n + n1] = -first.cost.gradients
        rows[:, e_f] = 1.0
        add(rows, np.zeros((first.cost.n_pieces, n)), first.cost.offsets,
            np.zeros(first.cost.n_pieces, dtype=bool))

    if second_bound is None:
        second_bound = hinst.G_bar if hinst.G_bar is not None else estimate_second_stage_bound(hinst, method)
    G_bar = top.discount * lower_model.max_gradient_norm + second_bound

    return SaddleProblem(
        W=np.vstack(W_rows),
        U=np.vstack(U_rows),
        q=np.concatenate(q),
        u=x_prev,
        f=PiecewiseLinearCost(gradients=c[None, :], offsets=np.array([h_off + f_off])),
        dual_free=np.concatenate(free),
        lower=np.concatenate([top.lower, first.lower, [b[0] for b in extra]]),
        upper=np.concatenate([top.upper, first.upper, [b[1] for b in extra]]),
        second_stage=SecondStageOracle(hinst, lower_model, method),
        num_samples=hinst.N2,
        G_bar=G_bar,
    )


# --- iteration budget ---

def pdsa_iteration_formula(W_norm: float, D_X: float, G_bar: float, dual_cap: float, eps_lo: float,
                           T: int, rho: float, n: int, cells: float) -> int:
    """Budget with unit constant; the unknown optimal dual norm is replaced by dual_cap."""
    deterministic = W_norm * (2.0 * dual_cap ** 2 + D_X ** 2) / eps_lo
    union = math.log(6.0 * T / rho) ** 2 + n ** 2 * math.log(max(cells, 1.0)) ** 2
    stochastic = D_X ** 2 * G_bar ** 2 * union / eps_lo ** 2
    return max(1, math.ceil(deterministic + stochastic))


def pdsa_budget(hinst: HierarchicalInstance, cfg: RunConfig, saddle: SaddleProblem | None = None) -> int:
    top = hinst.top
    if saddle is None:
        saddle = build_saddle(hinst, 0, top.x0, init_lower(top), method=cfg.lp_method)
    eps_lo, rho = _lower_accuracy(hinst, cfg)
    cells = top.D * math.sqrt(top.n) / cfg.epsilon
    formula = pdsa_iteration_formula(saddle.W_norm, saddle.diameter, saddle.G_bar, cfg.dual_cap,
                                     eps_lo, cfg.T, rho, top.n, cells)
    failure = rho / (2.0 * cfg.T * max(cells - 1.0, 1.0) ** top.n)
    budget = min(formula, cfg.pdsa_max_iters)
    logger.debug(f"pdsa budget {budget} (formula {formula}, cap {cfg.pdsa_max_iters}); "
                 f"per-subproblem failure probability {failure:.3g}")
    return budget


def _lower_accuracy(hinst: HierarchicalInstance, cfg: RunConfig) -> tuple[float, float]:
    eps_lo = cfg.eps_lo if "eps_lo" in cfg.model_fields_set else hinst.eps_lo
    rho = cfg.rho if "rho" in cfg.model_fields_set else hinst.rho
    return eps_lo, rho


# --- extensive combined form ---

def _local_columns(hinst: HierarchicalInstance) -> list[tuple[str, int, int]]:
    """(name, start, width) of every local block: z1, e1, then z2_j, e2_j per sample."""
    columns, start = [], 0
    blocks = [("z1", hinst.lower.n1), ("e1", 1)]
    for j, block in enumerate(hinst.lower.second_samples):
        blocks += [(f"z2_{j}", block.dim), (f"e2_{j}", 1)]
    for name, width in blocks:
        columns.append((name, start, width))
        start += width
    return columns


def extensive_scenario(hinst: HierarchicalInstance, scenario_index: int) -> Scenario:
    top = hinst.top
    scenario = top.scenario(scenario_index)
    first = hinst.lower.first_for(scenario_index)
    n, N2 = top.n, hinst.N2
    layout = {name: (start, width) for name, start, width in _local_columns(hinst)}
    p = sum(width for _, width in layout.values())

    A_rows, E_rows, B_rows, b, senses = [], [], [], [], []

    def add(A, E, B, rhs, eq):
        A_rows.append(A)
        E_rows.append(E)
        B_rows.append(B)
        b.append(rhs)
        senses.append(eq)

    def local(rows: int, **parts):
        E = np.zeros((rows, p))
        for name, values in parts.items():
            start, width = layout[name]
            E[:, start: start + width] = values
        return E

    add(scenario.A, np.zeros((scenario.m, p)), scenario.B, scenario.b, scenario.is_equality)

    m1 = first.b.size
    add(-first.B, local(m1, z1=first.A), np.zeros((m1, n)), first.b, first.is_equality)
    pieces = first.cost.n_pieces
    add(np.zeros((pieces, n)), local(pieces, z1=-first.cost.gradients, e1=np.ones((pieces, 1))),
        np.zeros((pieces, n)), first.cost.offsets, np.zeros(pieces, dtype=bool))

    local_cost = np.zeros(p)
    local_cost[layout["e1"][0]] = 1.0
    local_lower, local_upper = np.zeros(p), np.zeros(p)

    def set_bounds(name, low, high):
        start, width = layout[name]
        local_lower[start: start + width] = low
        local_upper[start: start + width] = high

    set_bounds("z1", first.lower, first.upper)
    set_bounds("e1", first.cost.box_min(first.lower, first.upper), first.cost.box_max(first.lower, first.upper))

    for j, block in enumerate(hinst.lower.second_samples):
        rows = block.b.size
        add(np.zeros((rows, n)), local(rows, **{"z1": -block.B, f"z2_{j}": block.A}),
            np.zeros((rows, n)), block.b, block.is_equality)
        pieces = block.cost.n_pieces
        add(np.zeros((pieces, n)),
            local(pieces, **{f"z2_{j}": -block.cost.gradients, f"e2_{j}": np.ones((pieces, 1))}),
            np.zeros((pieces, n)), block.cost.offsets, np.zeros(pieces, dtype=bool))
        local_cost[layout[f"e2_{j}"][0]] = 1.0 / N2
        set_bounds(f"z2_{j}", block.lower, block.upper)
        set_bounds(f"e2_{j}", block.cost.box_min(block.lower, block.upper),
                   block.cost.box_max(block.lower, block.upper))

    return Scenario(
        A=np.vstack(A_rows), B=np.vstack(B_rows), b=np.concatenate(b), is_equality=np.concatenate(senses),
        cost=scenario.cost, Q=scenario.Q if scenario.m_phi else None, R=scenario.R if scenario.m_phi else None,
        r=scenario.r if scenario.m_phi else None, E=np.vstack(E_rows), local_cost=local_cost,
        local_lower=local_lower, local_upper=local_upper,
    )


def extensive_form(hinst: HierarchicalInstance) -> StationaryInstance:
    """The exact LP model: lower-level decisions become stage-local variables of each top scenario."""
    top = hinst.top
    scenarios = [extensive_scenario(hinst, i) for i in range(top.N + 1)]
    return build_instance(top.lower, top.upper, top.x0, scenarios[0], scenarios[1:], top.discount,
                          name=f"{top.name}-extensive")


def lp_bounds(hinst: HierarchicalInstance, lower: LowerModel, horizon: int = 50, rollouts: int = 20,
              seed: int = 0, method: str | None = None, extensive: StationaryInstance | None = None):
    """LP-evaluated (lower, upper) bounds on the optimal value for a given lower model."""
    extensive = extensive or extensive_form(hinst)
    lb = solve_subproblem(extensive, lower, 0, extensive.x0, method).value
    ub = evaluate_policy(extensive, lower, horizon, rollouts, seed, method)
    return lb, ub


# --- engine ---

def _pdsa_task(hinst: HierarchicalInstance, task):
    lower, scenario_index, x_prev, cfg, second_bound, clip, entropy, record = task
    saddle = build_saddle(hinst, scenario_index, x_prev, lower, second_bound, cfg.lp_method)
    budget = pdsa_budget(hinst, cfg, saddle)
    params = default_params(saddle, budget)
    cert = run_pdsa(saddle, params, np.random.SeedSequence(entropy), record=record, clip_oracle=clip)
    top = hinst.top
    x = np.clip(cert.x_bar[: top.n], top.lower, top.upper)
    result = SubproblemResult(
        scenario=scenario_index,
        x=x,
        value=cert.value,
        subgradient=saddle.U.T @ cert.y_bar,
        stage_cost=cert.value - top.discount * evaluate(lower, x),
    )
    return result, cert.eps_c, cert.eps_d, budget, diagnostics_frame(cert) if record else None


class HddpEngine(DdpEngine):
    """Fast EDDP loop on the extensive form, with subproblems solved inexactly by PDSA."""

    def __init__(self, hinst: HierarchicalInstance, cfg: RunConfig, pool: WorkerPool | None = None):
        self.hinst = hinst
        self.extensive = extensive_form(hinst)
        super().__init__(self.extensive, cfg, pool or WorkerPool(hinst, 1))
        top = hinst.top
        self.eps_lo, self.rho = _lower_accuracy(hinst, cfg)
        if cfg.M_D is not None:
            self.M_D = cfg.M_D
        elif hinst.M_D_estimate is not None:
            self.M_D = hinst.M_D_estimate
        else:
            self.M_D = 10.0 * self.extensive.effective_lipschitz / (1.0 - top.discount)
        # with an estimated bound PDSA clips oversize subgradients
        self.second_bound_estimated = hinst.G_bar is None
        self.second_bound = hinst.G_bar if hinst.G_bar is not None else estimate_second_stage_bound(hinst, self.method)
        self._eps_c_max = self._eps_d_max = 0.0
        self._pdsa_iters = 0
        self._lb_exact = None
        self._root_diagnostics = None
        logger.info(f"hddp: eps_lo={self.eps_lo} rho={self.rho} M_D={self.M_D:.6g} "
                    f"second-stage subgradient bound {self.second_bound:.6g}")

    def solve_scenarios(self, requests):
        cfg = self.cfg
        # the root solve keeps its per-step trace for the diagnostics dump
        tasks = [(self.lower, i, x, cfg, self.second_bound, self.second_bound_estimated,
                  [cfg.seed, self.iteration, i, slot], slot == 0)
                 for slot, (i, x) in enumerate(requests)]
        outputs = self.pool.map(_pdsa_task, tasks)
        self._root_diagnostics = outputs[0][4]
        self._eps_c_max = max(out[1] for out in outputs)
        self._eps_d_max = max(out[2] for out in outputs[1:]) if len(outputs) > 1 else outputs[0][2]
        self._pdsa_iters = max(out[3] for out in outputs)
        results = [out[0] for out in outputs]
        cap = self.M_D + self.inst.discount * self.lower.max_gradient_norm + self.inst.effective_lipschitz
        for res in results:
            norm = float(np.linalg.norm(res.subgradient))
            if norm > cap:
                logger.warning(f"hddp cut gradient norm {norm:.6g} for scenario {res.scenario} exceeds {cap:.6g}")
        return results

    def cut_slack(self) -> float:
        return self._eps_d_max if self.cfg.slack_cuts else 0.0

    def after_update(self, k: int) -> None:
        period = self.cfg.exact_cut_period
        if not period or k % period:
            return
        inst = self.extensive
        exact = [solve_subproblem(inst, self.lower, i, self.x_prev, self.method) for i in range(1, inst.N + 1)]
        add_averaged_cut(self.lower, [r.value for r in exact], [r.subgradient for r in exact], self.x_prev,
                         iteration=k)
        self._lb_exact = solve_subproblem(inst, self.lower, 0, inst.x0, self.method).value
        logger.debug(f"hddp exact cut at k={k}, lb_exact={self._lb_exact:.10g}")

    def extra_record_fields(self) -> dict:
        fields = {"eps_c_max": self._eps_c_max, "pdsa_iters": self._pdsa_iters, "lb_exact": self._lb_exact}
        self._lb_exact = None
        return fields

    def schedule(self) -> list[float]:
        return compute_epsilon_schedule(self.cfg, self.extensive, self.lipschitz_sum(), self.eps_lo, self.M_D)

    def reported_bound(self, schedule: list[float]) -> float:
        lam = self.extensive.discount
        return schedule[0] + (2.0 + self.M_D) / (1.0 - lam) * self.eps_lo

    def _result(self, status: str, x_final, schedule) -> RunResult:
        result = super()._result(status, x_final, schedule)
        result.pdsa_diagnostics = self._root_diagnostics
        return result


def run_hddp(hinst: HierarchicalInstance, cfg: RunConfig) -> RunResult:
    if cfg.algo != "hddp":
        cfg = cfg.model_copy(update={"algo": "hddp"})
    if cfg.seed is None:
        raise ConfigError("hddp needs a seed")
    pool = WorkerPool(hinst, cfg.workers)
    try:
        return HddpEngine(hinst, cfg, pool).run()
    finally:
        pool.close()

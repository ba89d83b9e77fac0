"""
Dual dynamic programming drivers: EDDP, fast EDDP, EDDP with upper and lower
bounds, and SDDP, all sharing one stage LP builder and one main loop.

Per iteration the scenario subproblems are solved (in parallel when a pool
with several workers is supplied), then the single-threaded update phase adds
the averaged cut, lowers the saturation level of the previous search point
and picks the next one.
"""
import math
import time
from dataclasses import dataclass

import numpy as np

from dualdp.app_log_config import logger
from dualdp.models.cut_model import LowerModel, add_averaged_cut, epigraph_block, evaluate, init_lower
from dualdp.models.problem_model import StationaryInstance, stage_feasible_set
from dualdp.models.saturation_map import (
    SaturationMap,
    assign_gap_level,
    lower_level,
    select_most_distinguishable,
)
from dualdp.models.upper_model import (
    UpperModel,
    add_upper_point,
    evaluate_upper,
    init_upper,
    interpolation_block,
)
from dualdp.schemas.results import RunResult
from dualdp.schemas.schemas import IterationRecord, RunConfig
from dualdp.services.exceptions import ConfigError, IterationOverflow, MaxIters, SubproblemInfeasible
from dualdp.services.lp_solver import LpProblem, LpStatus, parametric_dual, solve_lp
from dualdp.workers import WorkerPool


@dataclass(frozen=True, eq=False)
class SubproblemResult:
    scenario: int
    x: np.ndarray
    value: float
    subgradient: np.ndarray
    stage_cost: float


# --- stage LP ---

def _stage_lp(inst: StationaryInstance, scenario_index: int, x_prev, future):
    """
    LP over (x, w, t, tail) for one scenario.

    `future` is a LowerModel (tail = theta with cut rows), a float (tail pinned
    to that constant) or an UpperModel with points (tail = interpolation
    variables). Returns the LP and the rhs sensitivity matrix (rows x n).
    """
    scenario = inst.scenario(scenario_index)
    block = stage_feasible_set(inst, scenario_index, x_prev)
    n, p = inst.n, scenario.n_local
    lam = inst.discount
    cost = scenario.cost
    nw = n + p                                    # columns of the stage block

    if isinstance(future, LowerModel):
        epi = epigraph_block(future)
        n_tail = 1
        tail_objective = np.array([lam])
        tail_lower, tail_upper = np.array([-np.inf]), np.array([np.inf])
        tail_eq = (np.zeros((0, n)), np.zeros((0, 1)), np.zeros(0))
        tail_ge = (epi.matrix[:, :n], epi.matrix[:, n:], epi.rhs)
    elif isinstance(future, UpperModel):
        interp = interpolation_block(future)
        n_tail = interp.n_aux
        tail_objective = lam * interp.objective
        tail_lower, tail_upper = interp.lower, interp.upper
        tail_eq = (interp.eq_matrix[:, :n], interp.eq_matrix[:, n:], interp.eq_rhs)
        tail_ge = (interp.geq_matrix[:, :n], interp.geq_matrix[:, n:], interp.geq_rhs)
    else:
        n_tail = 1
        tail_objective = np.array([lam])
        tail_lower = tail_upper = np.array([float(future)])
        tail_eq = (np.zeros((0, n)), np.zeros((0, 1)), np.zeros(0))
        tail_ge = (np.zeros((0, n)), np.zeros((0, 1)), np.zeros(0))

    total = nw + 1 + n_tail
    objective = np.concatenate([np.zeros(n), scenario.local_cost, [1.0], tail_objective])

    def widen(x_part, w_part=None, t_part=None, tail_part=None, rows=0):
        out = np.zeros((rows, total))
        out[:, :n] = x_part
        if w_part is not None:
            out[:, n:nw] = w_part
        if t_part is not None:
            out[:, nw] = t_part
        if tail_part is not None:
            out[:, nw + 1:] = tail_part
        return out

    eq_mask = block.is_equality
    block_eq, block_ge = block.matrix[eq_mask], block.matrix[~eq_mask]
    eq_rows = [
        widen(block_eq[:, :n], block_eq[:, n:], rows=block_eq.shape[0]),
        widen(tail_eq[0], tail_part=tail_eq[1], rows=tail_eq[2].size),
    ]
    eq_rhs = [block.rhs[eq_mask], tail_eq[2]]
    ge_rows = [
        widen(block_ge[:, :n], block_ge[:, n:], rows=block_ge.shape[0]),
        # t >= g.x + o for every cost piece
        widen(-cost.gradients, t_part=1.0, rows=cost.n_pieces),
        widen(tail_ge[0], tail_part=tail_ge[1], rows=tail_ge[2].size),
    ]
    ge_rhs = [block.rhs[~eq_mask], cost.offsets, tail_ge[2]]

    lp = LpProblem.build(
        objective,
        eq=(np.vstack(eq_rows), np.concatenate(eq_rhs)),
        geq=(np.vstack(ge_rows), np.concatenate(ge_rhs)),
        lower=np.concatenate([block.lower, [-np.inf], tail_lower]),
        upper=np.concatenate([block.upper, [np.inf], tail_upper]),
    )

    sensitivity = np.zeros((lp.n_rows, n))
    n_eq_block = int(eq_mask.sum())
    sensitivity[:n_eq_block] = block.coupling[eq_mask]
    sensitivity[lp.n_eq: lp.n_eq + block_ge.shape[0]] = block.coupling[~eq_mask]
    return lp, sensitivity


def _solve_stage(inst, scenario_index, x_prev, future, method=None):
    lp, sensitivity = _stage_lp(inst, scenario_index, x_prev, future)
    sol = solve_lp(lp, method)
    if sol.status is not LpStatus.OPTIMAL:
        raise SubproblemInfeasible(
            f"scenario {scenario_index} from x_prev={np.asarray(x_prev).tolist()} is {sol.status.value}; "
            "the instance violates relatively complete recourse"
        )
    return lp, sol, sensitivity


def solve_subproblem(inst: StationaryInstance, lower: LowerModel, scenario_index: int, x_prev,
                     method: str | None = None) -> SubproblemResult:
    lp, sol, sensitivity = _solve_stage(inst, scenario_index, x_prev, lower, method)
    n = inst.n
    scenario = inst.scenario(scenario_index)
    subgradient = np.array([parametric_dual(lp, sol, sensitivity[:, j]) for j in range(n)])
    x = np.clip(sol.x[:n], inst.lower, inst.upper)
    w = sol.x[n: n + scenario.n_local]
    stage_cost = scenario.cost.evaluate(x) + float(scenario.local_cost @ w)
    return SubproblemResult(scenario_index, x, sol.objective_value, subgradient, stage_cost)


def upper_point_value(inst: StationaryInstance, upper: UpperModel, scenario_index: int, x_prev,
                      method: str | None = None) -> float:
    """min over the stage set of stage cost + discount * upper model, the model capped by vbar0."""
    _, capped, _ = _solve_stage(inst, scenario_index, x_prev, upper.vbar0, method)
    best = capped.objective_value
    if upper.ready:
        _, interpolated, _ = _solve_stage(inst, scenario_index, x_prev, upper, method)
        best = min(best, interpolated.objective_value)
    return float(best)


# worker entry points: the pool context is the instance

def _subproblem_task(inst, task):
    lower, scenario_index, x_prev, method = task
    return solve_subproblem(inst, lower, scenario_index, x_prev, method)


def _upper_point_task(inst, task):
    upper, scenario_index, x_prev, method = task
    return upper_point_value(inst, upper, scenario_index, x_prev, method)


def _upper_eval_task(inst, task):
    upper, x, method = task
    return evaluate_upper(upper, x, method=method)


# --- schedules and caps ---

def default_lipschitz_sum(inst: StationaryInstance, lower: LowerModel | None = None,
                          algo: str = "eddp", M0bar: float | None = None) -> float:
    lam = inst.discount
    M_h = inst.effective_lipschitz
    lower_slope = M_h + lam * (lower.max_gradient_norm if lower is not None else 0.0)
    if algo == "eddp_lu":
        upper_slope = lam * (M0bar if M0bar is not None else 0.0) + M_h
        return upper_slope + lower_slope
    return M_h + lower_slope


def compute_epsilon_schedule(cfg: RunConfig, inst: StationaryInstance, lipschitz_sum: float | None = None,
                             eps_lo: float = 0.0, M_D: float = 0.0) -> list[float]:
    """eps_{T-1} = span / (1 - discount), eps_t = increment + discount * eps_{t+1}."""
    if lipschitz_sum is None:
        lipschitz_sum = cfg.lipschitz_sum if cfg.lipschitz_sum is not None else default_lipschitz_sum(inst)
    if lipschitz_sum < 0:
        raise ValueError("lipschitz_sum must be nonnegative")
    lam = inst.discount
    increment = lipschitz_sum * cfg.epsilon + (1.0 + M_D) * eps_lo
    schedule = [0.0] * cfg.T
    schedule[-1] = inst.cost_span / (1.0 - lam)
    for t in range(cfg.T - 2, -1, -1):
        schedule[t] = increment + lam * schedule[t + 1]
    return schedule


def iteration_cap(inst: StationaryInstance, cfg: RunConfig, fast: bool) -> float:
    cells = (inst.D * math.sqrt(inst.n) / cfg.epsilon + 1.0) ** inst.n
    if fast:
        return 2 * (cfg.T - 1) * cells + (cfg.T + 1)
    return cfg.T * (cfg.T - 1) * cells


# --- policy rollouts ---

def evaluate_policy(inst: StationaryInstance, lower: LowerModel, H: int, rollouts: int, seed: int = 0,
                    method: str | None = None) -> float:
    """Mean discounted cost of the greedy policy over H stages plus a tail bound."""
    if H < 1 or rollouts < 1:
        raise ValueError("H and rollouts must be at least 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9E3779B9]))
    lam = inst.discount
    totals = []
    for _ in range(rollouts):
        x, total = inst.x0, 0.0
        for t in range(1, H + 1):
            scenario_index = 0 if t == 1 else int(rng.integers(1, inst.N + 1))
            res = solve_subproblem(inst, lower, scenario_index, x, method)
            total += lam ** (t - 1) * res.stage_cost
            x = res.x
        totals.append(total)
    tail = lam ** H * max(inst.cost_span, max(inst.cost_hi)) / (1.0 - lam)
    return float(np.mean(totals) + tail)


# --- engine ---

class DdpEngine:
    """Main loop shared by every algorithm; subclasses swap the subproblem solver."""

    fast_algos = ("eddp_fast", "eddp_lu", "hddp")

    def __init__(self, inst: StationaryInstance, cfg: RunConfig, pool: WorkerPool | None = None):
        if cfg.algo not in ("eddp", "eddp_fast", "eddp_lu", "sddp") and type(self) is DdpEngine:
            raise ConfigError(f"algo {cfg.algo} is not a dual dynamic programming variant")
        if inst.N < 1:
            raise ConfigError("at least one scenario beyond the first stage is required")
        self.inst = inst
        self.cfg = cfg
        self.pool = pool or WorkerPool(inst, 1)
        self.method = cfg.lp_method
        self.lower = init_lower(inst)
        self.saturation = SaturationMap(cfg.epsilon, cfg.T, inst.lower, inst.upper)
        self.upper = init_upper(inst, cfg.M0bar) if cfg.algo == "eddp_lu" else None
        self.records: list[IterationRecord] = []
        self.rng = np.random.default_rng(cfg.seed) if cfg.algo == "sddp" else None
        if cfg.no_reset and cfg.algo not in self.fast_algos:
            logger.warning(f"no_reset only changes the fast variants; ignored for {cfg.algo}")

    # -- hooks --

    def solve_scenarios(self, requests: list[tuple[int, np.ndarray]]) -> list[SubproblemResult]:
        tasks = [(self.lower, i, x, self.method) for i, x in requests]
        return self.pool.map(_subproblem_task, tasks)

    def cut_slack(self) -> float:
        return 0.0

    def extra_record_fields(self) -> dict:
        return {}

    def after_update(self, k: int) -> None:
        pass

    # -- helpers --

    @property
    def fast(self) -> bool:
        return self.cfg.algo in self.fast_algos

    def lipschitz_sum(self) -> float:
        if self.cfg.lipschitz_sum is not None:
            return self.cfg.lipschitz_sum
        M0bar = self.upper.M0bar if self.upper is not None else None
        return default_lipschitz_sum(self.inst, self.lower, self.cfg.algo, M0bar)

    def schedule(self) -> list[float]:
        return compute_epsilon_schedule(self.cfg, self.inst, self.lipschitz_sum())

    def reported_bound(self, schedule: list[float]) -> float:
        return schedule[0]

    def _policy_bound(self, k: int, final: bool) -> float | None:
        cfg = self.cfg
        if cfg.rollouts == 0:
            return None
        due = final or (cfg.policy_every and k % cfg.policy_every == 0)
        if not due:
            return None
        return evaluate_policy(self.inst, self.lower, cfg.policy_horizon, cfg.rollouts,
                               seed=cfg.seed or 0, method=self.method)

    def _lu_bounds(self, x_prev, candidates, schedule) -> float:
        """Gap levels for the candidates, upper points at x_prev; returns the model upper bound at the root."""
        inst, upper = self.inst, self.upper
        requests = [(0, inst.x0)] + [(i, x_prev) for i in range(1, inst.N + 1)]
        values = self.pool.map(_upper_point_task, [(upper, i, x, self.method) for i, x in requests])
        uppers = self.pool.map(_upper_eval_task, [(upper, x, self.method) for x in candidates])
        for x, ub in zip(candidates, uppers):
            assign_gap_level(self.saturation, x, ub - evaluate(self.lower, x), schedule)
        for i in range(1, inst.N + 1):
            add_upper_point(upper, i, x_prev, values[i])
        return values[0]

    # -- main loop --

    def run(self) -> RunResult:
        inst, cfg = self.inst, self.cfg
        N, T = inst.N, cfg.T
        x0 = inst.x0
        cap = iteration_cap(inst, cfg, self.fast) if cfg.algo != "sddp" else math.inf
        no_reset = cfg.no_reset and self.fast
        logger.info(f"Starting {cfg.algo} on '{inst.name}' (n={inst.n}, N={N}, T={T}, epsilon={cfg.epsilon}, "
                    f"cap={cap:.6g})")

        x_prev, x_nr = x0.copy(), x0.copy()
        best_lb, stalled_for = -math.inf, 0
        schedule = self.schedule()

        for k in range(1, cfg.max_iters + 1):
            if k > cap:
                raise IterationOverflow(f"{cfg.algo} exceeded its iteration bound {cap:.6g}")
            started = time.perf_counter()
            self.iteration, self.x_prev = k, x_prev

            root_prev = x0 if self.fast else x_prev
            requests = [(0, root_prev)] + [(i, x_prev) for i in range(1, N + 1)]
            nr_shared = no_reset and np.array_equal(x_nr, x_prev)
            if no_reset and not nr_shared:
                requests += [(i, x_nr) for i in range(1, N + 1)]
            root_separate = not self.fast and not np.array_equal(x_prev, x0)
            if root_separate:
                requests.append((0, x0))

            results = self.solve_scenarios(requests)
            candidates = [r.x for r in results[: N + 1]]
            root = results[-1] if root_separate else results[0]

            schedule = self.schedule()
            ub_model = None
            if self.upper is not None:
                ub_model = self._lu_bounds(x_prev, candidates, schedule)

            index, t_star = select_most_distinguishable(self.saturation, candidates)
            if no_reset:
                nr_candidates = candidates[1:] if nr_shared else [r.x for r in results[N + 1: 2 * N + 1]]
                pool_x = [candidates[0]] + nr_candidates
                pick, _ = select_most_distinguishable(self.saturation, pool_x)
                nr_pick, _ = select_most_distinguishable(self.saturation, nr_candidates)
                next_x, next_nr = pool_x[pick], nr_candidates[nr_pick]
                index = pick
            else:
                next_x, next_nr = candidates[index], x_nr

            terminate = cfg.algo != "sddp" and t_star <= 1 and (self.fast or k % T == 1)
            final = terminate or k == cfg.max_iters

            if not terminate:
                add_averaged_cut(self.lower, [r.value for r in results[1: N + 1]],
                                 [r.subgradient for r in results[1: N + 1]], x_prev,
                                 slack=self.cut_slack(), iteration=k)
                if cfg.algo == "sddp":
                    index = int(self.rng.integers(0, N + 1))
                    next_x = candidates[index]
                if not self.fast and (k + 1) % T == 1:
                    next_x = x0
                lower_level(self.saturation, x_prev, max(0, t_star - 1))
                self.after_update(k)

            record = IterationRecord(
                iter=k,
                lb_root=root.value,
                ub_model=ub_model,
                ub_policy=self._policy_bound(k, final),
                t_star=t_star,
                selected=index,
                wall_ms=(time.perf_counter() - started) * 1000 if cfg.record_wall_time else None,
                cuts_total=len(self.lower),
                eps0=self.reported_bound(schedule),
                saturation_progress=self.saturation.progress,
                **self.extra_record_fields(),
            )
            self.records.append(record)
            logger.debug(f"{cfg.algo} k={k} lb={root.value:.10g} t*={t_star} selected={index} cuts={len(self.lower)}")

            if terminate:
                logger.success(f"{cfg.algo} terminated at k={k} with lb_root={root.value:.10g}, "
                               f"a-priori bound {self.reported_bound(schedule):.6g}")
                return self._result("converged", root.x, schedule)

            if cfg.algo == "sddp":
                threshold = 1e-8 * (1.0 + abs(root.value))
                stalled_for = stalled_for + 1 if root.value - best_lb < threshold else 0
                best_lb = max(best_lb, root.value)
                if stalled_for >= cfg.stall_window:
                    logger.info(f"sddp stalled for {stalled_for} iterations at k={k}")
                    return self._result("stalled", root.x, schedule)

            x_prev, x_nr = next_x, next_nr

        result = self._result("max_iters", root.x, schedule)
        if cfg.algo == "sddp":
            return result
        logger.warning(f"{cfg.algo} hit max_iters={cfg.max_iters} before terminating")
        raise MaxIters(f"{cfg.algo} reached max_iters={cfg.max_iters} without terminating", result)

    def _result(self, status: str, x_final, schedule) -> RunResult:
        return RunResult(
            algo=self.cfg.algo,
            status=status,
            x_final=[float(v) for v in x_final],
            records=list(self.records),
            eps_schedule=list(schedule),
            reported_bound=self.reported_bound(schedule),
            lower=self.lower,
            upper=self.upper,
            saturation=self.saturation,
        )


def _run(inst: StationaryInstance, cfg: RunConfig, algo: str) -> RunResult:
    if cfg.algo != algo:
        cfg = cfg.model_copy(update={"algo": algo})
    with_pool = WorkerPool(inst, cfg.workers)
    try:
        return DdpEngine(inst, cfg, with_pool).run()
    finally:
        with_pool.close()


def run_eddp(inst: StationaryInstance, cfg: RunConfig) -> RunResult:
    return _run(inst, cfg, "eddp")


def run_eddp_fast(inst: StationaryInstance, cfg: RunConfig) -> RunResult:
    return _run(inst, cfg, "eddp_fast")


def run_eddp_lu(inst: StationaryInstance, cfg: RunConfig) -> RunResult:
    return _run(inst, cfg, "eddp_lu")


def run_sddp(inst: StationaryInstance, cfg: RunConfig, seed: int | None = None) -> RunResult:
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": seed})
    if cfg.seed is None:
        raise ConfigError("sddp needs a seed")
    return _run(inst, cfg, "sddp")

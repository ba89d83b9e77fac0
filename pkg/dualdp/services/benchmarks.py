"""
Instance generators and the truncated extensive-form oracle.

All randomness comes from numpy's PCG64 generator seeded with the given
64-bit seed, so instances are reproducible from (parameters, seed).
"""
import numpy as np
from scipy import sparse

from dualdp import config
from dualdp.app_log_config import logger
from dualdp.models.problem_model import (
    PiecewiseLinearCost,
    Scenario,
    StageBlock,
    StationaryInstance,
    TwoStageLowerLevel,
    build_instance,
)
from dualdp.schemas.results import OracleReport
from dualdp.schemas.schemas import EdParams, ReservoirParams
from dualdp.services.exceptions import NumericalFailure, TreeTooLarge
from dualdp.services.hddp import HierarchicalInstance, extensive_scenario
from dualdp.services.lp_solver import LpProblem, LpStatus, solve_lp
from dualdp.storage import write_lp


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# --- generators ---

def gen_chain(discount: float = 0.5) -> StationaryInstance:
    """x >= x_prev / 2 on [0, 1] with cost x from x0 = 1; the optimum is 2/3 at discount 0.5."""
    row = Scenario(A=[[1.0]], B=[[0.5]], b=[0.0], is_equality=[False], cost=PiecewiseLinearCost.linear([1.0]))
    return build_instance([0.0], [1.0], [1.0], row, [row], discount, name="chain")


def gen_reservoir(p: ReservoirParams, seed: int = 0) -> StationaryInstance:
    """
    Hydro-thermal toy: levels x, releases r, spills s and thermal output g per stage.

        x + r + s = x_prev + inflow          (balance, one row per reservoir)
        sum(r) + g >= demand
    """
    rng = _rng(seed)
    n = p.num_reservoirs
    eye = np.eye(n)
    spill_cap = p.capacity + p.inflow_mean + p.inflow_spread
    E_balance = np.hstack([eye, eye, np.zeros((n, 1))])
    E_demand = np.concatenate([np.ones(n), np.zeros(n), [1.0]])[None, :]
    local_cost = np.concatenate([np.zeros(2 * n), [p.thermal_cost]])
    local_lower = np.zeros(2 * n + 1)
    local_upper = np.concatenate([np.full(n, p.turbine_max), np.full(n, spill_cap), [p.demand]])

    def scenario(inflow):
        return Scenario(
            A=np.vstack([eye, np.zeros((1, n))]),
            B=np.vstack([eye, np.zeros((1, n))]),
            b=np.concatenate([inflow, [p.demand]]),
            is_equality=np.concatenate([np.ones(n, dtype=bool), [False]]),
            cost=PiecewiseLinearCost.zero(n),
            E=np.vstack([E_balance, E_demand]),
            local_cost=local_cost,
            local_lower=local_lower,
            local_upper=local_upper,
        )

    inflows = np.maximum(0.0, p.inflow_mean + p.inflow_spread * (2.0 * rng.random((p.num_scenarios, n)) - 1.0))
    scenarios = [scenario(inflow) for inflow in inflows]
    root = scenario(np.full(n, p.inflow_mean))
    lower, upper = np.zeros(n), np.full(n, p.capacity)
    inst = build_instance(lower, upper, np.full(n, p.initial_fill * p.capacity), root, scenarios, p.discount,
                          name=f"reservoir-{n}x{p.num_scenarios}")
    logger.info(f"Generated reservoir instance n={n} N={p.num_scenarios} seed={seed}")
    return inst


def gen_ed(p: EdParams, seed: int = 0) -> HierarchicalInstance:
    """
    Economic dispatch with long-term batteries and a marginal-priced second stage.

    Top state per region k: battery level b_k and withdrawal u_k with
    b_k' + u_k = beta_k b_k. First stage (per top scenario): generation g,
    shortfall s at the penalty price and one supply h^l per second-stage
    sample l, balancing

        sum_{g in region k} g + s_k - (1/N2) sum_l h^l_k = demand_k - u_k.

    The balance duals are the regional marginal prices, so every unit of
    h^l_k is charged the price of region k. Second stage (per sample l): the
    penalized mismatch f >= |D_l - h^l_1 - sum_{k>1} alpha_k h^l_k|.
    """
    rng = _rng(seed)
    r, G, N2 = p.regions, p.generators, p.N2
    beta = rng.uniform(*p.beta_range, size=r)
    alpha = np.concatenate([[1.0], rng.uniform(*p.alpha_range, size=r - 1)])
    gen_cost = rng.uniform(*p.generator_cost, size=G)
    demands = rng.uniform(*p.demand_range, size=(p.N1, r))
    hospital = rng.uniform(*p.hospital_demand_range, size=N2)

    # top level
    eye = np.eye(r)
    top_row = Scenario(
        A=np.hstack([eye, eye]),
        B=np.hstack([np.diag(beta), np.zeros((r, r))]),
        b=np.zeros(r),
        is_equality=np.ones(r, dtype=bool),
        cost=PiecewiseLinearCost.zero(2 * r),
    )
    lower = np.concatenate([np.full(r, p.battery_bounds[0]), np.full(r, -p.battery_rate)])
    upper = np.concatenate([np.full(r, p.battery_bounds[1]), np.full(r, p.battery_rate)])
    x0 = np.concatenate([np.full(r, p.battery_bounds[0]), np.zeros(r)])
    top = build_instance(lower, upper, x0, top_row, [top_row] * p.N1, p.discount, name="ed")

    # first stage: z1 = (g, s, h^1, ..., h^N2)
    assign = np.zeros((r, G))
    assign[np.arange(G) % r, np.arange(G)] = 1.0
    A1 = np.hstack([assign, eye, np.tile(-eye / N2, (1, N2))])
    B1 = np.hstack([np.zeros((r, r)), -eye])
    g_lo, g_hi = p.generator_bounds
    h_lo = p.supply_bounds[0]
    h_hi = max(p.supply_bounds[1], p.battery_rate + G * g_lo)
    shortfall_cap = p.demand_range[1] + p.battery_rate + h_hi
    n1 = G + r + N2 * r
    z1_lower = np.concatenate([np.full(G, g_lo), np.zeros(r), np.full(N2 * r, h_lo)])
    z1_upper = np.concatenate([np.full(G, g_hi), np.full(r, shortfall_cap), np.full(N2 * r, h_hi)])
    f1 = PiecewiseLinearCost.linear(np.concatenate([gen_cost, np.full(r, p.penalty), np.zeros(N2 * r)]))

    def first(demand):
        return StageBlock(A=A1, B=B1, b=demand, is_equality=np.ones(r, dtype=bool), cost=f1,
                          lower=z1_lower, upper=z1_upper)

    firsts = (first(demands.mean(axis=0)),) + tuple(first(d) for d in demands)

    # second stage: z2 = (f), reading only its own supply block of z1
    mismatch_cap = p.hospital_demand_range[1] + max(abs(h_lo), h_hi) * float(alpha.sum())

    def second(sample, load):
        B2 = np.zeros((2, n1))
        cols = slice(G + r + sample * r, G + r + (sample + 1) * r)
        B2[0, cols] = -alpha
        B2[1, cols] = alpha
        return StageBlock(
            A=np.ones((2, 1)), B=B2, b=np.array([load, -load]), is_equality=np.zeros(2, dtype=bool),
            cost=PiecewiseLinearCost.linear([p.penalty]), lower=np.zeros(1), upper=np.array([mismatch_cap]),
        )

    lower_level = TwoStageLowerLevel(first=firsts,
                                     second_samples=tuple(second(j, d) for j, d in enumerate(hospital)))
    # the mismatch dual pair moves along +-alpha with total weight at most the penalty
    G_bar = p.penalty * float(np.linalg.norm(alpha))
    logger.info(f"Generated dispatch instance r={r} G={G} N1={p.N1} N2={N2} seed={seed}")
    return HierarchicalInstance(top=top, lower=lower_level, eps_lo=p.eps_lo, rho=p.rho, eps0=p.eps0, G_bar=G_bar)


def marginal_prices(hinst: HierarchicalInstance, scenario_index: int, x, method: str | None = None) -> np.ndarray:
    """Duals of the first-stage balance rows with the top state fixed at x."""
    top = hinst.top
    x = top.check_in_box(x)
    scenario = extensive_scenario(hinst, scenario_index)
    m_top = top.scenario(scenario_index).m
    m1 = hinst.lower.first_for(scenario_index).b.size
    A, E, b = scenario.A[m_top:], scenario.E[m_top:], scenario.b[m_top:]
    eq = scenario.is_equality[m_top:]
    rhs = b - A @ x
    lp = LpProblem.build(scenario.local_cost, eq=(E[eq], rhs[eq]), geq=(E[~eq], rhs[~eq]),
                         lower=scenario.local_lower, upper=scenario.local_upper)
    sol = solve_lp(lp, method)
    if sol.status is not LpStatus.OPTIMAL:
        raise ValueError(f"dispatch LP at x={x.tolist()} is {sol.status.value}")
    positions = np.empty(eq.size, dtype=int)
    positions[eq] = np.arange(int(eq.sum()))
    positions[~eq] = int(eq.sum()) + np.arange(int((~eq).sum()))
    return sol.duals[positions[:m1]]


# --- extensive-form oracle ---

def _tree_lp(inst: StationaryInstance, x_start, horizon: int, root_scenarios: list[int]):
    """Sparse LP over every node of the truncated scenario tree; node variables are (x, w, t)."""
    n, N, lam = inst.n, inst.N, inst.discount
    p = max(s.n_local for s in inst.all_scenarios)
    width = n + p + 1

    # nodes as (parent, scenario, depth, probability)
    nodes = [(-1, i, 1, 1.0 / len(root_scenarios)) for i in root_scenarios]
    frontier = list(range(len(nodes)))
    for depth in range(2, horizon + 1):
        nxt = []
        for parent in frontier:
            prob = nodes[parent][3] / N
            for i in range(1, N + 1):
                nodes.append((parent, i, depth, prob))
                nxt.append(len(nodes) - 1)
        frontier = nxt

    total = len(nodes) * width
    objective = np.zeros(total)
    lower, upper = np.zeros(total), np.zeros(total)
    eq_rows, eq_cols, eq_vals, eq_rhs = [], [], [], []
    ge_rows, ge_cols, ge_vals, ge_rhs = [], [], [], []

    def put(target, row, cols, vals):
        rows, cs, vs = target
        rows.extend([row] * len(cols))
        cs.extend(cols)
        vs.extend(vals)

    x_start = np.asarray(x_start, dtype=float)
    for node, (parent, i, depth, prob) in enumerate(nodes):
        s = inst.scenario(i)
        base = node * width
        x_cols = list(range(base, base + n))
        w_cols = list(range(base + n, base + n + s.n_local))
        t_col = base + n + p
        weight = lam ** (depth - 1) * prob
        objective[t_col] = weight
        objective[base + n: base + n + s.n_local] = weight * s.local_cost
        lower[base: base + n], upper[base: base + n] = inst.lower, inst.upper
        lower[base + n: base + n + s.n_local] = s.local_lower
        upper[base + n: base + n + s.n_local] = s.local_upper
        lower[t_col], upper[t_col] = -np.inf, np.inf
        parent_cols = list(range(parent * width, parent * width + n)) if parent >= 0 else None

        for row in range(s.m):
            cols = x_cols + w_cols
            vals = list(s.A[row]) + list(s.E[row])
            rhs = s.b[row]
            if parent_cols is None:
                rhs += float(s.B[row] @ x_start)
            else:
                cols = cols + parent_cols
                vals = vals + list(-s.B[row])
            if s.is_equality[row]:
                put((eq_rows, eq_cols, eq_vals), len(eq_rhs), cols, vals)
                eq_rhs.append(rhs)
            else:
                put((ge_rows, ge_cols, ge_vals), len(ge_rhs), cols, vals)
                ge_rhs.append(rhs)
        for row in range(s.m_phi):
            cols, vals, rhs = x_cols, list(-s.R[row]), s.r[row]
            if parent_cols is None:
                rhs -= float(s.Q[row] @ x_start)
            else:
                cols, vals = cols + parent_cols, vals + list(s.Q[row])
            put((ge_rows, ge_cols, ge_vals), len(ge_rhs), cols, vals)
            ge_rhs.append(rhs)
        for g, o in zip(s.cost.gradients, s.cost.offsets):
            put((ge_rows, ge_cols, ge_vals), len(ge_rhs), x_cols + [t_col], list(-g) + [1.0])
            ge_rhs.append(o)

    eq = sparse.csr_matrix((eq_vals, (eq_rows, eq_cols)), shape=(len(eq_rhs), total))
    geq = sparse.csr_matrix((ge_vals, (ge_rows, ge_cols)), shape=(len(ge_rhs), total))
    lp = LpProblem.build(objective, eq=(eq, np.array(eq_rhs)), geq=(geq, np.array(ge_rhs)),
                         lower=lower, upper=upper)
    return lp, len(nodes)


def _tree_size(N: int, horizon: int, roots: int) -> int:
    return roots * sum(N ** depth for depth in range(horizon))


def _solve_tree(inst: StationaryInstance, x_start, horizon: int, roots: list[int], emit=None):
    nodes = _tree_size(inst.N, horizon, len(roots))
    if nodes > config.MAX_TREE_NODES:
        raise TreeTooLarge(f"scenario tree with {nodes} nodes exceeds the limit {config.MAX_TREE_NODES}")
    lp, nodes = _tree_lp(inst, x_start, horizon, roots)
    if emit is not None:
        write_lp(lp, emit)
    sol = solve_lp(lp, "highs")
    if sol.status is not LpStatus.OPTIMAL:
        raise NumericalFailure(f"extensive LP over {nodes} nodes is {sol.status.value}")
    lam = inst.discount
    v_min, v_max = min(inst.cost_lo[1:]), max(inst.cost_hi[1:])
    value = sol.objective_value + lam ** horizon * v_min / (1.0 - lam)
    bound = lam ** horizon * (v_max - v_min) / (1.0 - lam)
    logger.debug(f"oracle H={horizon} nodes={nodes} value={value:.12g} bound={bound:.3g}")
    return OracleReport(value=value, error_bound=bound, horizon=horizon, nodes=nodes)


def oracle_value(inst: StationaryInstance, H: int, emit=None) -> OracleReport:
    """Optimal value of the first H stages plus the tail shift; H = 0 is read as 1."""
    return _solve_tree(inst, inst.x0, max(H, 1), [0], emit)


def oracle_cost_to_go(inst: StationaryInstance, x, H: int) -> OracleReport:
    """Cost-to-go V(x) averaged over scenarios 1..N, truncated after H stages."""
    return _solve_tree(inst, inst.check_in_box(x), max(H, 1), list(range(1, inst.N + 1)))

"""
End-to-end solver runs. They take minutes, so they only run with RUN_SLOW=1.
"""
import numpy as np
import pytest

from dualdp.models.cut_model import evaluate
from dualdp.models.problem_model import PiecewiseLinearCost, StageBlock, TwoStageLowerLevel
from dualdp.schemas.schemas import ReservoirParams, RunConfig
from dualdp.services import benchmarks
from dualdp.services.ddp_engine import run_eddp, run_eddp_fast, run_eddp_lu, run_sddp
from dualdp.services.exceptions import MaxIters
from dualdp.services.hddp import HierarchicalInstance, extensive_form, lp_bounds, run_hddp
from dualdp.services.pdsa import SaddleProblem, default_params, estimate_gaps, run_pdsa


pytestmark = pytest.mark.slow

RUNNERS = {"eddp": run_eddp, "eddp_fast": run_eddp_fast, "eddp_lu": run_eddp_lu}


def finished(run, *args):
    """Result of a run, or the partial result when it stopped at max_iters."""
    try:
        return run(*args)
    except MaxIters as exc:
        return exc.result


# --- Acceptance tests on the chain ---

@pytest.mark.parametrize("algo", sorted(RUNNERS))
def test_deterministic_variants_meet_the_oracle(chain, algo):
    report = benchmarks.oracle_value(chain, 30)
    result = RUNNERS[algo](chain, RunConfig(T=6, epsilon=0.05))
    last = result.records[-1]

    assert result.status == "converged"
    assert result.lb_root <= report.value + report.error_bound + 1e-8
    assert report.value - result.lb_root <= last.eps0 + report.error_bound + 1e-8


def test_sddp_meets_the_oracle(chain):
    report = benchmarks.oracle_value(chain, 30)
    result = run_sddp(chain, RunConfig(algo="sddp", seed=11, max_iters=1000))

    assert result.lb_root <= report.value + report.error_bound + 1e-8
    assert report.value - result.lb_root <= 1e-3


# --- Acceptance tests on random instances ---

@pytest.mark.parametrize("seed", range(5))
def test_cut_model_underestimates_cost_to_go(make_random_instance, seed):
    """
    Every learned cut model stays below the truncated cost-to-go at sampled states.
    """
    inst = make_random_instance(seed)
    result = run_eddp_fast(inst, RunConfig(T=4, epsilon=0.2))
    rng = np.random.default_rng(seed)

    for x in rng.uniform(inst.lower, inst.upper, size=(5, inst.n)):
        report = benchmarks.oracle_cost_to_go(inst, x, 6)
        assert evaluate(result.lower, x) <= report.value + report.error_bound + 1e-7


@pytest.mark.parametrize("seed", range(3))
def test_fast_and_plain_agree_within_bound(make_random_instance, seed):
    inst = make_random_instance(100 + seed)
    cfg = RunConfig(T=4, epsilon=0.2)
    fast, plain = run_eddp_fast(inst, cfg), run_eddp(inst, cfg)

    assert abs(fast.lb_root - plain.lb_root) <= max(fast.records[-1].eps0, plain.records[-1].eps0) + 1e-8


# --- Acceptance tests on the reservoir ---

def test_reservoir_fast_run_dominates_sddp():
    inst = benchmarks.gen_reservoir(ReservoirParams(num_reservoirs=1, num_scenarios=10, discount=0.9), seed=7)
    fast = run_eddp_fast(inst, RunConfig(T=6, epsilon=1.0))
    sddp = run_sddp(inst, RunConfig(algo="sddp", seed=7, max_iters=300))
    bounds = [r.lb_root for r in fast.records]

    assert fast.status == "converged"
    assert all(b >= a - 1e-9 for a, b in zip(bounds, bounds[1:]))
    assert sddp.lb_root <= fast.lb_root + fast.records[-1].eps0 + 1e-6


def test_workers_give_identical_traces():
    inst = benchmarks.gen_reservoir(ReservoirParams(num_reservoirs=2, num_scenarios=4, discount=0.8), seed=3)
    cfg = RunConfig(T=4, epsilon=2.0, max_iters=30)

    serial = finished(run_eddp_fast, inst, cfg.model_copy(update={"workers": 1}))
    parallel = finished(run_eddp_fast, inst, cfg.model_copy(update={"workers": 3}))

    assert [r.model_dump(exclude={"wall_ms"}) for r in serial.records] == \
           [r.model_dump(exclude={"wall_ms"}) for r in parallel.records]


# --- Acceptance tests for hierarchical runs ---

def test_hddp_on_free_lower_level_tracks_fast_run(chain, chain_hierarchy):
    cfg = RunConfig(algo="hddp", seed=2, T=6, epsilon=0.05, max_iters=200, eps_lo=0.02, pdsa_max_iters=1000)
    hddp = finished(run_hddp, chain_hierarchy, cfg)
    fast = run_eddp_fast(chain, RunConfig(T=6, epsilon=0.05))

    assert abs(hddp.lb_root - fast.lb_root) <= 2 * cfg.eps_lo


def noisy_hierarchy(top) -> HierarchicalInstance:
    """z1 in [0, 1] feeds two equally likely second stages worth +0.5 z1 and -0.5 z1."""
    first = StageBlock(A=[[1.0]], B=np.zeros((1, top.n)), b=[0.0], is_equality=[False],
                       cost=PiecewiseLinearCost.zero(1), lower=[0.0], upper=[1.0])
    seconds = tuple(
        StageBlock(A=[[1.0]], B=[[s]], b=[0.0], is_equality=[False], cost=PiecewiseLinearCost.linear([1.0]),
                   lower=[-1.0], upper=[1.0])
        for s in (0.5, -0.5)
    )
    return HierarchicalInstance(top=top, lower=TwoStageLowerLevel(first=(first,), second_samples=seconds),
                                eps_lo=0.2, rho=0.1, eps0=1.0, G_bar=0.5)


def test_hddp_constraint_slack_holds_with_stated_confidence(chain):
    """
    Over 20 seeds the per-iteration worst eps_c stays within eps_lo in at least a 1 - rho share.
    """
    hinst = noisy_hierarchy(chain)
    slacks = []
    for seed in range(20):
        cfg = RunConfig(algo="hddp", seed=seed, T=4, epsilon=0.25, max_iters=2, pdsa_max_iters=10000, workers=1)
        slacks += [r.eps_c_max for r in finished(run_hddp, hinst, cfg).records]

    within = sum(slack <= hinst.eps_lo for slack in slacks)
    assert slacks
    assert within >= (1.0 - hinst.rho) * len(slacks)


def test_hddp_workers_are_reproducible(chain_hierarchy):
    cfg = RunConfig(algo="hddp", seed=4, T=4, epsilon=0.1, max_iters=3, pdsa_max_iters=50)

    serial = finished(run_hddp, chain_hierarchy, cfg.model_copy(update={"workers": 1}))
    parallel = finished(run_hddp, chain_hierarchy, cfg.model_copy(update={"workers": 2}))

    assert [r.model_dump(exclude={"wall_ms"}) for r in serial.records] == \
           [r.model_dump(exclude={"wall_ms"}) for r in parallel.records]


def test_micro_dispatch_gap(small_dispatch):
    """
    Exact fast EDDP on the extensive dispatch model closes the LP-evaluated gap.
    """
    extensive = extensive_form(small_dispatch)
    result = finished(run_eddp_fast, extensive, RunConfig(T=6, epsilon=0.5, max_iters=500))
    lb, ub = lp_bounds(small_dispatch, result.lower, horizon=40, rollouts=20, seed=1, extensive=extensive)

    assert lb <= ub + 1e-6
    assert ub - lb <= max(0.05 * abs(ub), result.reported_bound)


# --- Acceptance tests for PDSA ---

def noisy_saddle() -> SaddleProblem:
    """min x on [0, 1] with x >= 0.5 dualized and a zero-mean second stage +-0.5 x; saddle at (0.5, 1)."""
    def oracle(x, j):
        slope = 0.5 if j == 0 else -0.5
        return slope * float(x[0]), np.array([slope])

    return SaddleProblem(W=[[1.0]], U=np.zeros((1, 0)), q=[0.5], u=np.zeros(0),
                         f=PiecewiseLinearCost.linear([1.0]), dual_free=[False], lower=[0.0], upper=[1.0],
                         second_stage=oracle, num_samples=2, G_bar=0.5)


def test_pdsa_averages_converge_with_more_steps():
    sp = noisy_saddle()
    points = np.linspace(0.0, 1.0, 21)[:, None]
    medians = {}
    for N in (250, 1000, 4000):
        certs = [run_pdsa(sp, default_params(sp, N=N), seed=seed) for seed in range(20)]
        medians[N] = {
            "x": float(np.median([abs(c.x_bar[0] - 0.5) for c in certs])),
            "delta": float(np.median([np.linalg.norm(c.delta) for c in certs])),
            "gap": float(np.median([estimate_gaps(sp, c, points, y_star=[1.0])[0] for c in certs])),
        }

    for key in ("x", "delta"):
        assert medians[4000][key] <= 0.02
        assert medians[4000][key] <= 0.5 * medians[250][key]
    assert medians[250]["gap"] >= medians[1000]["gap"] >= medians[4000]["gap"]
    assert medians[4000]["gap"] <= 0.5 * medians[250]["gap"]

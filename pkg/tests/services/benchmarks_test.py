import numpy as np
import pytest
from pydantic import ValidationError

from dualdp import config
from dualdp.schemas.schemas import EdParams, ReservoirParams
from dualdp.services import benchmarks
from dualdp.services.exceptions import TreeTooLarge
from dualdp.services.lp_solver import solve_lp
from dualdp.storage import read_lp


# --- Unit test for the generators ---

def test_chain_fields(chain):
    assert chain.n == 1
    assert chain.N == 1
    assert chain.discount == 0.5
    np.testing.assert_allclose(chain.x0, [1.0])
    assert chain.name == "chain"


def test_reservoir_is_reproducible():
    params = ReservoirParams(num_reservoirs=2, num_scenarios=4)
    first = benchmarks.gen_reservoir(params, seed=5)
    second = benchmarks.gen_reservoir(params, seed=5)
    other = benchmarks.gen_reservoir(params, seed=6)

    for a, b in zip(first.scenarios, second.scenarios):
        np.testing.assert_array_equal(a.b, b.b)
    assert any(not np.array_equal(a.b, c.b) for a, c in zip(first.scenarios, other.scenarios))


def test_reservoir_shapes(small_reservoir):
    assert small_reservoir.n == 1
    assert small_reservoir.N == 2
    assert small_reservoir.has_local
    assert all(s.n_local == 3 for s in small_reservoir.all_scenarios)


def test_dispatch_shapes():
    """
    Two regions, three generators, four samples: top state (b, u) of size 4, first stage
    (g, s, h^1..h^4) of size 3 + 2 + 8 and a scalar mismatch per sample.
    """
    hinst = benchmarks.gen_ed(EdParams(generators=3, regions=2, N1=3, N2=4), seed=2)

    assert hinst.top.n == 4
    assert hinst.N1 == 3
    assert hinst.N2 == 4
    assert len(hinst.lower.first) == 4
    assert hinst.lower.n1 == 13
    assert all(block.dim == 1 for block in hinst.lower.second_samples)
    assert hinst.G_bar > 0


def test_dispatch_supply_enters_balance_at_sample_weight():
    hinst = benchmarks.gen_ed(EdParams(generators=3, regions=2, N1=3, N2=4), seed=2)
    first = hinst.lower.first[1]

    np.testing.assert_allclose(first.A[:, 5:], np.tile(-np.eye(2) / 4, (1, 4)))
    for j, block in enumerate(hinst.lower.second_samples):
        touched = np.flatnonzero(np.abs(block.B).sum(axis=0))
        np.testing.assert_array_equal(touched, 5 + 2 * j + np.arange(2))


def test_dispatch_rejects_loose_lower_accuracy():
    with pytest.raises(ValidationError):
        EdParams(eps_lo=2.0, eps0=1.0)


def test_marginal_prices_are_bounded(small_dispatch):
    prices = benchmarks.marginal_prices(small_dispatch, 1, small_dispatch.top.x0)

    assert prices.shape == (1,)
    assert (prices >= -1e-7).all()
    assert (prices <= EdParams().penalty + 1e-7).all()


def test_interior_generation_clears_at_generator_cost():
    """
    Demand at most 6 plus an average supply of at most 2 stays below the generator cap of 10.
    """
    params = EdParams(generators=1, regions=1, N1=2, N2=2, demand_range=(5.0, 6.0), hospital_demand_range=(1.0, 2.0))
    hinst = benchmarks.gen_ed(params, seed=4)
    cost = hinst.lower.first[1].cost.gradients[0][0]

    prices = benchmarks.marginal_prices(hinst, 1, hinst.top.x0)

    assert prices[0] == pytest.approx(cost, abs=1e-6)


def test_scarce_region_clears_at_penalty():
    params = EdParams(generators=1, regions=1, N1=2, N2=2, generator_bounds=(0.0, 1.0), demand_range=(5.0, 6.0),
                      hospital_demand_range=(1.0, 2.0))
    hinst = benchmarks.gen_ed(params, seed=4)

    prices = benchmarks.marginal_prices(hinst, 2, hinst.top.x0)

    assert prices[0] == pytest.approx(params.penalty, abs=1e-6)


def test_dispatch_bound_is_penalty_times_alpha_norm():
    hinst = benchmarks.gen_ed(EdParams(generators=3, regions=2, N1=3, N2=4), seed=2)
    alpha = -hinst.lower.second_samples[0].B[0, 5:7]

    assert alpha[0] == 1.0
    assert hinst.G_bar == pytest.approx(EdParams().penalty * np.linalg.norm(alpha))


# --- Unit test for oracle_value ---

def test_chain_oracle_within_bound(chain):
    """
    F_20 = (2/3)(1 - 0.25^20) and the tail bound is 0.5^20 * 1 / 0.5.
    """
    report = benchmarks.oracle_value(chain, 20)

    assert report.error_bound == pytest.approx(2 * 0.5 ** 20)
    assert abs(report.value - 2.0 / 3.0) <= report.error_bound
    assert report.nodes == 20


def test_zero_horizon_reads_as_one(chain):
    report = benchmarks.oracle_value(chain, 0)

    assert report.horizon == 1
    assert report.value == pytest.approx(0.5)
    assert report.error_bound == pytest.approx(1.0)


def test_tree_node_count(mirrored_chain):
    assert benchmarks.oracle_value(mirrored_chain, 10).nodes == 1023


def test_tree_limit(mirrored_chain, mocker):
    mocker.patch.object(config, "MAX_TREE_NODES", 10)

    with pytest.raises(TreeTooLarge):
        benchmarks.oracle_value(mirrored_chain, 10)


def test_longer_horizons_stay_consistent(make_random_instance):
    inst = make_random_instance(3, N=2)
    short, long = benchmarks.oracle_value(inst, 5), benchmarks.oracle_value(inst, 8)

    assert abs(short.value - long.value) <= short.error_bound + long.error_bound + 1e-7
    assert long.error_bound < short.error_bound


def test_identical_scenarios_do_not_change_the_value():
    """
    With no inflow spread every scenario is the same, so N = 2 and N = 1 agree.
    """
    one = benchmarks.gen_reservoir(ReservoirParams(num_reservoirs=1, num_scenarios=1, inflow_spread=0.0,
                                                   discount=0.5), seed=1)
    two = benchmarks.gen_reservoir(ReservoirParams(num_reservoirs=1, num_scenarios=2, inflow_spread=0.0,
                                                   discount=0.5), seed=1)

    assert benchmarks.oracle_value(two, 4).value == pytest.approx(benchmarks.oracle_value(one, 4).value, abs=1e-7)


# --- Unit test for oracle_cost_to_go ---

def test_chain_cost_to_go(chain):
    report = benchmarks.oracle_cost_to_go(chain, [1.0], 20)

    assert abs(report.value - 2.0 / 3.0) <= report.error_bound


def test_cost_to_go_is_linear_on_chain(chain):
    half = benchmarks.oracle_cost_to_go(chain, [0.5], 20)

    assert half.value == pytest.approx(1.0 / 3.0, abs=half.error_bound)


# --- Unit test for the emitted tree LP ---

def test_emitted_lp_solves_to_the_same_value(tmp_path, chain):
    path = tmp_path / "tree.lp"
    report = benchmarks.oracle_value(chain, 5, emit=path)

    lp = read_lp(path)
    assert lp.n_vars == 5 * 2
    assert solve_lp(lp, "highs").objective_value == pytest.approx(report.value)

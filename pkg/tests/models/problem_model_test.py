import numpy as np
import pytest

from dualdp.models.problem_model import (
    PiecewiseLinearCost,
    Scenario,
    build_instance,
    load_instance,
    stage_feasible_set,
)
from dualdp.services.exceptions import DimensionError, InfeasibleRoot, OutOfDomain
from tests.conftest import chain_row


# --- Unit test for instance construction ---

def test_chain_instance_fields(chain):
    """
    The chain instance exposes its dimension, scenario count and domain length.
    """
    assert chain.n == 1
    assert chain.N == 1
    assert chain.discount == 0.5
    assert chain.D == pytest.approx(1.0)
    assert chain.M_h == pytest.approx(1.0)
    assert chain.cost_span == pytest.approx(chain.M_h * chain.D)


def test_lipschitz_constant_is_largest_piece_norm():
    """
    M_h equals the largest Euclidean norm over the cost pieces.
    """
    cost = PiecewiseLinearCost(np.array([[3.0, 4.0], [1.0, 0.0]]), np.array([0.0, 2.0]))
    row = Scenario(A=np.eye(2), B=np.zeros((2, 2)), b=np.zeros(2), is_equality=[False, False], cost=cost)
    inst = build_instance(np.zeros(2), np.ones(2), np.zeros(2), row, [row], 0.9)

    assert inst.M_h == pytest.approx(5.0)
    assert cost.lipschitz == pytest.approx(max(np.linalg.norm(g) for g in cost.gradients))


def test_wrong_coupling_shape_raises():
    """
    A coupling matrix with the wrong column count is rejected.
    """
    with pytest.raises(DimensionError):
        Scenario(A=[[1.0]], B=[[0.5, 1.0]], b=[0.0], is_equality=[False], cost=PiecewiseLinearCost.linear([1.0]))


def test_infeasible_root_raises():
    """
    A first stage that cannot be met inside the box is caught at construction.
    """
    row = Scenario(A=[[1.0]], B=[[0.0]], b=[2.0], is_equality=[False], cost=PiecewiseLinearCost.linear([1.0]))

    with pytest.raises(InfeasibleRoot):
        build_instance([0.0], [1.0], [1.0], row, [chain_row()], 0.5)


@pytest.mark.parametrize("discount", [0.0, 1.0, 1.5])
def test_discount_outside_unit_interval_raises(discount):
    """
    The discount factor must lie strictly between 0 and 1.
    """
    with pytest.raises(ValueError):
        build_instance([0.0], [1.0], [1.0], chain_row(), [chain_row()], discount)


def test_empty_scenario_list_raises():
    """
    At least one scenario beyond the first stage is needed.
    """
    with pytest.raises(ValueError):
        build_instance([0.0], [1.0], [1.0], chain_row(), [], 0.5)


# --- Unit test for stage_feasible_set ---

def test_chain_stage_set_at_one(chain):
    """
    At x_prev = 1 the chain has the single row x >= 0.5 over [0, 1].
    """
    block = stage_feasible_set(chain, 1, [1.0])

    np.testing.assert_allclose(block.matrix, [[1.0]])
    np.testing.assert_allclose(block.rhs, [0.5])
    assert not block.is_equality.any()
    np.testing.assert_allclose(block.lower, [0.0])
    np.testing.assert_allclose(block.upper, [1.0])


def test_stage_set_without_functional_rows(chain):
    """
    With no functional rows only the scenario rows appear.
    """
    block = stage_feasible_set(chain, 1, [0.3])

    assert block.n_rows == chain.scenario(1).m


def test_scenario_zero_uses_first_stage_data():
    """
    Index 0 reads the first-stage data, not a sampled scenario.
    """
    inst = build_instance([0.0], [1.0], [1.0], chain_row(offset=0.2), [chain_row()], 0.5)

    assert stage_feasible_set(inst, 0, [1.0]).rhs[0] == pytest.approx(0.7)
    assert stage_feasible_set(inst, 1, [1.0]).rhs[0] == pytest.approx(0.5)


def test_functional_rows_enter_in_geq_form():
    """
    R x <= Q x_prev - r is stored as -R x >= -Q x_prev + r.
    """
    row = Scenario(A=[[1.0]], B=[[0.5]], b=[0.0], is_equality=[False], cost=PiecewiseLinearCost.linear([1.0]),
                   Q=[[1.0]], R=[[1.0]], r=[0.0])
    inst = build_instance([0.0], [1.0], [1.0], row, [row], 0.5)
    block = stage_feasible_set(inst, 1, [0.8])

    np.testing.assert_allclose(block.matrix, [[1.0], [-1.0]])
    np.testing.assert_allclose(block.rhs, [0.4, -0.8])
    np.testing.assert_allclose(block.coupling, [[0.5], [-1.0]])


def test_blocks_differ_only_by_coupling_shift(make_random_instance):
    """
    Two previous states change only the right-hand side, by coupling @ (x_prev - x_prev').
    """
    inst = make_random_instance(5, n=2, N=2)
    rng = np.random.default_rng(0)
    for index in range(inst.N + 1):
        a, b = rng.uniform(0, 1, size=2), rng.uniform(0, 1, size=2)
        first, second = stage_feasible_set(inst, index, a), stage_feasible_set(inst, index, b)

        np.testing.assert_allclose(first.matrix, second.matrix)
        np.testing.assert_allclose(first.rhs - second.rhs, first.coupling @ (a - b), atol=1e-12)


def test_out_of_box_previous_state_raises(chain):
    with pytest.raises(OutOfDomain):
        stage_feasible_set(chain, 1, [1.5])


def test_scenario_index_past_end_raises(chain):
    with pytest.raises(IndexError):
        stage_feasible_set(chain, 2, [1.0])


# --- Unit test for piecewise-linear costs ---

def test_box_extremes_of_absolute_value():
    """
    max(x, -x) over [-1, 1] ranges from 0 to 1.
    """
    cost = PiecewiseLinearCost(np.array([[1.0], [-1.0]]), np.zeros(2))

    assert cost.box_min(np.array([-1.0]), np.array([1.0])) == pytest.approx(0.0, abs=1e-9)
    assert cost.box_max(np.array([-1.0]), np.array([1.0])) == pytest.approx(1.0)
    assert cost.evaluate([-0.25]) == pytest.approx(0.25)
    np.testing.assert_allclose(cost.subgradient([-0.25]), [-1.0])


def test_cost_needs_matching_offsets():
    with pytest.raises(DimensionError):
        PiecewiseLinearCost(np.array([[1.0], [2.0]]), np.array([0.0]))


# --- Unit test for load_instance ---

def test_load_chain_file(chain_file):
    inst = load_instance(chain_file)

    assert inst.name == "chain"
    assert inst.D == pytest.approx(1.0)
    assert inst.cost_lo == (0.0, 0.0)

import numpy as np
import pytest

from dualdp.models.cut_model import LowerModel, add_averaged_cut, epigraph_block, evaluate, init_lower
from dualdp.models.problem_model import PiecewiseLinearCost, build_instance
from dualdp.services.exceptions import LengthMismatch
from dualdp.services.lp_solver import LpProblem, solve_lp
from tests.conftest import chain_row


# --- Unit test for init_lower ---

def test_chain_initial_bound_is_zero(chain):
    """
    min of x over [0, 1] is 0, so v0 = 0.
    """
    assert init_lower(chain).v0 == pytest.approx(0.0)


def test_constant_cost_initial_bound():
    """
    A constant stage cost k gives v0 = k / (1 - discount).
    """
    row = chain_row(cost=PiecewiseLinearCost.linear([0.0], 3.0))
    inst = build_instance([0.0], [1.0], [1.0], row, [row], 0.5)

    assert init_lower(inst).v0 == pytest.approx(6.0)


def test_initial_bound_averages_scenario_minima():
    """
    Scenario minima 1 and 3 at discount 0.5 give v0 = 4 / (2 * 0.5) = 4.
    """
    one = chain_row(cost=PiecewiseLinearCost.linear([0.0], 1.0))
    three = chain_row(cost=PiecewiseLinearCost.linear([0.0], 3.0))
    inst = build_instance([0.0], [1.0], [1.0], chain_row(), [one, three], 0.5)

    assert init_lower(inst).v0 == pytest.approx(4.0)


# --- Unit test for evaluate and add_averaged_cut ---

def test_evaluate_without_cuts_returns_v0():
    model = LowerModel(v0=1.5, n=2)

    assert evaluate(model, [0.3, 0.7]) == 1.5


def test_single_cut_evaluation():
    """
    Cut 1 + 2 (x - 0) at x = 3 evaluates to 7.
    """
    model = LowerModel(v0=0.0, n=1)
    add_averaged_cut(model, [1.0], [[2.0]], [0.0])

    assert evaluate(model, [3.0]) == pytest.approx(7.0)


def test_chain_cut_is_half_x():
    """
    Value 0.5 and subgradient 0.5 at anchor 1 give the cut 0.5 x.
    """
    model = LowerModel(v0=0.0, n=1)
    cut = add_averaged_cut(model, [0.5], [[0.5]], [1.0])

    for x in (0.2, 0.6, 1.0):
        assert cut([x]) == pytest.approx(0.5 * x)
    assert evaluate(model, [0.4]) == pytest.approx(0.2)


def test_cut_averages_over_scenarios():
    model = LowerModel(v0=0.0, n=1)
    cut = add_averaged_cut(model, [1.0, 3.0], [[1.0], [3.0]], [0.0])

    assert cut.intercept == pytest.approx(2.0)
    np.testing.assert_allclose(cut.gradient, [2.0])
    assert cut.iteration == 1


def test_exact_cut_is_tight_at_anchor():
    model = LowerModel(v0=-10.0, n=2)
    add_averaged_cut(model, [2.5], [[1.0, -1.0]], [0.4, 0.6])

    assert evaluate(model, [0.4, 0.6]) >= 2.5 - 1e-9


def test_slack_lowers_the_cut():
    """
    An inexact cut is shifted down by its slack correction.
    """
    model = LowerModel(v0=-10.0, n=1)
    add_averaged_cut(model, [2.0], [[0.0]], [0.0], slack=0.25)

    assert evaluate(model, [0.5]) == pytest.approx(1.75)


def test_mismatched_lengths_raise():
    model = LowerModel(v0=0.0, n=1)

    with pytest.raises(LengthMismatch):
        add_averaged_cut(model, [1.0, 2.0], [[1.0]], [0.0])
    with pytest.raises(LengthMismatch):
        add_averaged_cut(model, [1.0], [[1.0, 2.0]], [0.0])


def test_adding_cuts_never_lowers_the_model():
    """
    Over random box points the model after each append is at least the model before.
    """
    rng = np.random.default_rng(42)
    model = LowerModel(v0=0.0, n=2)
    points = rng.uniform(0.0, 1.0, size=(1000, 2))
    before = np.array([evaluate(model, x) for x in points])
    for _ in range(10):
        add_averaged_cut(model, rng.uniform(-1, 2, size=3), rng.normal(size=(3, 2)), rng.uniform(0, 1, size=2))
        after = np.array([evaluate(model, x) for x in points])
        assert (after >= before - 1e-12).all()
        before = after


# --- Unit test for epigraph_block ---

def test_empty_model_epigraph_has_one_row():
    block = epigraph_block(LowerModel(v0=0.5, n=2))

    assert block.n_rows == 1
    np.testing.assert_allclose(block.matrix, [[0.0, 0.0, 1.0]])
    np.testing.assert_allclose(block.rhs, [0.5])


def test_epigraph_minimum_matches_evaluate():
    """
    Minimizing theta over the epigraph rows at a fixed x reproduces evaluate.
    """
    rng = np.random.default_rng(7)
    model = LowerModel(v0=0.0, n=2)
    for _ in range(4):
        add_averaged_cut(model, rng.uniform(0, 2, size=2), rng.normal(size=(2, 2)), rng.uniform(0, 1, size=2))
    block = epigraph_block(model)
    assert block.n_rows == len(model) + 1

    for x in rng.uniform(0, 1, size=(5, 2)):
        lp = LpProblem.build([0.0, 0.0, 1.0], geq=(block.matrix, block.rhs),
                             lower=np.concatenate([x, [-np.inf]]), upper=np.concatenate([x, [np.inf]]))
        assert solve_lp(lp).objective_value == pytest.approx(evaluate(model, x), abs=1e-8)


def test_cut_frame_lists_every_cut():
    model = LowerModel(v0=0.0, n=1)
    add_averaged_cut(model, [0.5], [[0.5]], [1.0], iteration=3)
    frame = model.to_frame()

    assert list(frame.columns) == ["iteration", "intercept", "slack", "g0", "a0"]
    assert frame.iloc[0]["iteration"] == 3

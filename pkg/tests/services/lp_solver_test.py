import numpy as np
import pytest
from scipy import sparse

from dualdp.services.exceptions import DimensionError, StatusError
from dualdp.services.lp_solver import LpProblem, LpStatus, parametric_dual, solution_residuals, solve_lp


METHODS = ["simplex", "highs"]


def random_lp(rng, rows: int = 5, cols: int = 8) -> LpProblem:
    """Rows A x >= b with nonnegative A over the box [0, 5]; x = 5 is always feasible."""
    A = rng.uniform(0.1, 1.0, size=(rows, cols))
    b = rng.uniform(0.0, 2.0, size=rows)
    c = rng.uniform(-1.0, 1.0, size=cols)
    return LpProblem.build(c, geq=(A, b), lower=np.zeros(cols), upper=np.full(cols, 5.0))


# --- Unit test for solve_lp ---

@pytest.mark.parametrize("method", METHODS)
def test_one_variable_lp(method):
    """
    min x s.t. x >= 1 on [0, 10]: x = 1, value 1, row dual 1.
    """
    lp = LpProblem.build([1.0], geq=([[1.0]], [1.0]), lower=[0.0], upper=[10.0])
    sol = solve_lp(lp, method)

    assert sol.status is LpStatus.OPTIMAL
    assert sol.x[0] == pytest.approx(1.0)
    assert sol.objective_value == pytest.approx(1.0)
    assert sol.duals[0] == pytest.approx(1.0)


@pytest.mark.parametrize("method", METHODS)
def test_contradictory_rows_are_infeasible(method):
    """
    x >= 2 together with x <= 1 has no solution.
    """
    lp = LpProblem.build([1.0], geq=([[1.0], [-1.0]], [2.0, -1.0]))

    assert solve_lp(lp, method).status is LpStatus.INFEASIBLE


@pytest.mark.parametrize("method", METHODS)
def test_two_variable_lp_dual(method):
    """
    min -x - y s.t. -x - y >= -1 with x, y >= 0: value -1, row dual 1.
    """
    lp = LpProblem.build([-1.0, -1.0], geq=([[-1.0, -1.0]], [-1.0]))
    sol = solve_lp(lp, method)

    assert sol.optimal
    assert sol.objective_value == pytest.approx(-1.0)
    assert sol.x.sum() == pytest.approx(1.0)
    assert sol.duals[0] == pytest.approx(1.0)


@pytest.mark.parametrize("method", METHODS)
def test_equality_row_dual(method):
    """
    min x + 2y s.t. x + y = 1: the equality dual is the marginal cost 1.
    """
    lp = LpProblem.build([1.0, 2.0], eq=([[1.0, 1.0]], [1.0]))
    sol = solve_lp(lp, method)

    assert sol.objective_value == pytest.approx(1.0)
    assert sol.duals[0] == pytest.approx(1.0)


@pytest.mark.parametrize("method", METHODS)
def test_unbounded_lp(method):
    lp = LpProblem.build([-1.0], geq=([[1.0]], [0.0]))

    assert solve_lp(lp, method).status is LpStatus.UNBOUNDED


@pytest.mark.parametrize("method", METHODS)
def test_certificates_on_random_lps(method):
    """
    Optimal solves satisfy primal feasibility, complementarity and strong duality.
    """
    rng = np.random.default_rng(2024)
    for _ in range(25):
        lp = random_lp(rng)
        sol = solve_lp(lp, method)
        assert sol.optimal
        residuals = solution_residuals(lp, sol)
        scale = 1.0 + abs(sol.objective_value)
        assert residuals["primal_residual"] <= 1e-7
        assert residuals["complementarity"] <= 1e-6 * scale
        assert residuals["duality_gap"] <= 1e-6 * scale


def test_backends_agree_on_random_lps():
    """
    The in-house simplex and HiGHS reach the same optimal value on 100 random 5 x 8 LPs.
    """
    rng = np.random.default_rng(99)
    for _ in range(100):
        lp = random_lp(rng)
        ours, reference = solve_lp(lp, "simplex"), solve_lp(lp, "highs")
        assert ours.objective_value == pytest.approx(reference.objective_value, abs=1e-7)


@pytest.mark.parametrize("method", METHODS)
def test_value_function_is_convex_in_rhs(method):
    rng = np.random.default_rng(5)
    A = rng.uniform(0.1, 1.0, size=(4, 6))
    c = rng.uniform(0.1, 1.0, size=6)
    for _ in range(20):
        b1, b2 = rng.uniform(0, 2, size=4), rng.uniform(0, 2, size=4)

        def value(b):
            return solve_lp(LpProblem.build(c, geq=(A, b), upper=np.full(6, 5.0)), method).objective_value

        assert value((b1 + b2) / 2) <= (value(b1) + value(b2)) / 2 + 1e-6


def test_sparse_rows_with_highs():
    lp = LpProblem.build([1.0, 1.0], geq=(sparse.csr_matrix([[1.0, 0.0], [0.0, 1.0]]), [0.5, 0.25]),
                         upper=[1.0, 1.0])

    assert solve_lp(lp, "highs").objective_value == pytest.approx(0.75)


def test_solve_is_deterministic():
    lp = random_lp(np.random.default_rng(3))
    first, second = solve_lp(lp, "simplex"), solve_lp(lp, "simplex")

    np.testing.assert_array_equal(first.x, second.x)
    np.testing.assert_array_equal(first.duals, second.duals)


def test_unknown_method_raises():
    with pytest.raises(ValueError):
        solve_lp(LpProblem.build([1.0]), "interior")


def test_malformed_problems_raise():
    with pytest.raises(DimensionError):
        LpProblem.build([1.0, 1.0], geq=([[1.0]], [1.0]))
    with pytest.raises(ValueError):
        LpProblem.build([np.nan])


# --- Unit test for parametric_dual ---

@pytest.mark.parametrize("method", METHODS)
def test_chain_rhs_derivative(method):
    """
    Row x >= 0.5 x_prev at x_prev = 1: d value / d x_prev = dual * 0.5 = 0.5.
    """
    lp = LpProblem.build([1.0], geq=([[1.0]], [0.5]), lower=[0.0], upper=[1.0])
    sol = solve_lp(lp, method)

    assert parametric_dual(lp, sol, [0.5]) == pytest.approx(0.5)
    assert parametric_dual(lp, sol, [0.0]) == 0.0
    assert parametric_dual(lp, sol, [1.0]) == pytest.approx(2 * parametric_dual(lp, sol, [0.5]))


def test_parametric_dual_needs_optimal():
    lp = LpProblem.build([1.0], geq=([[1.0], [-1.0]], [2.0, -1.0]))
    sol = solve_lp(lp, "highs")

    with pytest.raises(StatusError):
        parametric_dual(lp, sol, [1.0, 0.0])


def test_direction_length_is_checked():
    lp = LpProblem.build([1.0], geq=([[1.0]], [0.5]), upper=[1.0])
    sol = solve_lp(lp, "highs")

    with pytest.raises(DimensionError):
        parametric_dual(lp, sol, [1.0, 1.0])

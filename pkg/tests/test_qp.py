import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from momineq.exceptions import Infeasible, NotPositiveDefinite, ShapeMismatch
from momineq.qp import QpProblem, dual_objective, kkt_residuals, solve_projection
from oracles import branch_and_bound_T, random_feasible_qp


def solve(pbar, Sigma, A, rho, n):
    prob = QpProblem(np.asarray(pbar, float), np.asarray(Sigma, float), np.asarray(A, float),
                     np.asarray(rho, float), n)
    return prob, solve_projection(prob)


def test_interior_point_is_its_own_projection():
    _, sol = solve([-0.5], [[1.0]], [[1.0]], [0.0], 100)
    assert sol.T == 0.0
    assert np.allclose(sol.kappa_hat, [-0.5])
    assert sol.active_rows == ()


def test_half_line_projection():
    _, sol = solve([0.5], [[1.0]], [[1.0]], [0.0], 100)
    assert sol.T == pytest.approx(25.0, abs=1e-10)
    assert np.allclose(sol.kappa_hat, [0.0], atol=1e-12)
    assert sol.active_rows == (0,)


def test_orthant_projection():
    _, sol = solve([1.0, 1.0], np.eye(2), np.eye(2), [0.0, 0.0], 1)
    assert sol.T == pytest.approx(2.0, abs=1e-12)
    assert np.allclose(sol.kappa_hat, 0.0, atol=1e-12)
    assert sol.active_rows == (0, 1)


def test_redundant_and_duplicate_rows():
    A = np.array([[1.0, 0.0], [2.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    rho = np.array([0.0, 0.0, 0.0, 5.0])
    _, sol = solve([1.0, 0.0], np.eye(2), A, rho, 4)
    assert sol.T == pytest.approx(4.0, abs=1e-12)
    assert set(sol.active_rows) == {0, 1, 2}


def test_infeasible_constraints_detected():
    A = np.array([[1.0], [-1.0]])
    with pytest.raises(Infeasible):
        solve([3.0], [[1.0]], A, [-1.0, -1.0], 10)


def test_problem_validation():
    with pytest.raises(ShapeMismatch):
        QpProblem(np.zeros(2), np.eye(2), np.zeros((1, 3)), np.zeros(1), 5)
    with pytest.raises(NotPositiveDefinite):
        solve([1.0, 1.0], [[1.0, 2.0], [2.0, 1.0]], np.eye(2), [0.0, 0.0], 1)


def test_kkt_on_random_instances(rng):
    worst = {"stationarity": 0.0, "primal": 0.0, "dual": 0.0, "complementarity": 0.0}
    for _ in range(300):
        prob, sol = solve(*random_feasible_qp(rng))
        res = kkt_residuals(prob, sol)
        for k in worst:
            worst[k] = max(worst[k], res[k])
        # strong duality: the dual at the returned multipliers attains T
        assert dual_objective(prob, sol.multipliers) == pytest.approx(sol.T, abs=1e-8 * (1 + sol.T))
    assert worst["stationarity"] <= 1e-8
    assert worst["complementarity"] <= 1e-8
    assert worst["primal"] <= 1e-9
    assert worst["dual"] == 0.0


def test_matches_grid_refinement_in_two_dimensions(rng):
    for _ in range(25):
        pbar, S, A, rho, n = random_feasible_qp(rng, d=2, n=int(rng.integers(1, 50)))
        _, sol = solve(pbar, S, A, rho, n)
        assert sol.T == pytest.approx(branch_and_bound_T(pbar, S, A, rho, n, tol=1e-7), abs=1e-4)


def test_statistic_equals_mahalanobis_distance(rng):
    for _ in range(50):
        prob, sol = solve(*random_feasible_qp(rng))
        diff = prob.pbar - sol.kappa_hat
        T = prob.n * diff @ np.linalg.solve(prob.Sigma, diff)
        assert sol.T == pytest.approx(T, rel=1e-9, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10.0))
def test_row_rescaling_invariance(seed, c):
    r = np.random.default_rng(seed)
    pbar, S, A, rho, n = random_feasible_qp(r)
    _, s1 = solve(pbar, S, A, rho, n)
    A2, rho2 = A.copy(), rho.copy()
    A2[0] *= c
    rho2[0] *= c
    _, s2 = solve(pbar, S, A2, rho2, n)
    assert s2.T == pytest.approx(s1.T, rel=1e-8, abs=1e-9)
    assert np.allclose(s1.kappa_hat, s2.kappa_hat, atol=1e-7)
